//! Training objectives: scale-and-shift invariant depth loss, L1 depth loss,
//! their weighted blend, the domain-adversarial loss, the total objective and
//! the gradient-reversal layer.
//!
//! Scalar losses work on `f64` slices and come with analytic gradients
//! (`*_grad`). Batch helpers at the bottom bridge to the `f32` network tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Variance floor below which scale alignment is undefined.
pub const ALIGN_EPS: f64 = 1e-12;
/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// SSI weight.
    pub alpha: f64,
    /// L1 weight.
    pub beta: f64,
    /// Adversarial weight.
    pub gamma: f64,
    /// Gradient-reversal coefficient.
    pub grl_lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 100.0, gamma: 0.1, grl_lambda: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("grl_lambda", self.grl_lambda)]
        {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::ConfigInvalid(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Least-squares affine map taking a prediction onto the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentParams {
    pub scale: f64,
    pub shift: f64,
}

impl AlignmentParams {
    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.shift
    }
}

fn check_lengths(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<()> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "pred {}, gt {}, mask {} elements",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    Ok(())
}

fn masked<'a>(pred: &'a [f64], gt: &'a [f64], mask: &'a [bool]) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.iter().zip(gt).zip(mask).filter(|(_, &m)| m).map(|((&p, &g), _)| (p, g))
}

/// Closed-form `(s, t) = argmin Σ_mask (s·pred + t − gt)²`.
pub fn align_scale_shift(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<AlignmentParams> {
    check_lengths(pred, gt, mask)?;
    let n = mask.iter().filter(|&&m| m).count();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("alignment needs >= 2 masked pixels, got {n}")));
    }
    let nf = n as f64;
    let (sp, sg) = masked(pred, gt, mask).fold((0.0, 0.0), |(a, b), (p, g)| (a + p, b + g));
    let (mp, mg) = (sp / nf, sg / nf);
    let (var, cov) = masked(pred, gt, mask).fold((0.0, 0.0), |(v, c), (p, g)| {
        let dp = p - mp;
        (v + dp * dp, c + dp * (g - mg))
    });
    let (var, cov) = (var / nf, cov / nf);
    if !(var > ALIGN_EPS) {
        return Err(Error::DegenerateInput(format!("masked prediction variance {var:e} is not above {ALIGN_EPS:e}")));
    }
    let scale = cov / var;
    Ok(AlignmentParams { scale, shift: mg - scale * mp })
}

/// Mean squared residual after optimal scale-and-shift alignment.
pub fn ssi_loss(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    ssi_loss_grad(pred, gt, mask).map(|(l, _)| l)
}

/// SSI loss and its gradient with respect to `pred`.
///
/// The alignment is optimal, so its own derivative drops out and
/// `∂L/∂pred_i = 2·s·r_i / N` on masked pixels.
pub fn ssi_loss_grad(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    let a = align_scale_shift(pred, gt, mask)?;
    let n = mask.iter().filter(|&&m| m).count() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if mask[i] {
            let r = a.apply(pred[i]) - gt[i];
            loss += r * r;
            grad[i] = 2.0 * a.scale * r / n;
        }
    }
    Ok(((loss / n).max(0.0), grad))
}

pub fn l1_loss(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    l1_loss_grad(pred, gt, mask).map(|(l, _)| l)
}

/// Mean absolute error over the mask and its (sub)gradient; zero where `pred == gt`.
pub fn l1_loss_grad(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_lengths(pred, gt, mask)?;
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::DegenerateInput("l1 loss over an empty mask".into()));
    }
    let nf = n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred[i] - gt[i];
            loss += d.abs();
            grad[i] = if d > 0.0 {
                1.0 / nf
            } else if d < 0.0 {
                -1.0 / nf
            } else {
                0.0
            };
        }
    }
    Ok((loss / nf, grad))
}

/// Per-image depth loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DepthLossParts {
    pub ssi: f64,
    pub l1: f64,
    pub total: f64,
}

pub fn depth_loss(pred: &[f64], gt: &[f64], mask: &[bool], w: &LossWeights) -> Result<f64> {
    depth_loss_grad(pred, gt, mask, w).map(|(p, _)| p.total)
}

/// `α·SSI + β·L1` and its gradient with respect to `pred`.
pub fn depth_loss_grad(pred: &[f64], gt: &[f64], mask: &[bool], w: &LossWeights) -> Result<(DepthLossParts, Vec<f64>)> {
    let (ssi, g_ssi) = ssi_loss_grad(pred, gt, mask)?;
    let (l1, g_l1) = l1_loss_grad(pred, gt, mask)?;
    let grad = g_ssi.iter().zip(&g_l1).map(|(a, b)| w.alpha * a + w.beta * b).collect();
    Ok((DepthLossParts { ssi, l1, total: w.alpha * ssi + w.beta * l1 }, grad))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `−mean(log D(source)) − mean(log(1 − D(target)))`.
pub fn adversarial_loss(d_source: &[f64], d_target: &[f64]) -> Result<f64> {
    adversarial_loss_grad(d_source, d_target).map(|(l, _, _)| l)
}

/// Adversarial loss with gradients with respect to both probability vectors.
///
/// Gradients are evaluated at the clamped probabilities and passed straight
/// through the clamp, so a saturated discriminator still receives a signal.
pub fn adversarial_loss_grad(d_source: &[f64], d_target: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if d_source.is_empty() || d_target.is_empty() {
        return Err(Error::EmptyBatch(format!(
            "adversarial loss needs both domains, got {} source and {} target",
            d_source.len(),
            d_target.len()
        )));
    }
    let ns = d_source.len() as f64;
    let nt = d_target.len() as f64;
    let mut loss = 0.0;
    let mut gs = Vec::with_capacity(d_source.len());
    for &p in d_source {
        let p = clamp_prob(p);
        loss -= p.ln() / ns;
        gs.push(-1.0 / (ns * p));
    }
    let mut gt = Vec::with_capacity(d_target.len());
    for &p in d_target {
        let p = clamp_prob(p);
        loss -= (1.0 - p).ln() / nt;
        gt.push(1.0 / (nt * (1.0 - p)));
    }
    Ok((loss.max(0.0), gs, gt))
}

/// `L_d + γ·L_adv`; an absent depth term counts as zero.
pub fn total_loss(l_d: Option<f64>, l_adv: f64, w: &LossWeights) -> f64 {
    l_d.unwrap_or(0.0) + w.gamma * l_adv
}

/// Identity on the way forward, `−λ·g` on the way back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal {
    pub lambda: f32,
}

impl GradientReversal {
    pub fn new(lambda: f32) -> Self {
        GradientReversal { lambda }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    pub fn backward(&self, upstream: &Tensor) -> Tensor {
        let lambda = self.lambda;
        upstream.map(|g| -(lambda * g))
    }

    pub fn backward_slice(&self, upstream: &[f64]) -> Vec<f64> {
        let lambda = self.lambda as f64;
        upstream.iter().map(|&g| -(lambda * g)).collect()
    }
}

/// DANN-style coefficient ramp `2/(1+e^(−10p)) − 1` over progress `p ∈ [0,1]`.
pub fn grl_ramp(progress: f64) -> f64 {
    2.0 / (1.0 + (-10.0 * progress.clamp(0.0, 1.0)).exp()) - 1.0
}

/// Batch depth loss on network outputs: per-image loss, then batch mean.
///
/// Returns the averaged components and the gradient with respect to `pred`.
pub fn depth_loss_batch(
    pred: &Tensor,
    gt: &Tensor,
    mask: &[bool],
    w: &LossWeights,
) -> Result<(DepthLossParts, Tensor)> {
    if pred.shape() != gt.shape() || mask.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!("pred {:?}, gt {:?}, mask {}", pred.shape(), gt.shape(), mask.len())));
    }
    let n = pred.batch();
    if n == 0 {
        return Err(Error::EmptyBatch("depth loss on an empty batch".into()));
    }
    let len = pred.item_len();
    let mut parts = DepthLossParts::default();
    let mut grad = Tensor::zeros(pred.shape());
    for b in 0..n {
        let p: Vec<f64> = pred.item(b).iter().map(|&v| v as f64).collect();
        let g: Vec<f64> = gt.item(b).iter().map(|&v| v as f64).collect();
        let m = &mask[b * len..(b + 1) * len];
        let (part, gr) = depth_loss_grad(&p, &g, m, w)?;
        parts.ssi += part.ssi / n as f64;
        parts.l1 += part.l1 / n as f64;
        parts.total += part.total / n as f64;
        for (dst, v) in grad.item_mut(b).iter_mut().zip(gr) {
            *dst = (v / n as f64) as f32;
        }
    }
    Ok((parts, grad))
}
