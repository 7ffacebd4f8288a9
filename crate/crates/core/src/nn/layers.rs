//! Layers with explicit forward/backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`.
//! `backward` accumulates parameter gradients and returns the gradient
//! with respect to the layer input. Batch items are processed in order,
//! so gradient accumulation is deterministic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{join, Param, Parameters};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Zero,
    Reflect,
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

fn pad_item(x: &[f32], c: usize, h: usize, w: usize, p: usize, mode: Padding) -> Vec<f32> {
    if p == 0 {
        return x.to_vec();
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; c * hp * wp];
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * hp * wp..(ci + 1) * hp * wp];
        for yp in 0..hp {
            let y = yp as isize - p as isize;
            let sy = match mode {
                Padding::Reflect => reflect(y, h),
                Padding::Zero if y < 0 || y >= h as isize => continue,
                Padding::Zero => y as usize,
            };
            for xp in 0..wp {
                let xx = xp as isize - p as isize;
                let sx = match mode {
                    Padding::Reflect => reflect(xx, w),
                    Padding::Zero if xx < 0 || xx >= w as isize => continue,
                    Padding::Zero => xx as usize,
                };
                dst[yp * wp + xp] = src[sy * w + sx];
            }
        }
    }
    out
}

/// Adjoint of [`pad_item`].
fn unpad_item(dp: &[f32], c: usize, h: usize, w: usize, p: usize, mode: Padding) -> Vec<f32> {
    if p == 0 {
        return dp.to_vec();
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        let src = &dp[ci * hp * wp..(ci + 1) * hp * wp];
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for yp in 0..hp {
            let y = yp as isize - p as isize;
            let sy = match mode {
                Padding::Reflect => reflect(y, h),
                Padding::Zero if y < 0 || y >= h as isize => continue,
                Padding::Zero => y as usize,
            };
            for xp in 0..wp {
                let xx = xp as isize - p as isize;
                let sx = match mode {
                    Padding::Reflect => reflect(xx, w),
                    Padding::Zero if xx < 0 || xx >= w as isize => continue,
                    Padding::Zero => xx as usize,
                };
                dst[sy * w + sx] += src[yp * wp + xp];
            }
        }
    }
    out
}

/// `c = a(m×k) · b(k×n)` with arbitrary strides, overwriting or accumulating into `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    assert!(m == 0 || k == 0 || n == 0 || (a.len() > (m - 1) * rsa + (k - 1) * csa));
    assert!(m == 0 || k == 0 || n == 0 || (b.len() > (k - 1) * rsb + (n - 1) * csb));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub mode: Padding,
    pub weight: Param,
    pub bias: Param,
    cols: Vec<Vec<f32>>,
    in_shape: [usize; 4],
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        mode: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            mode,
            weight: Param::normal(vec![out_channels, in_channels, kernel, kernel], 0.02, rng),
            bias: Param::zeros(vec![out_channels]),
            cols: Vec::new(),
            in_shape: [0; 4],
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let hp = h + 2 * self.padding;
        let wp = w + 2 * self.padding;
        ((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        let (oh, ow) = self.output_size(h, w);
        let q = c * k * k;
        let npix = oh * ow;
        let mut out = Tensor::zeros([n, self.out_channels, oh, ow]);
        self.in_shape = x.shape();
        self.cols.clear();
        for b in 0..n {
            let xp = pad_item(x.item(b), c, h, w, p, self.mode);
            let mut cols = vec![0.0f32; q * npix];
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let dst = &mut cols[row * npix..(row + 1) * npix];
                        let plane = &xp[ci * hp * wp..(ci + 1) * hp * wp];
                        for oy in 0..oh {
                            let src = &plane[(oy * s + ky) * wp..];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                drow.copy_from_slice(&src[kx..kx + ow]);
                            } else {
                                for (ox, d) in drow.iter_mut().enumerate() {
                                    *d = src[ox * s + kx];
                                }
                            }
                        }
                    }
                }
            }
            let y = out.item_mut(b);
            for (co, chunk) in y.chunks_mut(npix).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[co]);
            }
            gemm(self.out_channels, q, npix, &self.weight.value, (q, 1), &cols, (npix, 1), 1.0, y);
            self.cols.push(cols);
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let [n, c, h, w] = self.in_shape;
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        let (oh, ow) = (dy.height(), dy.width());
        let q = c * k * k;
        let npix = oh * ow;
        let mut dx = Tensor::zeros(self.in_shape);
        let mut dcols = vec![0.0f32; q * npix];
        for b in 0..n {
            let g = dy.item(b);
            let cols = &self.cols[b];
            // dW += dY · colsᵀ
            gemm(self.out_channels, npix, q, g, (npix, 1), cols, (1, npix), 1.0, &mut self.weight.grad);
            for (co, chunk) in g.chunks(npix).enumerate() {
                self.bias.grad[co] += chunk.iter().sum::<f32>();
            }
            // dcols = Wᵀ · dY
            gemm(q, self.out_channels, npix, &self.weight.value, (1, q), g, (npix, 1), 0.0, &mut dcols);
            let mut dxp = vec![0.0f32; c * hp * wp];
            for ci in 0..c {
                let plane = &mut dxp[ci * hp * wp..(ci + 1) * hp * wp];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let src = &dcols[row * npix..(row + 1) * npix];
                        for oy in 0..oh {
                            let base = (oy * s + ky) * wp + kx;
                            let srow = &src[oy * ow..(oy + 1) * ow];
                            for (ox, v) in srow.iter().enumerate() {
                                plane[base + ox * s] += v;
                            }
                        }
                    }
                }
            }
            let d = unpad_item(&dxp, c, h, w, p, self.mode);
            dx.item_mut(b).copy_from_slice(&d);
        }
        dx
    }
}

impl Parameters for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Instance normalization without affine parameters.
#[derive(Debug, Clone, Default)]
pub struct InstanceNorm {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    shape: [usize; 4],
}

impl InstanceNorm {
    pub const EPS: f32 = 1e-5;

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let mut out = Tensor::zeros(x.shape());
        self.inv_std = vec![0.0; n * c];
        for (plane, (src, dst)) in x.data().chunks(hw).zip(out.data_mut().chunks_mut(hw)).enumerate() {
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
            let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / hw as f64;
            let inv = 1.0 / (var + Self::EPS as f64).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = ((s as f64 - mean) * inv) as f32;
            }
            self.inv_std[plane] = inv as f32;
        }
        self.shape = x.shape();
        self.xhat = out.data().to_vec();
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let [_, _, h, w] = self.shape;
        let hw = h * w;
        let mut dx = Tensor::zeros(self.shape);
        for (plane, ((g, xh), d)) in
            dy.data().chunks(hw).zip(self.xhat.chunks(hw)).zip(dx.data_mut().chunks_mut(hw)).enumerate()
        {
            let mean_g = g.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
            let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / hw as f64;
            let inv = self.inv_std[plane] as f64;
            for ((o, &gi), &xi) in d.iter_mut().zip(g).zip(xh) {
                *o = (inv * (gi as f64 - mean_g - xi as f64 * mean_gx)) as f32;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data().iter().map(|&v| v > 0.0).collect();
        x.map(|v| v.max(0.0))
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for (d, &m) in dx.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *d = 0.0;
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f32,
    mask: Vec<bool>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        LeakyRelu { slope, mask: Vec::new() }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data().iter().map(|&v| v > 0.0).collect();
        let s = self.slope;
        x.map(|v| if v > 0.0 { v } else { s * v })
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for (d, &m) in dx.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *d *= self.slope;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    out: Vec<f32>,
}

pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

impl Sigmoid {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = x.map(sigmoid);
        self.out = y.data().to_vec();
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for (d, &y) in dx.data_mut().iter_mut().zip(&self.out) {
            *d *= y * (1.0 - y);
        }
        dx
    }
}

/// Nearest-neighbour upsampling by a factor of two.
#[derive(Debug, Clone, Default)]
pub struct Upsample2x {
    in_shape: [usize; 4],
}

impl Upsample2x {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        self.in_shape = x.shape();
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(4 * h * w)) {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let [_, _, h, w] = self.in_shape;
        let mut dx = Tensor::zeros(self.in_shape);
        for (src, dst) in dy.data().chunks(4 * h * w).zip(dx.data_mut().chunks_mut(h * w)) {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                }
            }
        }
        dx
    }
}

/// Fully connected layer on `(n, in, 1, 1)` tensors: `y = x Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
    input: Vec<f32>,
    batch: usize,
}

impl Linear {
    /// Uniform(±1/√in) weights and biases.
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        Linear {
            in_features,
            out_features,
            weight: Param::uniform(vec![out_features, in_features], bound, rng),
            bias: Param::uniform(vec![out_features], bound, rng),
            input: Vec::new(),
            batch: 0,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let n = x.batch();
        assert_eq!(x.item_len(), self.in_features, "linear input width");
        let mut out = Tensor::zeros([n, self.out_features, 1, 1]);
        for row in out.data_mut().chunks_mut(self.out_features) {
            row.copy_from_slice(&self.bias.value);
        }
        let (i, o) = (self.in_features, self.out_features);
        gemm(n, i, o, x.data(), (i, 1), &self.weight.value, (1, i), 1.0, out.data_mut());
        self.input = x.data().to_vec();
        self.batch = n;
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (n, i, o) = (self.batch, self.in_features, self.out_features);
        // dW += dYᵀ · X
        gemm(o, n, i, dy.data(), (1, o), &self.input, (i, 1), 1.0, &mut self.weight.grad);
        for row in dy.data().chunks(o) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros([n, i, 1, 1]);
        gemm(n, o, i, dy.data(), (o, 1), &self.weight.value, (i, 1), 0.0, dx.data_mut());
        dx
    }
}

impl Parameters for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Global average over spatial positions: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = (h * w) as f64;
    let data = x.data().chunks(h * w).map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw) as f32).collect();
    Tensor::from_vec([n, c, 1, 1], data).expect("pooled shape")
}

/// Adjoint of [`global_avg_pool`].
pub fn global_avg_pool_backward(dy: &Tensor, in_shape: [usize; 4]) -> Tensor {
    let [_, _, h, w] = in_shape;
    let scale = 1.0 / (h * w) as f32;
    let mut dx = Tensor::zeros(in_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(h * w).zip(dy.data()) {
        plane.iter_mut().for_each(|v| *v = g * scale);
    }
    dx
}
