use crate::error::{Error, Result};
use crate::frame::RgbFrame;

/// Blue → cyan → green → yellow → red.
pub fn colormap(t: f64) -> [f32; 3] {
    const STOPS: [[f64; 3]; 5] = [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    let t = t.clamp(0.0, 1.0) * 4.0;
    let i = (t.floor() as usize).min(3);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * f) as f32)
}

/// Absolute error mapped blue (zero) to red (largest error in this image).
/// Pixels outside the mask are black.
pub fn error_heatmap(pred: &[f64], gt: &[f64], mask: &[bool], width: usize, height: usize) -> Result<RgbFrame> {
    let n = width * height;
    if pred.len() != n || gt.len() != n || mask.len() != n {
        return Err(Error::ShapeMismatch(format!("heatmap inputs do not match {width}x{height}")));
    }
    let err: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).collect();
    let max = err.iter().zip(mask).filter(|(_, &m)| m).map(|(e, _)| *e).fold(0.0, f64::max);
    let mut out = RgbFrame::new(width, height);
    for i in 0..n {
        if mask[i] {
            let t = if max > 0.0 { err[i] / max } else { 0.0 };
            out.set_pixel(i % width, i / width, colormap(t));
        }
    }
    Ok(out)
}
