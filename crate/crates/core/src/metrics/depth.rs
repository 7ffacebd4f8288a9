//! Per-frame depth metrics over a validity mask.

use crate::error::{Error, Result};

pub const DELTA1_THRESHOLD: f64 = 1.25;

fn check(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<usize> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "pred {}, gt {}, mask {} elements",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::DegenerateInput("metric over an empty mask".into()));
    }
    Ok(n)
}

/// Median of the masked values (mean of the middle pair for even counts).
pub fn masked_median(values: &[f64], mask: &[bool]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Scales `pred` by `median(gt)/median(pred)` over the mask.
pub fn median_scale(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    check(pred, gt, mask)?;
    let mp = masked_median(pred, mask).unwrap_or(0.0);
    let mg = masked_median(gt, mask).unwrap_or(0.0);
    if !(mp > 0.0 && mg > 0.0) {
        return Err(Error::DegenerateInput(format!(
            "median scaling needs positive medians, got pred {mp} and gt {mg}"
        )));
    }
    let factor = mg / mp;
    Ok(pred.iter().map(|&p| p * factor).collect())
}

pub fn mae(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    let n = check(pred, gt, mask)?;
    let sum: f64 = pred.iter().zip(gt).zip(mask).filter(|(_, &m)| m).map(|((p, g), _)| (p - g).abs()).sum();
    Ok(sum / n as f64)
}

pub fn rmse(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    let n = check(pred, gt, mask)?;
    let sum: f64 = pred.iter().zip(gt).zip(mask).filter(|(_, &m)| m).map(|((p, g), _)| (p - g).powi(2)).sum();
    Ok((sum / n as f64).sqrt())
}

/// Fraction of masked pixels with `max(pred/gt, gt/pred) < threshold`.
pub fn delta1(pred: &[f64], gt: &[f64], mask: &[bool], threshold: f64) -> Result<f64> {
    let n = check(pred, gt, mask)?;
    let mut hits = 0usize;
    for ((&p, &g), _) in pred.iter().zip(gt).zip(mask).filter(|(_, &m)| m) {
        if !(p > 0.0 && g > 0.0) {
            return Err(Error::DegenerateInput(format!("delta accuracy needs positive depths, got {p} / {g}")));
        }
        if (p / g).max(g / p) < threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_scale_examples() {
        let m = [true; 3];
        let s = median_scale(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0], &m).unwrap();
        assert_eq!(s, vec![1.0, 2.0, 3.0]);
        let gt = [3.0, 1.0, 7.0, 2.0];
        let pred: Vec<f64> = gt.iter().map(|g| 2.0 * g).collect();
        let s = median_scale(&pred, &gt, &[true; 4]).unwrap();
        assert_eq!(mae(&s, &gt, &[true; 4]).unwrap(), 0.0);
        let p = [0.3, 9.0, 2.2, 4.1, 5.0];
        let g = [1.0, 1.5, 8.0, 3.3, 0.7];
        let s = median_scale(&p, &g, &[true; 5]).unwrap();
        let ms = masked_median(&s, &[true; 5]).unwrap();
        assert!((ms - masked_median(&g, &[true; 5]).unwrap()).abs() <= 1e-12);
        assert!(matches!(median_scale(&[0.0, 0.0], &[1.0, 1.0], &[true; 2]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn mae_rmse_examples() {
        let gt = [1.0, 2.0, 5.0];
        let m = [true; 3];
        assert_eq!(mae(&gt, &gt, &m).unwrap(), 0.0);
        assert_eq!(rmse(&gt, &gt, &m).unwrap(), 0.0);
        let off: Vec<f64> = gt.iter().map(|g| g - 0.75).collect();
        assert!((mae(&off, &gt, &m).unwrap() - 0.75).abs() < 1e-12);
        assert!((rmse(&off, &gt, &m).unwrap() - 0.75).abs() < 1e-12);
        assert!(matches!(mae(&gt, &gt, &[false; 3]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn delta1_examples() {
        let gt = [1.0, 2.0, 4.0];
        let m = [true; 3];
        assert_eq!(delta1(&gt, &gt, &m, DELTA1_THRESHOLD).unwrap(), 1.0);
        let far: Vec<f64> = gt.iter().map(|g| 1.3 * g).collect();
        assert_eq!(delta1(&far, &gt, &m, DELTA1_THRESHOLD).unwrap(), 0.0);
        assert_eq!(delta1(&[1.2, 3.0, 4.1], &gt, &m, DELTA1_THRESHOLD).unwrap(), 2.0 / 3.0);
        assert!(matches!(delta1(&[0.0, 1.0, 1.0], &gt, &m, 1.25), Err(Error::DegenerateInput(_))));
    }
}
