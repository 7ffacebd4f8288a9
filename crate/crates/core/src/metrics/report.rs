//! Per-frame evaluation, aggregation and Table-style reporting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::depth::{delta1, mae, median_scale, rmse, DELTA1_THRESHOLD};
use super::heatmap::error_heatmap;
use super::ssim::ssim;
use crate::datagen::{DatasetManifest, Domain, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::frame::{DepthMap, RgbFrame};
use crate::model::DepthNet;

/// Anything that turns a frame into metric depth.
pub trait DepthPredictor {
    /// Dense depth prediction in millimetres. `gt` is available so that
    /// reference predictors can be built; learned predictors ignore it.
    fn predict_mm(&mut self, rgb: &RgbFrame, gt: &DepthMap) -> Result<DepthMap>;
}

impl DepthPredictor for DepthNet {
    fn predict_mm(&mut self, rgb: &RgbFrame, _gt: &DepthMap) -> Result<DepthMap> {
        let out = self.predict(&rgb.to_tensor())?;
        Ok(DepthMap::from_normalized(&out, 0, self.config().max_depth_mm))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub median_scaling: bool,
    pub delta_threshold: f64,
    /// SSIM is computed on depth maps divided by this value.
    pub max_depth_mm: f64,
    pub ssim_operand: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig::new(100.0)
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_threshold > 1.0 && self.max_depth_mm > 0.0) {
            return Err(Error::ConfigInvalid("eval needs delta_threshold > 1 and max_depth_mm > 0".into()));
        }
        Ok(())
    }

    pub fn new(max_depth_mm: f64) -> Self {
        EvalConfig {
            median_scaling: true,
            delta_threshold: DELTA1_THRESHOLD,
            max_depth_mm,
            ssim_operand: format!("depth_mm / {max_depth_mm}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub id: String,
    pub ssim: f64,
    pub mae_mm: f64,
    pub rmse_mm: f64,
    pub delta1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Stat {
        let n = values.clone().count();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub ssim: Stat,
    pub mae_mm: Stat,
    pub rmse_mm: Stat,
    pub delta1: Stat,
}

impl Aggregate {
    pub fn from_frames(frames: &[FrameMetrics]) -> Self {
        Aggregate {
            ssim: Stat::of(frames.iter().map(|f| f.ssim)),
            mae_mm: Stat::of(frames.iter().map(|f| f.mae_mm)),
            rmse_mm: Stat::of(frames.iter().map(|f| f.rmse_mm)),
            delta1: Stat::of(frames.iter().map(|f| f.delta1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method_label: String,
    pub n_frames: usize,
    pub eval_config: EvalConfig,
    pub aggregate: Aggregate,
    pub per_frame: Vec<FrameMetrics>,
}

impl MetricsReport {
    pub fn new(method_label: &str, eval_config: EvalConfig, mut per_frame: Vec<FrameMetrics>) -> Self {
        per_frame.sort_by(|a, b| a.id.cmp(&b.id));
        MetricsReport {
            method_label: method_label.to_string(),
            n_frames: per_frame.len(),
            eval_config,
            aggregate: Aggregate::from_frames(&per_frame),
            per_frame,
        }
    }

    pub fn row(&self) -> TableRow {
        TableRow {
            method: self.method_label.clone(),
            ssim: self.aggregate.ssim.mean,
            mae_mm: self.aggregate.mae_mm,
            rmse_mm: self.aggregate.rmse_mm,
            delta1: self.aggregate.delta1.mean,
        }
    }

    /// Writes `report.json` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        let body = serde_json::to_vec_pretty(self).expect("report serializes");
        fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
        let md = dir.join("report.md");
        fs::write(&md, render_table(&[self.row()])).map_err(|e| Error::io(&md, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }
}

/// Metrics for one frame after optional median scaling.
pub fn frame_metrics(id: &str, pred: &DepthMap, gt: &DepthMap, cfg: &EvalConfig) -> Result<(FrameMetrics, Vec<f64>)> {
    if pred.len() != gt.len() || pred.width != gt.width {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let p: Vec<f64> = pred.depth_mm.iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = gt.depth_mm.iter().map(|&v| v as f64).collect();
    let mask = &gt.valid;
    let p = if cfg.median_scaling { median_scale(&p, &g, mask)? } else { p };
    let norm = |v: &[f64]| v.iter().map(|x| x / cfg.max_depth_mm).collect::<Vec<f64>>();
    let metrics = FrameMetrics {
        id: id.to_string(),
        ssim: ssim(&norm(&p), &norm(&g), gt.width, gt.height)?,
        mae_mm: mae(&p, &g, mask)?,
        rmse_mm: rmse(&p, &g, mask)?,
        delta1: delta1(&p, &g, mask, cfg.delta_threshold)?,
    };
    Ok((metrics, p))
}

/// Samples of a split, optionally restricted to one domain, sorted by id.
pub fn eval_samples(manifest: &DatasetManifest, split: Split, domain: Option<Domain>) -> Result<Vec<&SampleRecord>> {
    let mut samples: Vec<&SampleRecord> =
        manifest.samples.iter().filter(|s| s.split == split && domain.is_none_or(|d| s.domain == d)).collect();
    if let Some(s) = samples.iter().find(|s| s.depth_path.is_none()) {
        return Err(Error::MissingLabels(format!("sample {} in split {} has no depth", s.id, split.as_str())));
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!("no samples in split {}", split.as_str())));
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(samples)
}

/// Predicts, median-scales and scores every labeled frame of a split.
/// Heatmaps of the absolute error are written to `heatmap_dir` if given.
pub fn evaluate(
    predictor: &mut dyn DepthPredictor,
    manifest: &DatasetManifest,
    split: Split,
    domain: Option<Domain>,
    label: &str,
    cfg: &EvalConfig,
    heatmap_dir: Option<&Path>,
) -> Result<MetricsReport> {
    let samples = eval_samples(manifest, split, domain)?;
    if let Some(dir) = heatmap_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut frames = Vec::with_capacity(samples.len());
    for rec in samples {
        let rgb = manifest.load_rgb(rec)?;
        let gt = manifest.load_depth(rec)?;
        let pred = predictor.predict_mm(&rgb, &gt)?;
        let (m, scaled) = frame_metrics(&rec.id, &pred, &gt, cfg)?;
        if let Some(dir) = heatmap_dir {
            let g: Vec<f64> = gt.depth_mm.iter().map(|&v| v as f64).collect();
            error_heatmap(&scaled, &g, &gt.valid, gt.width, gt.height)?
                .save_png(&dir.join(format!("{}.png", rec.id)))?;
        }
        frames.push(m);
    }
    Ok(MetricsReport::new(label, cfg.clone(), frames))
}

/// One line of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub ssim: f64,
    pub mae_mm: Stat,
    pub rmse_mm: Stat,
    pub delta1: f64,
}

/// Rows published for the real-bronchoscopy comparison, kept for report
/// formatting only.
pub fn reference_rows() -> Vec<TableRow> {
    let row = |method: &str, ssim, mae: (f64, f64), rmse: (f64, f64), delta1| TableRow {
        method: method.to_string(),
        ssim,
        mae_mm: Stat { mean: mae.0, std: mae.1 },
        rmse_mm: Stat { mean: rmse.0, std: rmse.1 },
        delta1,
    };
    vec![
        row("CycleGAN", 0.913, (3.397, 1.885), (5.566, 3.452), 0.482),
        row("Ours w/o DA", 0.931, (2.813, 0.849), (4.408, 1.297), 0.498),
        row("Ours", 0.932, (2.785, 0.849), (4.382, 1.304), 0.501),
    ]
}

pub const TABLE_HEADER: &str = "| Method | SSIM ↑ | MAE (mm) ↓ | RMSE (mm) ↓ | δ1 < 1.25 ↑ |";

/// Markdown table: SSIM and δ1 as means, MAE and RMSE as `mean ± std`,
/// three decimals throughout.
pub fn render_table(rows: &[TableRow]) -> String {
    let mut s = String::new();
    s.push_str(TABLE_HEADER);
    s.push('\n');
    s.push_str("|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} | {:.3} |",
            r.method, r.ssim, r.mae_mm.mean, r.mae_mm.std, r.rmse_mm.mean, r.rmse_mm.std, r.delta1
        );
    }
    s
}

/// A report input: a full evaluation report or a bare table row.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ReportInput {
    Full(Box<MetricsReport>),
    Row(TableRow),
}

impl ReportInput {
    pub fn load(path: &Path) -> Result<TableRow> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let input: ReportInput =
            serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        Ok(match input {
            ReportInput::Full(r) => r.row(),
            ReportInput::Row(r) => r,
        })
    }
}
