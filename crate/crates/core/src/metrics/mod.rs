//! Evaluation: median scaling, SSIM, MAE, RMSE, δ1, error heatmaps and
//! comparison tables.

pub mod depth;
pub mod heatmap;
pub mod report;
pub mod ssim;

pub use depth::{delta1, mae, masked_median, median_scale, rmse, DELTA1_THRESHOLD};
pub use heatmap::error_heatmap;
pub use report::{
    evaluate, frame_metrics, reference_rows, render_table, Aggregate, DepthPredictor, EvalConfig, FrameMetrics,
    MetricsReport, ReportInput, Stat, TableRow,
};
pub use ssim::ssim;
