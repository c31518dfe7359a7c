//! Photometric metrics, grading bands and aggregate quality reports.

mod grade;
mod psnr;
mod report;
mod ssim;

use thiserror::Error;

pub use grade::{grade, Band, Direction, Grade, GradingBands, MetricId};
pub use psnr::{psnr, PSNR_CAP_DB};
pub use report::{
    aggregate_report, evaluate_views, read_lpips_scores, EvalMode, GeometryStats, LpipsScores, MeanStd,
    PerceptualMetric, QualityReport, ViewMetrics, REPORT_CSV_HEADER,
};
pub use ssim::{ssim, ssim_plane, ssim_plane_with_grad, SSIM_SIGMA, SSIM_WINDOW};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("image {0:?} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")]
    TooSmall((usize, usize)),
    #[error("peak must be positive, got {0}")]
    BadPeak(f64),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("grading thresholds for {0} are not strictly monotone")]
    BadBands(String),
    #[error("no views to aggregate")]
    Empty,
    #[error("lpips score file: {0}")]
    ScoreFile(String),
}
