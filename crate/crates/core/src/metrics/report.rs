use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{grade, psnr, ssim, Grade, GradingBands, MetricId, MetricsError};
use crate::par;
use crate::raster::Image;

pub const REPORT_CSV_HEADER: &str = "trajectory,view,psnr_db,ssim,lpips,reproj_px,avg_obs,track_len,\
grade_reproj_px,grade_avg_obs,grade_track_len,grade_psnr_db,grade_ssim,grade_lpips,eval_mode";

/// Which views the photometric metrics were computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    TrainViews,
    #[default]
    HeldOut,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::TrainViews => "train",
            EvalMode::HeldOut => "heldout",
        })
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(EvalMode::TrainViews),
            "heldout" => Ok(EvalMode::HeldOut),
            other => Err(format!("unknown evaluation mode {other:?} (expected train or heldout)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

/// Reconstruction-level geometric statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryStats {
    pub mean_reprojection_error_px: f64,
    pub avg_observations_per_image: f64,
    pub mean_track_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub trajectory: String,
    pub eval_mode: EvalMode,
    pub views: Vec<ViewMetrics>,
    pub psnr_db: MeanStd,
    pub ssim: MeanStd,
    pub lpips: Option<MeanStd>,
    pub geometry: Option<GeometryStats>,
    pub grades: BTreeMap<MetricId, Grade>,
}

/// External per-view score source, e.g. a learned perceptual metric run
/// out of process.
pub trait PerceptualMetric: Sync {
    fn name(&self) -> &str;
    fn score(&self, view: &str, rendered: &Image, reference: &Image) -> Option<f64>;
}

/// Precomputed LPIPS scores keyed by view name.
#[derive(Debug, Clone, Default)]
pub struct LpipsScores(pub BTreeMap<String, f64>);

impl PerceptualMetric for LpipsScores {
    fn name(&self) -> &str {
        "lpips"
    }

    fn score(&self, view: &str, _rendered: &Image, _reference: &Image) -> Option<f64> {
        self.0.get(view).copied()
    }
}

/// Reads a `view,lpips` CSV produced by an external tool.
pub fn read_lpips_scores(path: &Path) -> Result<LpipsScores, MetricsError> {
    let err = |m: String| MetricsError::ScoreFile(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| err(format!("missing column {name}")));
    let (view_col, score_col) = (col("view")?, col("lpips")?);
    let mut scores = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let value: f64 = record[score_col]
            .parse()
            .map_err(|_| err(format!("line {}: bad score {:?}", line + 2, &record[score_col])))?;
        if !value.is_finite() {
            return Err(err(format!("line {}: non-finite score", line + 2)));
        }
        scores.insert(record[view_col].to_string(), value);
    }
    Ok(LpipsScores(scores))
}

/// Computes per-view metrics for `(view, rendered, reference)` triples.
pub fn evaluate_views(
    views: &[(String, Image, Image)],
    perceptual: Option<&dyn PerceptualMetric>,
) -> Result<Vec<ViewMetrics>, MetricsError> {
    par::map(views, |(name, rendered, reference)| {
        Ok(ViewMetrics {
            view: name.clone(),
            psnr_db: psnr(rendered, reference, 1.0)?,
            ssim: ssim(rendered, reference)?,
            lpips: perceptual.and_then(|p| p.score(name, rendered, reference)),
        })
    })
    .into_iter()
    .collect()
}

pub fn aggregate_report(
    trajectory: &str,
    eval_mode: EvalMode,
    views: Vec<ViewMetrics>,
    geometry: Option<GeometryStats>,
    bands: &GradingBands,
) -> Result<QualityReport, MetricsError> {
    let psnr_values: Vec<f64> = views.iter().map(|v| v.psnr_db).collect();
    let psnr_db = MeanStd::of(&psnr_values).ok_or(MetricsError::Empty)?;
    let ssim = MeanStd::of(&views.iter().map(|v| v.ssim).collect::<Vec<_>>()).ok_or(MetricsError::Empty)?;
    let lpips = MeanStd::of(&views.iter().filter_map(|v| v.lpips).collect::<Vec<_>>());

    let mut values = vec![(MetricId::Psnr, psnr_db.mean), (MetricId::Ssim, ssim.mean)];
    if let Some(l) = lpips {
        values.push((MetricId::Lpips, l.mean));
    }
    if let Some(g) = geometry {
        values.push((MetricId::Reprojection, g.mean_reprojection_error_px));
        values.push((MetricId::AvgObservations, g.avg_observations_per_image));
        values.push((MetricId::TrackLength, g.mean_track_length));
    }
    let mut grades = BTreeMap::new();
    for (id, v) in values {
        if bands.band(id).is_some() {
            grades.insert(id, grade(v, id, bands)?);
        }
    }
    Ok(QualityReport { trajectory: trajectory.to_string(), eval_mode, views, psnr_db, ssim, lpips, geometry, grades })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_default()
}

impl QualityReport {
    pub fn grade(&self, metric: MetricId) -> Option<Grade> {
        self.grades.get(&metric).copied()
    }

    fn grade_cells(&self, pick: impl Fn(MetricId) -> Option<Grade>) -> String {
        [
            MetricId::Reprojection,
            MetricId::AvgObservations,
            MetricId::TrackLength,
            MetricId::Psnr,
            MetricId::Ssim,
            MetricId::Lpips,
        ]
        .iter()
        .map(|&m| pick(m).map(|g| g.to_string()).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(",")
    }

    /// One row per view, then `mean` and `std` aggregate rows.
    pub fn to_csv(&self, bands: &GradingBands) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        let geo = self.geometry;
        for v in &self.views {
            let view_grade = |m: MetricId| {
                let value = match m {
                    MetricId::Psnr => Some(v.psnr_db),
                    MetricId::Ssim => Some(v.ssim),
                    MetricId::Lpips => v.lpips,
                    _ => None,
                }?;
                grade(value, m, bands).ok()
            };
            let _ = writeln!(
                out,
                "{},{},{:.4},{:.6},{},,,,{},{}",
                self.trajectory,
                v.view,
                v.psnr_db,
                v.ssim,
                opt(v.lpips, 6),
                self.grade_cells(view_grade),
                self.eval_mode
            );
        }
        let _ = writeln!(
            out,
            "{},mean,{:.4},{:.6},{},{},{},{},{},{}",
            self.trajectory,
            self.psnr_db.mean,
            self.ssim.mean,
            opt(self.lpips.map(|l| l.mean), 6),
            opt(geo.map(|g| g.mean_reprojection_error_px), 4),
            opt(geo.map(|g| g.avg_observations_per_image), 2),
            opt(geo.map(|g| g.mean_track_length), 3),
            self.grade_cells(|m| self.grade(m)),
            self.eval_mode
        );
        let _ = writeln!(
            out,
            "{},std,{:.4},{:.6},{},,,,,,,,,,{}",
            self.trajectory,
            self.psnr_db.std,
            self.ssim.std,
            opt(self.lpips.map(|l| l.std), 6),
            self.eval_mode
        );
        out
    }

    /// Single-row table in the layout of the field evaluation.
    pub fn to_markdown(&self) -> String {
        let cell = |m: MetricId, text: String| match self.grade(m) {
            Some(g) if !text.is_empty() => format!("{text} ({g})"),
            _ if text.is_empty() => "n/a".to_string(),
            _ => text,
        };
        let geo = self.geometry;
        let mut out = String::new();
        out.push_str(
            "| Trajectory | Reproj. Err. [px] | Avg. Obs. [#] | Track Len. [#] | PSNR [dB] | SSIM | LPIPS |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|\n");
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            self.trajectory,
            cell(MetricId::Reprojection, opt(geo.map(|g| g.mean_reprojection_error_px), 3)),
            cell(MetricId::AvgObservations, opt(geo.map(|g| g.avg_observations_per_image), 2)),
            cell(MetricId::TrackLength, opt(geo.map(|g| g.mean_track_length), 2)),
            cell(MetricId::Psnr, format!("{:.1} ± {:.1}", self.psnr_db.mean, self.psnr_db.std)),
            cell(MetricId::Ssim, format!("{:.3} ± {:.3}", self.ssim.mean, self.ssim.std)),
            cell(MetricId::Lpips, self.lpips.map(|l| format!("{:.3} ± {:.3}", l.mean, l.std)).unwrap_or_default()),
        );
        let _ = writeln!(out, "\nEvaluation views: {} ({} views)", self.eval_mode, self.views.len());
        out
    }
}
