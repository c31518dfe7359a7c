use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    Excellent,
    Good,
    Acceptable,
    Poor,
}

impl Grade {
    pub const ALL: [Grade; 4] = [Grade::Excellent, Grade::Good, Grade::Acceptable, Grade::Poor];
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::Excellent => "Excellent",
            Grade::Good => "Good",
            Grade::Acceptable => "Acceptable",
            Grade::Poor => "Poor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Reprojection,
    AvgObservations,
    TrackLength,
    Psnr,
    Ssim,
    Lpips,
}

impl MetricId {
    pub const ALL: [MetricId; 6] = [
        MetricId::Reprojection,
        MetricId::AvgObservations,
        MetricId::TrackLength,
        MetricId::Psnr,
        MetricId::Ssim,
        MetricId::Lpips,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Reprojection => "reproj_px",
            MetricId::AvgObservations => "avg_obs",
            MetricId::TrackLength => "track_len",
            MetricId::Psnr => "psnr_db",
            MetricId::Ssim => "ssim",
            MetricId::Lpips => "lpips",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reproj_px" | "reprojection" => Ok(MetricId::Reprojection),
            "avg_obs" | "observations" => Ok(MetricId::AvgObservations),
            "track_len" | "track_length" => Ok(MetricId::TrackLength),
            "psnr_db" | "psnr" => Ok(MetricId::Psnr),
            "ssim" => Ok(MetricId::Ssim),
            "lpips" => Ok(MetricId::Lpips),
            other => Err(MetricsError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// Three cut points separating the four grades, listed from the Excellent
/// boundary to the Poor boundary. A value equal to a cut point takes the
/// better grade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub direction: Direction,
    pub cuts: [f64; 3],
}

impl Band {
    pub fn higher(cuts: [f64; 3]) -> Self {
        Band { direction: Direction::HigherIsBetter, cuts }
    }

    pub fn lower(cuts: [f64; 3]) -> Self {
        Band { direction: Direction::LowerIsBetter, cuts }
    }

    fn is_monotone(&self) -> bool {
        let finite = self.cuts.iter().all(|c| c.is_finite());
        finite
            && match self.direction {
                Direction::HigherIsBetter => self.cuts[0] > self.cuts[1] && self.cuts[1] > self.cuts[2],
                Direction::LowerIsBetter => self.cuts[0] < self.cuts[1] && self.cuts[1] < self.cuts[2],
            }
    }

    pub fn classify(&self, value: f64) -> Grade {
        let better_or_equal = |cut: f64| match self.direction {
            Direction::HigherIsBetter => value >= cut,
            Direction::LowerIsBetter => value <= cut,
        };
        Grade::ALL[..3]
            .iter()
            .zip(self.cuts)
            .find(|(_, cut)| better_or_equal(*cut))
            .map(|(g, _)| *g)
            .unwrap_or(Grade::Poor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradingBands {
    bands: BTreeMap<MetricId, Band>,
}

impl GradingBands {
    pub fn new(bands: BTreeMap<MetricId, Band>) -> Result<Self, MetricsError> {
        for (id, band) in &bands {
            if !band.is_monotone() {
                return Err(MetricsError::BadBands(id.to_string()));
            }
        }
        Ok(GradingBands { bands })
    }

    /// The legend used for the field evaluation.
    pub fn standard() -> Self {
        let bands = BTreeMap::from([
            (MetricId::Reprojection, Band::lower([0.2, 0.5, 1.0])),
            (MetricId::AvgObservations, Band::higher([6000.0, 4000.0, 2000.0])),
            (MetricId::TrackLength, Band::higher([7.0, 5.0, 3.0])),
            (MetricId::Psnr, Band::higher([30.0, 28.0, 25.0])),
            (MetricId::Ssim, Band::higher([0.9, 0.8, 0.7])),
            (MetricId::Lpips, Band::lower([0.15, 0.25, 0.35])),
        ]);
        GradingBands { bands }
    }

    pub fn band(&self, metric: MetricId) -> Option<&Band> {
        self.bands.get(&metric)
    }
}

impl Default for GradingBands {
    fn default() -> Self {
        Self::standard()
    }
}

/// Assigns the grade of `value` under `bands`. NaN is always Poor.
pub fn grade(value: f64, metric: MetricId, bands: &GradingBands) -> Result<Grade, MetricsError> {
    let band = bands.band(metric).ok_or_else(|| MetricsError::UnknownMetric(metric.to_string()))?;
    Ok(band.classify(value))
}
