//! Recording ingestion: canonical manifest directories and rosbag2 containers.

mod cdr;
mod manifest;
pub mod messages;
mod priors;
pub mod rosbag;
mod subsample;
mod sync;

use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

pub use crate::camera::CameraIntrinsics;
use crate::raster::Image;
pub use cdr::{CdrError, CdrReader, CdrWriter};
pub use manifest::{write_manifest_dataset, Manifest, ManifestFrame};
pub use priors::{geodetic_to_enu, read_priors_csv, write_priors_csv, Geodetic};
pub use subsample::{subsample_frames, SubsamplePolicy};
pub use sync::{synchronize_streams, Association};

/// Default association window between an image and a pose fix.
pub const DEFAULT_SYNC_TOLERANCE_NS: i64 = 20_000_000;
/// Smallest accepted frame edge.
pub const MIN_FRAME_EDGE: usize = 16;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("recording path {0} does not exist")]
    MissingPath(PathBuf),
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("unsupported image encoding {0:?}")]
    UnsupportedEncoding(String),
    #[error("timestamps not strictly increasing at frame index {index} ({previous} -> {current} ns)")]
    NonMonotone { index: usize, previous: i64, current: i64 },
    #[error("frame {index}: {reason}")]
    InvalidFrame { index: usize, reason: String },
    #[error("no camera intrinsics: expected a camera-info topic or {0}")]
    MissingIntrinsics(PathBuf),
    #[error("invalid intrinsics: {0}")]
    Intrinsics(#[from] crate::camera::CameraError),
    #[error("invalid pose prior at {line}: {reason}")]
    InvalidPrior { line: String, reason: String },
    #[error("minimum-baseline subsampling needs a pose prior for every frame; frame index {0} has none")]
    MissingPriors(usize),
    #[error("CDR payload of message {message}: {source}")]
    Cdr { message: i64, source: CdrError },
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("priors csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("image {path}: {source}")]
    Image { path: PathBuf, source: crate::raster::RasterError },
    #[error("io {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// One decoded image of a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingFrame {
    pub frame_id: usize,
    pub timestamp_ns: i64,
    pub image: Image,
    pub source_topic: String,
}

/// External estimate of a camera pose (GNSS, odometry, ...).
///
/// `position_m` is the camera centre in the local metric frame; `orientation`,
/// when present, is the world-to-camera rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosePrior {
    pub timestamp_ns: i64,
    pub position_m: Vector3<f64>,
    pub orientation: Option<UnitQuaternion<f64>>,
    pub position_sigma_m: Vector3<f64>,
}

impl PosePrior {
    pub fn new(timestamp_ns: i64, position_m: Vector3<f64>, sigma_m: f64) -> Self {
        Self { timestamp_ns, position_m, orientation: None, position_sigma_m: Vector3::repeat(sigma_m) }
    }

    pub fn with_orientation(mut self, q: UnitQuaternion<f64>) -> Self {
        self.orientation = Some(q);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.position_m.iter().all(|v| v.is_finite()) {
            return Err("non-finite position".into());
        }
        if !self.position_sigma_m.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err("sigmas must be strictly positive".into());
        }
        Ok(())
    }

    /// Pose implied by the prior, when it carries an orientation.
    pub fn pose(&self) -> Option<crate::camera::CameraPose> {
        self.orientation.map(|q| crate::camera::CameraPose::from_center(q, self.position_m))
    }
}

/// Synchronized frames plus shared intrinsics; `priors[i]` belongs to `frames[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: Vec<RecordingFrame>,
    pub intrinsics: CameraIntrinsics,
    pub priors: Vec<Option<PosePrior>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn prior_count(&self) -> usize {
        self.priors.iter().filter(|p| p.is_some()).count()
    }

    /// Stable per-frame file name used by exporters.
    pub fn frame_name(&self, index: usize) -> String {
        format!("frame_{:05}.png", self.frames[index].frame_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Manifest,
    Rosbag2,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manifest" => Ok(Backend::Manifest),
            "rosbag2" => Ok(Backend::Rosbag2),
            other => Err(format!("unknown backend {other:?} (expected manifest or rosbag2)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestConfig {
    pub backend: Backend,
    /// Image topic; `None` picks the only image stream present.
    pub image_topic: Option<String>,
    /// Pose-prior topic (rosbag2 only); manifest recordings use `priors.csv`.
    pub prior_topic: Option<String>,
    pub camera_info_topic: Option<String>,
    pub sync_tolerance_ns: i64,
    /// Sigma used when a prior message carries no usable covariance.
    pub default_prior_sigma_m: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Manifest,
            image_topic: None,
            prior_topic: None,
            camera_info_topic: None,
            sync_tolerance_ns: DEFAULT_SYNC_TOLERANCE_NS,
            default_prior_sigma_m: 1.0,
        }
    }
}

/// Reads a recording into a synchronized [`Dataset`].
pub fn read_recording(path: &Path, config: &IngestConfig) -> Result<Dataset, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingPath(path.to_path_buf()));
    }
    let (frames, intrinsics, priors) = match config.backend {
        Backend::Manifest => manifest::read(path, config)?,
        Backend::Rosbag2 => rosbag::read(path, config)?,
    };
    if frames.is_empty() {
        return Err(IngestError::NoFrames(path.to_path_buf()));
    }
    intrinsics.validate()?;
    validate_frames(&frames)?;
    for p in &priors {
        p.validate().map_err(|reason| IngestError::InvalidPrior { line: format!("t={}", p.timestamp_ns), reason })?;
    }
    let frame_ts: Vec<i64> = frames.iter().map(|f| f.timestamp_ns).collect();
    let mut prior_sorted = priors;
    prior_sorted.sort_by_key(|p| p.timestamp_ns);
    let prior_ts: Vec<i64> = prior_sorted.iter().map(|p| p.timestamp_ns).collect();
    let assoc = synchronize_streams(&frame_ts, &prior_ts, config.sync_tolerance_ns);
    let priors = assoc.iter().map(|a| a.map(|m| prior_sorted[m.prior_index])).collect();
    log::info!(
        "ingested {} frames from {} ({} with priors)",
        frames.len(),
        path.display(),
        assoc.iter().filter(|a| a.is_some()).count()
    );
    Ok(Dataset { frames, intrinsics, priors })
}

fn validate_frames(frames: &[RecordingFrame]) -> Result<(), IngestError> {
    for (i, f) in frames.iter().enumerate() {
        let (w, h) = f.image.dims();
        if w < MIN_FRAME_EDGE || h < MIN_FRAME_EDGE {
            return Err(IngestError::InvalidFrame {
                index: i,
                reason: format!("{w}x{h} is smaller than {MIN_FRAME_EDGE}x{MIN_FRAME_EDGE}"),
            });
        }
        if !f.image.is_normalized() {
            return Err(IngestError::InvalidFrame {
                index: i,
                reason: "pixel values must be finite and in [0, 1]".into(),
            });
        }
        if i > 0 && f.timestamp_ns <= frames[i - 1].timestamp_ns {
            return Err(IngestError::NonMonotone {
                index: i,
                previous: frames[i - 1].timestamp_ns,
                current: f.timestamp_ns,
            });
        }
    }
    Ok(())
}
