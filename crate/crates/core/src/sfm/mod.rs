//! Incremental structure-from-motion: features, pair proposal, matching,
//! two-view initialization, registration, triangulation and bundle adjustment.

mod bundle;
mod features;
mod mapper;
mod matching;
mod pipeline;
mod pnp;
mod stats;
mod triangulate;
mod twoview;

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

pub use crate::camera::{CameraIntrinsics, CameraPose};
pub use bundle::{bundle_adjust, BundleConfig, BundleReport};
pub use features::{detect_features, DetectorConfig, DESCRIPTOR_LEN};
pub use mapper::{incremental_map, MapperConfig, MapperOutput};
pub use matching::{
    match_all, match_pair, match_pair_brute_force, propose_pairs, sequential_pair_count, PairMatches, PairStrategy,
    DEFAULT_LOOP_RADIUS_M,
};
pub use pipeline::{reconstruct, Reconstruction, DEFAULT_MATCH_RATIO};
pub use pnp::{estimate_pose, register_next_image, PnpConfig, PnpResult};
pub use stats::{compute_sfm_stats, write_timing_csv, SfmReport, Timings, TIMING_CSV_HEADER};
pub use triangulate::{triangulate_track, TriangulatedPoint, TriangulationConfig};
pub use twoview::{estimate_two_view, verify_pair, RobustConfig, TwoView};

#[derive(Debug, Error, PartialEq)]
pub enum SfmError {
    #[error("pair rejected: {0}")]
    PairRejected(String),
    #[error("image {image}: {found} correspondences, need {needed} (or a pose prior)")]
    TooFewCorrespondences { image: u32, found: usize, needed: usize },
    #[error("image {image}: registration rejected with {inliers} inliers (need {needed})")]
    RegistrationRejected { image: u32, inliers: usize, needed: usize },
    #[error("point rejected: {0}")]
    PointRejected(String),
    #[error("bundle adjustment: {0}")]
    Bundle(String),
    #[error("prior strategy needs pose priors")]
    MissingPriors,
    #[error("invalid pair proposal: {0}")]
    InvalidStrategy(String),
    #[error("model is empty")]
    EmptyModel,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Scale-space feature with a 128-bin gradient-orientation descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    /// Pixel position; the top-left pixel centre is `(0.5, 0.5)`.
    pub position: Vector2<f64>,
    pub scale: f64,
    pub orientation: f64,
    pub response: f64,
    pub descriptor: Vec<f32>,
    /// Image colour sampled at the keypoint, used to colour triangulated points.
    pub color: [f64; 3],
}

/// One 2D observation of a 3D point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Observation {
    pub image_id: u32,
    pub keypoint: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub point_id: u64,
    pub observations: Vec<Observation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Point3D {
    pub position: Vector3<f64>,
    pub color: [f64; 3],
    pub reprojection_error_px: f64,
    /// Observations sorted by image id; at most one per image.
    pub track: Vec<Observation>,
}

/// A registered image: its pose and every 2D keypoint position.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelImage {
    pub name: String,
    pub pose: CameraPose,
    pub keypoints: Vec<Vector2<f64>>,
}

/// Cameras, posed images and triangulated points with their tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseModel {
    pub intrinsics: CameraIntrinsics,
    pub images: BTreeMap<u32, ModelImage>,
    pub points: BTreeMap<u64, Point3D>,
}

impl SparseModel {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self { intrinsics, images: BTreeMap::new(), points: BTreeMap::new() }
    }

    pub fn pose(&self, image_id: u32) -> Option<&CameraPose> {
        self.images.get(&image_id).map(|im| &im.pose)
    }

    pub fn tracks(&self) -> Vec<Track> {
        self.points.iter().map(|(&point_id, p)| Track { point_id, observations: p.track.clone() }).collect()
    }

    pub fn observation_count(&self) -> usize {
        self.points.values().map(|p| p.track.len()).sum()
    }

    pub fn next_point_id(&self) -> u64 {
        self.points.keys().next_back().map_or(0, |k| k + 1)
    }

    /// Pixel residual of one observation, `None` when the point is behind the camera.
    pub fn residual(&self, point: &Point3D, obs: &Observation) -> Option<Vector2<f64>> {
        let im = self.images.get(&obs.image_id)?;
        let proj = im.pose.project(&self.intrinsics, &point.position)?;
        Some(proj - im.keypoints[obs.keypoint as usize])
    }

    /// Recomputes each point's mean reprojection error over its track.
    pub fn update_point_errors(&mut self) {
        let errors: Vec<(u64, f64)> = self
            .points
            .iter()
            .map(|(&id, p)| {
                let sum: f64 = p.track.iter().map(|o| self.residual(p, o).map_or(f64::INFINITY, |r| r.norm())).sum();
                (id, sum / p.track.len().max(1) as f64)
            })
            .collect();
        for (id, e) in errors {
            self.points.get_mut(&id).expect("id from iteration").reprojection_error_px = e;
        }
    }

    /// Checks the structural invariants: tracks reference posed images and
    /// valid keypoints, one observation per image, at least two observations,
    /// finite positions in front of every observer.
    pub fn validate(&self) -> Result<(), SfmError> {
        for (id, p) in &self.points {
            if p.track.len() < 2 {
                return Err(SfmError::InvalidModel(format!("point {id} has a track of length {}", p.track.len())));
            }
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(SfmError::InvalidModel(format!("point {id} is not finite")));
            }
            for w in p.track.windows(2) {
                if w[0].image_id >= w[1].image_id {
                    return Err(SfmError::InvalidModel(format!(
                        "point {id} track is unsorted or observes image {} twice",
                        w[1].image_id
                    )));
                }
            }
            for o in &p.track {
                let im = self.images.get(&o.image_id).ok_or_else(|| {
                    SfmError::InvalidModel(format!("point {id} references unregistered image {}", o.image_id))
                })?;
                if o.keypoint as usize >= im.keypoints.len() {
                    return Err(SfmError::InvalidModel(format!(
                        "point {id} references keypoint {} of image {} which has {}",
                        o.keypoint,
                        o.image_id,
                        im.keypoints.len()
                    )));
                }
                if im.pose.transform(&p.position).z <= 0.0 {
                    return Err(SfmError::InvalidModel(format!("point {id} is behind image {}", o.image_id)));
                }
            }
        }
        Ok(())
    }
}
