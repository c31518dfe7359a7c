//! Geometric statistics of a sparse model and the strategy timing report.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{SfmError, SparseModel};
use crate::metrics::GeometryStats;

/// Registered share of the input images required for convergence.
pub const MIN_REGISTERED_FRACTION: f64 = 0.8;
/// Mean reprojection error must stay below this for convergence.
pub const MAX_CONVERGED_ERROR_PX: f64 = 2.0;

pub const TIMING_CSV_HEADER: &str = "trajectory,strategy,match_s,map_s,converged";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub match_seconds: f64,
    pub map_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfmReport {
    pub mean_reprojection_error_px: f64,
    pub avg_observations_per_image: f64,
    pub mean_track_length: f64,
    pub registered_images: usize,
    pub total_images: usize,
    pub points: usize,
    pub observations: usize,
    pub converged: bool,
    pub match_seconds: f64,
    pub map_seconds: f64,
}

impl SfmReport {
    pub fn geometry(&self) -> GeometryStats {
        GeometryStats {
            mean_reprojection_error_px: self.mean_reprojection_error_px,
            avg_observations_per_image: self.avg_observations_per_image,
            mean_track_length: self.mean_track_length,
        }
    }

    /// Report for a reconstruction that produced no model at all.
    pub fn failed(total_images: usize, timings: Timings) -> Self {
        Self {
            mean_reprojection_error_px: 0.0,
            avg_observations_per_image: 0.0,
            mean_track_length: 0.0,
            registered_images: 0,
            total_images,
            points: 0,
            observations: 0,
            converged: false,
            match_seconds: timings.match_seconds,
            map_seconds: timings.map_seconds,
        }
    }
}

/// Counts observations, registered images and points of `model`.
///
/// `total_images` is the size of the input sequence, which decides convergence.
pub fn compute_sfm_stats(model: &SparseModel, total_images: usize, timings: Timings) -> Result<SfmReport, SfmError> {
    if model.images.is_empty() || model.points.is_empty() {
        return Err(SfmError::EmptyModel);
    }
    let mut observations = 0usize;
    let mut error_sum = 0.0;
    for p in model.points.values() {
        for o in &p.track {
            let r = model
                .residual(p, o)
                .ok_or_else(|| SfmError::InvalidModel(format!("observation {o:?} is not projectable")))?;
            error_sum += r.norm();
            observations += 1;
        }
    }
    let registered = model.images.len();
    let mean_reprojection_error_px = error_sum / observations as f64;
    let converged = registered as f64 >= MIN_REGISTERED_FRACTION * total_images as f64
        && mean_reprojection_error_px < MAX_CONVERGED_ERROR_PX;
    Ok(SfmReport {
        mean_reprojection_error_px,
        avg_observations_per_image: observations as f64 / registered as f64,
        mean_track_length: observations as f64 / model.points.len() as f64,
        registered_images: registered,
        total_images,
        points: model.points.len(),
        observations,
        converged,
        match_seconds: timings.match_seconds,
        map_seconds: timings.map_seconds,
    })
}

/// One timing row per `(trajectory, strategy, report)`.
pub fn write_timing_csv<W: Write>(out: W, rows: &[(String, String, SfmReport)]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TIMING_CSV_HEADER.split(','))?;
    for (trajectory, strategy, r) in rows {
        w.write_record([
            trajectory.clone(),
            strategy.clone(),
            format!("{:.3}", r.match_seconds),
            format!("{:.3}", r.map_seconds),
            if r.converged { "Yes" } else { "No" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
