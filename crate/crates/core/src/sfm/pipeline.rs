//! Pair proposal, matching and mapping chained with wall-clock timings.

use std::time::Instant;

use super::mapper::{incremental_map, MapperConfig, MapperOutput};
use super::matching::{match_all, propose_pairs, PairStrategy};
use super::stats::{compute_sfm_stats, SfmReport, Timings};
use super::{Keypoint, SfmError};
use crate::camera::CameraIntrinsics;
use crate::ingest::PosePrior;

pub const DEFAULT_MATCH_RATIO: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub mapped: MapperOutput,
    pub report: SfmReport,
    pub pairs: usize,
}

/// Runs one strategy end to end. Prior residuals and prior seeding are
/// enabled exactly when the strategy uses priors.
///
/// A mapper that cannot initialize yields a non-converged report, not an error.
pub fn reconstruct(
    intrinsics: &CameraIntrinsics,
    names: &[String],
    features: &[Vec<Keypoint>],
    priors: &[Option<PosePrior>],
    strategy: &PairStrategy,
    ratio: f64,
    cfg: &MapperConfig,
) -> Result<Reconstruction, SfmError> {
    let t0 = Instant::now();
    let pairs = propose_pairs(features.len(), strategy, (!priors.is_empty()).then_some(priors))?;
    let matches = match_all(features, &pairs, ratio);
    let match_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let cfg = MapperConfig { use_priors: strategy.uses_priors(), ..cfg.clone() };
    let mapped = incremental_map(intrinsics, names, features, &matches, priors, &cfg)?;
    let timings = Timings { match_seconds, map_seconds: t1.elapsed().as_secs_f64() };
    let report = match compute_sfm_stats(&mapped.model, features.len(), timings) {
        Ok(r) => r,
        Err(SfmError::EmptyModel) => SfmReport::failed(features.len(), timings),
        Err(e) => return Err(e),
    };
    log::info!(
        "{}: {} pairs, {}/{} images registered, {} points, mean error {:.3} px",
        strategy.name(),
        pairs.len(),
        report.registered_images,
        report.total_images,
        report.points,
        report.mean_reprojection_error_px
    );
    Ok(Reconstruction { mapped, report, pairs: pairs.len() })
}
