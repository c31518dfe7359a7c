//! Absolute pose from 2D-3D correspondences, optionally seeded by a pose prior.

use nalgebra::{Matrix3, Matrix6, Rotation3, SMatrix, SymmetricEigen, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::triangulate::project_with_jacobian;
use super::{ModelImage, Observation, SfmError, SparseModel};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::geometry::skew;
use crate::ingest::PosePrior;

#[derive(Clone, Debug, PartialEq)]
pub struct PnpConfig {
    pub threshold_px: f64,
    pub min_inliers: usize,
    pub confidence: f64,
    pub max_iterations: usize,
    pub refine_iterations: usize,
    pub huber_delta_px: f64,
    pub seed: u64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            threshold_px: 4.0,
            min_inliers: 6,
            confidence: 0.999,
            max_iterations: 2000,
            refine_iterations: 30,
            huber_delta_px: 1.5,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnpResult {
    pub pose: CameraPose,
    pub inliers: Vec<bool>,
    pub mean_error_px: f64,
}

impl PnpResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

const DLT_SAMPLE: usize = 6;

/// Six-point DLT in normalized coordinates, projected onto a rigid pose.
fn dlt_pose(corrs: &[(Vector2<f64>, Vector3<f64>)]) -> Option<CameraPose> {
    let n = corrs.len() as f64;
    let c = corrs.iter().fold(Vector3::zeros(), |a, (_, x)| a + x) / n;
    let spread = corrs.iter().map(|(_, x)| (x - c).norm()).sum::<f64>() / n;
    if spread <= 0.0 {
        return None;
    }
    let s = 1.0 / spread;
    let mut ata = SMatrix::<f64, 12, 12>::zeros();
    for (uv, x) in corrs {
        let p = (x - c) * s;
        let xh = [p.x, p.y, p.z, 1.0];
        let mut r1 = SMatrix::<f64, 12, 1>::zeros();
        let mut r2 = SMatrix::<f64, 12, 1>::zeros();
        for k in 0..4 {
            r1[k] = xh[k];
            r1[8 + k] = -uv.x * xh[k];
            r2[4 + k] = xh[k];
            r2[8 + k] = -uv.y * xh[k];
        }
        ata += r1 * r1.transpose() + r2 * r2.transpose();
    }
    let eig = SymmetricEigen::new(ata);
    let (k, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let v = eig.eigenvectors.column(k);
    let m_hat = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let p4_hat = Vector3::new(v[3], v[7], v[11]);
    // undo the point normalization: P = P_hat [sI, -s c; 0, 1]
    let mut m = m_hat * s;
    let mut p4 = p4_hat - m_hat * c * s;
    let det = m.determinant();
    if !det.is_finite() || det.abs() < 1e-300 {
        return None;
    }
    if det < 0.0 {
        m = -m;
        p4 = -p4;
    }
    let scale = m.determinant().cbrt();
    let svd = (m / scale).svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        r = -r;
    }
    let pose = CameraPose::new(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)), p4 / scale);
    pose.translation.iter().all(|v| v.is_finite()).then_some(pose)
}

fn errors(pose: &CameraPose, corrs: &[(Vector2<f64>, Vector3<f64>)], intr: &CameraIntrinsics) -> Vec<f64> {
    corrs
        .iter()
        .map(|(uv, x)| {
            let pc = pose.transform(x);
            if pc.z <= 0.0 {
                f64::INFINITY
            } else {
                (intr.project(&pc) - uv).norm()
            }
        })
        .collect()
}

fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        e * e
    } else {
        2.0 * delta * e - delta * delta
    }
}

fn robust_cost(pose: &CameraPose, corrs: &[(Vector2<f64>, Vector3<f64>)], intr: &CameraIntrinsics, delta: f64) -> f64 {
    errors(pose, corrs, intr).into_iter().map(|e| huber(e, delta)).sum()
}

/// Levenberg-Marquardt on the Huber-weighted pixel error over `corrs`.
pub(crate) fn refine_pose(
    mut pose: CameraPose,
    corrs: &[(Vector2<f64>, Vector3<f64>)],
    intr: &CameraIntrinsics,
    iterations: usize,
    delta: f64,
) -> CameraPose {
    let mut cost = robust_cost(&pose, corrs, intr, delta);
    let mut lambda = 1e-3;
    for _ in 0..iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (uv, x) in corrs {
            let rx = pose.rotation * x;
            let pc = rx + pose.translation;
            if pc.z <= 0.0 {
                continue;
            }
            let (proj, jp) = project_with_jacobian(intr, &pc);
            let r = proj - uv;
            let e = r.norm();
            let w = if e <= delta { 1.0 } else { delta / e };
            let mut j = SMatrix::<f64, 2, 6>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -skew(&rx)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
            h += w * j.transpose() * j;
            g += w * j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] += lambda * (h[(k, k)] + 1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = CameraPose::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(step[0], step[1], step[2])) * pose.rotation,
                pose.translation + Vector3::new(step[3], step[4], step[5]),
            );
            let cand_cost = robust_cost(&cand, corrs, intr, delta);
            if cand_cost < cost {
                let rel = (cost - cand_cost) / cost.max(1e-300);
                pose = cand;
                cost = cand_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}

fn ransac_dlt(corrs: &[(Vector2<f64>, Vector3<f64>)], intr: &CameraIntrinsics, cfg: &PnpConfig) -> Option<CameraPose> {
    let n = corrs.len();
    if n < DLT_SAMPLE {
        return None;
    }
    let normalized: Vec<_> = corrs.iter().map(|(uv, x)| (intr.normalize(uv), *x)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(CameraPose, usize)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    let mut sample = Vec::with_capacity(DLT_SAMPLE);
    while iter < needed {
        iter += 1;
        sample.clear();
        sample.extend(rand::seq::index::sample(&mut rng, n, DLT_SAMPLE).into_iter().map(|i| normalized[i]));
        let Some(pose) = dlt_pose(&sample) else {
            continue;
        };
        let c = errors(&pose, corrs, intr).iter().filter(|&&e| e < cfg.threshold_px).count();
        if best.as_ref().is_none_or(|b| c > b.1) {
            best = Some((pose, c));
            let w = c as f64 / n as f64;
            let p = w.powi(DLT_SAMPLE as i32);
            needed = if p >= 1.0 {
                1
            } else if p <= 0.0 {
                cfg.max_iterations
            } else {
                (((1.0 - cfg.confidence).ln() / (1.0 - p).ln()).ceil() as usize).clamp(1, cfg.max_iterations)
            };
        }
    }
    let (pose, _) = best?;
    // linear fit on the consensus set before the nonlinear stage
    let inl: Vec<_> = normalized
        .iter()
        .zip(errors(&pose, corrs, intr))
        .filter(|(_, e)| *e < cfg.threshold_px)
        .map(|(c, _)| *c)
        .collect();
    if inl.len() >= DLT_SAMPLE {
        if let Some(refit) = dlt_pose(&inl) {
            return Some(refit);
        }
    }
    Some(pose)
}

fn finish(
    start: CameraPose,
    corrs: &[(Vector2<f64>, Vector3<f64>)],
    intr: &CameraIntrinsics,
    cfg: &PnpConfig,
) -> PnpResult {
    let pose = refine_pose(start, corrs, intr, cfg.refine_iterations, cfg.huber_delta_px);
    let inliers: Vec<bool> = errors(&pose, corrs, intr).iter().map(|&e| e < cfg.threshold_px).collect();
    let inlier_corrs: Vec<_> = corrs.iter().zip(&inliers).filter(|(_, &b)| b).map(|(c, _)| *c).collect();
    let pose = if inlier_corrs.len() >= 3 {
        refine_pose(pose, &inlier_corrs, intr, cfg.refine_iterations, cfg.huber_delta_px)
    } else {
        pose
    };
    let errs = errors(&pose, corrs, intr);
    let inliers: Vec<bool> = errs.iter().map(|&e| e < cfg.threshold_px).collect();
    let k = inliers.iter().filter(|&&b| b).count();
    let mean_error_px = if k == 0 {
        f64::INFINITY
    } else {
        errs.iter().zip(&inliers).filter(|(_, &b)| b).map(|(e, _)| e).sum::<f64>() / k as f64
    };
    PnpResult { pose, inliers, mean_error_px }
}

/// Camera pose from pixel/world correspondences.
///
/// A prior with an orientation seeds the refinement directly; otherwise (and
/// additionally, when enough correspondences exist) a RANSAC DLT supplies the
/// start. The candidate with more inliers wins.
pub fn estimate_pose(
    image_id: u32,
    corrs: &[(Vector2<f64>, Vector3<f64>)],
    intr: &CameraIntrinsics,
    prior: Option<&PosePrior>,
    cfg: &PnpConfig,
) -> Result<PnpResult, SfmError> {
    let prior_pose = prior.and_then(PosePrior::pose);
    if corrs.len() < 4 && prior_pose.is_none() {
        return Err(SfmError::TooFewCorrespondences { image: image_id, found: corrs.len(), needed: 4 });
    }
    let mut starts: Vec<CameraPose> = prior_pose.into_iter().collect();
    if let Some(p) = ransac_dlt(corrs, intr, cfg) {
        starts.push(p);
    }
    let best = starts
        .into_iter()
        .map(|s| finish(s, corrs, intr, cfg))
        .max_by(|a, b| a.inlier_count().cmp(&b.inlier_count()).then(b.mean_error_px.total_cmp(&a.mean_error_px)));
    match best {
        Some(r) if r.inlier_count() >= cfg.min_inliers => Ok(r),
        other => Err(SfmError::RegistrationRejected {
            image: image_id,
            inliers: other.map_or(0, |r| r.inlier_count()),
            needed: cfg.min_inliers,
        }),
    }
}

/// Registers `image_id` into `model` and extends the tracks of inlier points.
///
/// `corrs` pairs keypoint indices of the new image with existing point ids.
pub fn register_next_image(
    model: &mut SparseModel,
    image_id: u32,
    name: &str,
    keypoints: Vec<Vector2<f64>>,
    corrs: &[(usize, u64)],
    prior: Option<&PosePrior>,
    cfg: &PnpConfig,
) -> Result<CameraPose, SfmError> {
    let pairs: Vec<(Vector2<f64>, Vector3<f64>)> =
        corrs.iter().filter_map(|&(kp, pid)| model.points.get(&pid).map(|p| (keypoints[kp], p.position))).collect();
    let result = estimate_pose(image_id, &pairs, &model.intrinsics, prior, cfg)?;
    let valid: Vec<&(usize, u64)> = corrs.iter().filter(|(_, pid)| model.points.contains_key(pid)).collect();
    for (&&(kp, pid), &inlier) in valid.iter().zip(&result.inliers) {
        if !inlier {
            continue;
        }
        let point = model.points.get_mut(&pid).expect("filtered above");
        if point.track.iter().any(|o| o.image_id == image_id) {
            continue;
        }
        point.track.push(Observation { image_id, keypoint: kp as u32 });
        point.track.sort();
    }
    model.images.insert(image_id, ModelImage { name: name.to_string(), pose: result.pose, keypoints });
    Ok(result.pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0, 640, 480)
    }

    fn truth() -> CameraPose {
        CameraPose::look_at(Vector3::new(1.0, -0.5, -6.0), Vector3::new(0.0, 0.2, 0.0), -Vector3::y())
    }

    fn world_points(seed: u64, n: usize) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))
            })
            .collect()
    }

    #[test]
    fn exact_correspondences_recover_pose() {
        let k = intr();
        let t = truth();
        let corrs: Vec<_> = world_points(1, 30).into_iter().map(|x| (k.project(&t.transform(&x)), x)).collect();
        let r = estimate_pose(3, &corrs, &k, None, &PnpConfig::default()).unwrap();
        assert_eq!(r.inlier_count(), 30);
        assert!(r.pose.rotation.angle_to(&t.rotation) < 1e-6);
        assert!((r.pose.center() - t.center()).norm() < 1e-6);
    }

    #[test]
    fn prior_without_correspondences_is_rejected() {
        let t = truth();
        let prior = PosePrior::new(0, t.center(), 0.05).with_orientation(t.rotation);
        let r = estimate_pose(7, &[], &intr(), Some(&prior), &PnpConfig::default());
        assert_eq!(r, Err(SfmError::RegistrationRejected { image: 7, inliers: 0, needed: 6 }));
        let r = estimate_pose(7, &[], &intr(), None, &PnpConfig::default());
        assert!(matches!(r, Err(SfmError::TooFewCorrespondences { .. })));
    }

    #[test]
    fn displaced_prior_with_noisy_correspondences() {
        let k = intr();
        let t = truth();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..20 {
            let corrs: Vec<_> = world_points(100 + trial, 20)
                .into_iter()
                .map(|x| {
                    let uv = k.project(&t.transform(&x)) + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                    (uv, x)
                })
                .collect();
            let dir =
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let prior = PosePrior::new(0, t.center() + 0.5 * dir.normalize(), 0.5).with_orientation(t.rotation);
            let r = estimate_pose(1, &corrs, &k, Some(&prior), &PnpConfig::default()).unwrap();
            let err = (r.pose.center() - t.center()).norm();
            assert!(err < 0.05, "trial {trial}: position error {err}");
        }
    }

    #[test]
    fn outliers_do_not_capture_the_pose() {
        let k = intr();
        let t = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut corrs: Vec<_> = world_points(4, 40).into_iter().map(|x| (k.project(&t.transform(&x)), x)).collect();
        for c in corrs.iter_mut().take(15) {
            c.0 = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        }
        let r = estimate_pose(2, &corrs, &k, None, &PnpConfig::default()).unwrap();
        assert!(r.inlier_count() >= 25);
        assert!((r.pose.center() - t.center()).norm() < 1e-6);
    }
}
