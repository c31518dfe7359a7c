//! Multi-view point triangulation.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x4, Matrix4, SymmetricEigen, Vector2, Vector3};

use super::SfmError;
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::geometry::angle_between;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangulationConfig {
    /// Largest pairwise ray angle must reach this.
    pub min_angle_deg: f64,
    /// Mean reprojection error above this rejects the point.
    pub max_error_px: f64,
    pub refine_iterations: usize,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self { min_angle_deg: 0.5, max_error_px: 4.0, refine_iterations: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangulatedPoint {
    pub position: Vector3<f64>,
    /// Mean pixel reprojection error over the observations.
    pub error_px: f64,
    /// Largest angle between two observing rays.
    pub angle_deg: f64,
}

pub(crate) fn projection_matrix(pose: &CameraPose) -> Matrix3x4<f64> {
    let mut p = Matrix3x4::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation_matrix());
    p.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
    p
}

/// Linear triangulation from normalized image coordinates.
pub(crate) fn dlt(views: &[(Matrix3x4<f64>, Vector2<f64>)]) -> Option<Vector3<f64>> {
    let mut ata = Matrix4::zeros();
    for (p, x) in views {
        for row in [x.x * p.row(2) - p.row(0), x.y * p.row(2) - p.row(1)] {
            let r = row.transpose();
            ata += r * r.transpose();
        }
    }
    let eig = SymmetricEigen::new(ata);
    let (k, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(k);
    if h[3].abs() < 1e-300 {
        return None;
    }
    let x = Vector3::new(h[0], h[1], h[2]) / h[3];
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Pixel projection and its Jacobian with respect to the camera-frame point.
#[inline]
pub(crate) fn project_with_jacobian(intr: &CameraIntrinsics, pc: &Vector3<f64>) -> (Vector2<f64>, Matrix2x3<f64>) {
    let iz = 1.0 / pc.z;
    let uv = Vector2::new(intr.fx * pc.x * iz + intr.cx, intr.fy * pc.y * iz + intr.cy);
    let j = Matrix2x3::new(intr.fx * iz, 0.0, -intr.fx * pc.x * iz * iz, 0.0, intr.fy * iz, -intr.fy * pc.y * iz * iz);
    (uv, j)
}

fn reprojection_cost(obs: &[(CameraPose, Vector2<f64>)], intr: &CameraIntrinsics, x: &Vector3<f64>) -> f64 {
    obs.iter()
        .map(|(pose, uv)| {
            let pc = pose.transform(x);
            if pc.z <= 0.0 {
                f64::INFINITY
            } else {
                (intr.project(&pc) - uv).norm_squared()
            }
        })
        .sum()
}

/// Gauss-Newton on the squared pixel error, accepting only improving steps.
pub(crate) fn refine_point(
    obs: &[(CameraPose, Vector2<f64>)],
    intr: &CameraIntrinsics,
    mut x: Vector3<f64>,
    iterations: usize,
) -> Vector3<f64> {
    let mut cost = reprojection_cost(obs, intr, &x);
    for _ in 0..iterations {
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for (pose, uv) in obs {
            let pc = pose.transform(&x);
            if pc.z <= 0.0 {
                continue;
            }
            let (proj, jp) = project_with_jacobian(intr, &pc);
            let j = jp * pose.rotation_matrix();
            let r = proj - uv;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&(-g))) else {
            break;
        };
        let cand = x + step;
        let cand_cost = reprojection_cost(obs, intr, &cand);
        if !(cand_cost < cost) {
            break;
        }
        let done = cost - cand_cost <= 1e-15 * cost.max(1e-30);
        x = cand;
        cost = cand_cost;
        if done {
            break;
        }
    }
    x
}

/// Largest angle between any two observing rays, in degrees.
fn max_ray_angle(obs: &[(CameraPose, Vector2<f64>)], intr: &CameraIntrinsics) -> f64 {
    let rays: Vec<Vector3<f64>> = obs
        .iter()
        .map(|(pose, uv)| {
            let n = intr.normalize(uv);
            pose.rotation.inverse() * Vector3::new(n.x, n.y, 1.0)
        })
        .collect();
    let mut best = 0.0f64;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            best = best.max(angle_between(&rays[i], &rays[j]));
        }
    }
    best.to_degrees()
}

/// Triangulates one track from its posed pixel observations.
pub fn triangulate_track(
    obs: &[(CameraPose, Vector2<f64>)],
    intr: &CameraIntrinsics,
    cfg: &TriangulationConfig,
) -> Result<TriangulatedPoint, SfmError> {
    if obs.len() < 2 {
        return Err(SfmError::PointRejected(format!("{} observation(s)", obs.len())));
    }
    // the ray angle is measured between directions; distinct centres are still needed
    let angle_deg = max_ray_angle(obs, intr);
    let baseline = obs.iter().map(|(p, _)| (p.center() - obs[0].0.center()).norm()).fold(0.0, f64::max);
    if angle_deg < cfg.min_angle_deg || baseline <= 0.0 {
        return Err(SfmError::PointRejected(format!(
            "triangulation angle {angle_deg:.3} deg below {} deg",
            cfg.min_angle_deg
        )));
    }
    let views: Vec<_> = obs.iter().map(|(pose, uv)| (projection_matrix(pose), intr.normalize(uv))).collect();
    let x0 = dlt(&views).ok_or_else(|| SfmError::PointRejected("degenerate linear system".into()))?;
    let x = refine_point(obs, intr, x0, cfg.refine_iterations);
    if obs.iter().any(|(pose, _)| pose.transform(&x).z <= 0.0) {
        return Err(SfmError::PointRejected("behind an observing camera".into()));
    }
    let error_px =
        obs.iter().map(|(pose, uv)| (intr.project(&pose.transform(&x)) - uv).norm()).sum::<f64>() / obs.len() as f64;
    if error_px > cfg.max_error_px {
        return Err(SfmError::PointRejected(format!("reprojection error {error_px:.2} px")));
    }
    Ok(TriangulatedPoint { position: x, error_px, angle_deg })
}
