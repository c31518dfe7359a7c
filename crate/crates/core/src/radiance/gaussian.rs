use super::RadianceError;
use crate::camera::{CameraIntrinsics, CameraPose};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

/// Isotropic dilation added to every projected covariance, in pixels squared.
pub const COV_FLOOR_PX2: f64 = 0.3;
/// Gaussians whose camera-frame depth is at or below this are culled.
pub const Z_NEAR: f64 = 0.01;
/// Appearance parameters `(gain_r, gain_g, gain_b, offset_r, offset_g, offset_b)`.
pub const IDENTITY_APPEARANCE: [f64; 6] = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    /// Scalar-first quaternion; normalized wherever it is used.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        Gaussian3D {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_from_params(&self.rotation, &self.log_scale)
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.max().exp()
    }

    pub fn unit_rotation(&self) -> [f64; 4] {
        normalize_quat(&self.rotation)
    }
}

pub(crate) fn normalize_quat(q: &[f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit scalar-first quaternion.
pub(crate) fn quat_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `R diag(exp(2 s)) R^T` for rotation `q` and log-scales `s`.
pub fn covariance_from_params(q: &[f64; 4], log_scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = quat_matrix(&normalize_quat(q));
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    m * m.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2D {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
    pub alpha: f64,
    pub color: [f64; 3],
}

impl Gaussian2D {
    /// Inverse covariance packed as `(a, b, c)` for `a dx^2 + 2 b dx dy + c dy^2`.
    pub fn conic(&self) -> [f64; 3] {
        let (a, b, c) = (self.cov[(0, 0)], self.cov[(0, 1)], self.cov[(1, 1)]);
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }
}

/// Intermediate quantities of one projection, reused by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Projected {
    pub splat: Gaussian2D,
    pub conic: [f64; 3],
    pub t_cam: Vector3<f64>,
    pub jac: Matrix2x3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub rot: Matrix3<f64>,
    pub unit_q: [f64; 4],
}

pub(crate) fn project_full(g: &Gaussian3D, pose: &CameraPose, intr: &CameraIntrinsics) -> Option<Projected> {
    let w = pose.rotation_matrix();
    let t = w * g.mean + pose.translation;
    if !(t.z > Z_NEAR) {
        return None;
    }
    let (fx, fy) = (intr.fx, intr.fy);
    let iz = 1.0 / t.z;
    let jac = Matrix2x3::new(fx * iz, 0.0, -fx * t.x * iz * iz, 0.0, fy * iz, -fy * t.y * iz * iz);
    let unit_q = g.unit_rotation();
    let rot = quat_matrix(&unit_q);
    let m = rot * Matrix3::from_diagonal(&g.log_scale.map(f64::exp));
    let cov_world = m * m.transpose();
    let cov_cam = w * cov_world * w.transpose();
    let mut cov = jac * cov_cam * jac.transpose();
    // Symmetrize against rounding, then dilate.
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    cov[(0, 0)] += COV_FLOOR_PX2;
    cov[(1, 1)] += COV_FLOOR_PX2;
    let splat = Gaussian2D {
        mean: Vector2::new(fx * t.x * iz + intr.cx, fy * t.y * iz + intr.cy),
        cov,
        depth: t.z,
        alpha: g.opacity(),
        color: g.color,
    };
    let conic = splat.conic();
    Some(Projected { splat, conic, t_cam: t, jac, cov_cam, rot, unit_q })
}

/// Projects `g` into the image; `None` when it lies at or behind the near plane.
pub fn project_gaussian(g: &Gaussian3D, pose: &CameraPose, intr: &CameraIntrinsics) -> Option<Gaussian2D> {
    project_full(g, pose, intr).map(|p| p.splat)
}

/// Per-image affine color transform, clamped to the unit cube.
pub fn appearance_apply(color: [f64; 3], params: &[f64; 6]) -> [f64; 3] {
    std::array::from_fn(|k| (params[k] * color[k] + params[k + 3]).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatScene {
    pub gaussians: Vec<Gaussian3D>,
    pub appearance: Vec<[f64; 6]>,
    pub background: [f64; 3],
}

impl SplatScene {
    pub fn new(gaussians: Vec<Gaussian3D>, n_images: usize, background: [f64; 3]) -> Self {
        SplatScene { gaussians, appearance: vec![IDENTITY_APPEARANCE; n_images], background }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<(), RadianceError> {
        if self.gaussians.is_empty() {
            return Err(RadianceError::EmptyScene);
        }
        for (i, p) in self.appearance.iter().enumerate() {
            if p[..3].iter().any(|g| !(*g > 0.0)) {
                return Err(RadianceError::NonPositiveGain(i));
            }
        }
        Ok(())
    }

    pub(crate) fn appearance_for(&self, id: Option<usize>) -> Result<Option<[f64; 6]>, RadianceError> {
        match id {
            None => Ok(None),
            Some(i) => self
                .appearance
                .get(i)
                .copied()
                .map(Some)
                .ok_or(RadianceError::AppearanceOutOfRange { id: i, count: self.appearance.len() }),
        }
    }
}
