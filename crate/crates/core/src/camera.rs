//! Pinhole intrinsics and world-to-camera poses.
//!
//! Pixel coordinates follow the convention that the centre of the top-left
//! pixel is at `(0.5, 0.5)`.

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside {width}x{height} image")]
    PrincipalPoint { cx: f64, cy: f64, width: u32, height: u32 },
}

/// Shared pinhole camera with optional radial-tangential distortion
/// `(k1, k2, p1, p2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub distortion: [f64; 4],
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self { fx, fy, cx, cy, width, height, distortion: [0.0; 4] }
    }

    /// Square-pixel camera centred on the image with the given horizontal
    /// field of view in degrees.
    pub fn from_fov(width: u32, height: u32, hfov_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::pinhole(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Focal { fx: self.fx, fy: self.fy });
        }
        let inside = self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64;
        if !inside {
            return Err(CameraError::PrincipalPoint {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        self.distortion.iter().any(|&d| d != 0.0)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// Pinhole projection of a camera-frame point (distortion ignored).
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Undistorted pixel -> normalized image plane coordinates.
    #[inline]
    pub fn normalize(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    #[inline]
    pub fn denormalize(&self, n: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * n.x + self.cx, self.fy * n.y + self.cy)
    }

    fn distort_normalized(&self, n: &Vector2<f64>) -> Vector2<f64> {
        let [k1, k2, p1, p2] = self.distortion;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        Vector2::new(
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    /// Maps an ideal pinhole pixel to where the distorted lens images it.
    pub fn distort_pixel(&self, px: &Vector2<f64>) -> Vector2<f64> {
        if !self.has_distortion() {
            return *px;
        }
        self.denormalize(&self.distort_normalized(&self.normalize(px)))
    }

    /// Inverse of [`distort_pixel`](Self::distort_pixel) by fixed-point iteration.
    pub fn undistort_pixel(&self, px: &Vector2<f64>) -> Vector2<f64> {
        if !self.has_distortion() {
            return *px;
        }
        let target = self.normalize(px);
        let mut n = target;
        for _ in 0..50 {
            let d = self.distort_normalized(&n);
            let step = target - d;
            n += step;
            if step.norm() < 1e-14 {
                break;
            }
        }
        self.denormalize(&n)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// Rigid world-to-camera transform `x_cam = R * x_world + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraPose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Pose from a camera centre in world coordinates and world-to-camera rotation.
    pub fn from_center(rotation: UnitQuaternion<f64>, center: Vector3<f64>) -> Self {
        Self { rotation, translation: -(rotation * center) }
    }

    /// Camera at `eye` looking at `target`; camera axes are x right, y down, z forward.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        Self::from_center(rotation, eye)
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.transform(&p.coords)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn inverse(&self) -> CameraPose {
        let rinv = self.rotation.inverse();
        CameraPose { rotation: rinv, translation: -(rinv * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Pose of `other` relative to `self`: maps camera-`self` coordinates to camera-`other`.
    pub fn relative_to(&self, other: &CameraPose) -> CameraPose {
        other.compose(&self.inverse())
    }

    /// Projects a world point; `None` when behind the camera.
    pub fn project(&self, intr: &CameraIntrinsics, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        let pc = self.transform(p);
        (pc.z > 0.0).then(|| intr.project(&pc))
    }
}
