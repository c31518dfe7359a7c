//! Small rigid-body helpers shared by the geometric stages.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Angle in radians between two (not necessarily unit) vectors.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 form stays accurate for nearly parallel vectors
    a.cross(b).norm().atan2(a.dot(b))
}

/// Similarity `x -> s R x + t` mapping `src` onto `dst` in the least-squares sense.
#[derive(Clone, Copy, Debug)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

fn centroid(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().fold(Vector3::zeros(), |acc, p| acc + p) / pts.len() as f64
}

fn align(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Option<Similarity> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let mu_s = centroid(src);
    let mu_d = centroid(dst);
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if with_scale {
        if var_s <= 0.0 {
            return None;
        }
        (svd.singular_values.component_mul(&d.diagonal())).sum() / var_s
    } else {
        1.0
    };
    let translation = mu_d - scale * (rotation * mu_s);
    Some(Similarity { scale, rotation, translation })
}

/// Umeyama least-squares similarity alignment of corresponding point sets.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Similarity> {
    align(src, dst, true)
}

/// Kabsch rigid alignment (unit scale).
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Similarity> {
    align(src, dst, false)
}

/// Root-mean-square distance between corresponding points.
pub fn rmse(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    (sum / a.len().max(1) as f64).sqrt()
}

/// Left-multiplicative rotation update `exp([w]x) R`.
pub fn rotate_by(delta: &Vector3<f64>, r: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*delta) * r
}
