//! Essential-matrix estimation and relative-pose recovery.

use nalgebra::{Matrix3, SMatrix, SymmetricEigen, UnitQuaternion, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::triangulate::{dlt, projection_matrix};
use super::SfmError;
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::geometry::angle_between;

#[derive(Clone, Debug, PartialEq)]
pub struct RobustConfig {
    /// Inlier threshold in pixels, converted to normalized coordinates with the mean focal length.
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    /// Median triangulation angle below this rejects the pair.
    pub min_parallax_deg: f64,
    pub seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            threshold_px: 2.0,
            confidence: 0.999,
            max_iterations: 10_000,
            min_inliers: 8,
            min_parallax_deg: 0.5,
            seed: 42,
        }
    }
}

/// Relative pose of the second camera with the first at the origin, `|t| = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoView {
    pub pose: CameraPose,
    pub essential: Matrix3<f64>,
    pub inliers: Vec<bool>,
    pub median_parallax_deg: f64,
}

impl TwoView {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

const SAMPLE: usize = 8;

fn hartley(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Normalized eight-point essential matrix from `>= 8` normalized correspondences.
fn eight_point(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    eight_point_weighted(x1, x2, None)
}

fn eight_point_weighted(x1: &[Vector2<f64>], x2: &[Vector2<f64>], weights: Option<&[f64]>) -> Option<Matrix3<f64>> {
    let (t1, t2) = (hartley(x1), hartley(x2));
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (i, (a, b)) in x1.iter().zip(x2).enumerate() {
        let p = t1 * Vector3::new(a.x, a.y, 1.0);
        let q = t2 * Vector3::new(b.x, b.y, 1.0);
        let row = SMatrix::<f64, 9, 1>::from_column_slice(&[
            q.x * p.x,
            q.x * p.y,
            q.x,
            q.y * p.x,
            q.y * p.y,
            q.y,
            p.x,
            p.y,
            1.0,
        ]);
        let w = weights.map_or(1.0, |w| w[i]);
        ata += w * row * row.transpose();
    }
    let eig = SymmetricEigen::new(ata);
    let (k, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let e = eig.eigenvectors.column(k);
    let e_hat = Matrix3::new(e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]);
    let e = t2.transpose() * e_hat * t1;
    let svd = e.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let e = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t;
    e.iter().all(|v| v.is_finite()).then_some(e)
}

/// Epipolar residual and squared gradient norm of a normalized correspondence.
#[inline]
fn epipolar_terms(e: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> (f64, f64) {
    let p = Vector3::new(a.x, a.y, 1.0);
    let q = Vector3::new(b.x, b.y, 1.0);
    let ep = e * p;
    let etq = e.transpose() * q;
    (q.dot(&ep), ep.x * ep.x + ep.y * ep.y + etq.x * etq.x + etq.y * etq.y)
}

/// Squared Sampson distance of a normalized correspondence.
#[inline]
fn sampson(e: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let (num, den) = epipolar_terms(e, a, b);
    if den <= 0.0 {
        return f64::INFINITY;
    }
    num * num / den
}

/// Sampson-normalized, Cauchy-robust reweighted eight-point on the consensus set.
///
/// The Cauchy scale follows the MAD of the current Sampson distances, floored at `min_scale`.
fn irls_refit(e: &Matrix3<f64>, x1: &[Vector2<f64>], x2: &[Vector2<f64>], min_scale: f64) -> Option<Matrix3<f64>> {
    let mut e = *e;
    for _ in 0..10 {
        let terms: Vec<(f64, f64)> = x1.iter().zip(x2).map(|(a, b)| epipolar_terms(&e, a, b)).collect();
        let mut d: Vec<f64> =
            terms.iter().map(|&(num, den)| if den > 0.0 { num.abs() / den.sqrt() } else { f64::INFINITY }).collect();
        let dist = d.clone();
        d.sort_by(f64::total_cmp);
        let sigma = (1.4826 * d[d.len() / 2]).max(min_scale);
        let w: Vec<f64> = terms
            .iter()
            .zip(&dist)
            .map(|(&(_, den), &di)| if den > 0.0 { 1.0 / (den * (1.0 + (di / (2.0 * sigma)).powi(2))) } else { 0.0 })
            .collect();
        e = eight_point_weighted(x1, x2, Some(&w))?;
    }
    Some(e)
}

fn score(e: &Matrix3<f64>, x1: &[Vector2<f64>], x2: &[Vector2<f64>], thr2: f64) -> Vec<bool> {
    x1.iter().zip(x2).map(|(a, b)| sampson(e, a, b) < thr2).collect()
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

fn ransac_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let p = inlier_ratio.powi(SAMPLE as i32);
    if p >= 1.0 {
        return 1;
    }
    if p <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p).ln();
    (n.ceil() as usize).clamp(1, cap)
}

fn normalized(intr: &CameraIntrinsics, px: &Vector2<f64>) -> Vector2<f64> {
    intr.normalize(&intr.undistort_pixel(px))
}

/// Robust essential matrix and inlier mask, without checking parallax or cheirality.
pub fn verify_pair(
    pts_a: &[Vector2<f64>],
    pts_b: &[Vector2<f64>],
    intr: &CameraIntrinsics,
    cfg: &RobustConfig,
) -> Result<(Matrix3<f64>, Vec<bool>), SfmError> {
    let n = pts_a.len();
    if n != pts_b.len() {
        return Err(SfmError::PairRejected(format!("{n} vs {} points", pts_b.len())));
    }
    if n < SAMPLE {
        return Err(SfmError::PairRejected(format!("{n} matches, need {SAMPLE}")));
    }
    let x1: Vec<_> = pts_a.iter().map(|p| normalized(intr, p)).collect();
    let x2: Vec<_> = pts_b.iter().map(|p| normalized(intr, p)).collect();
    let thr = cfg.threshold_px / intr.mean_focal();
    let thr2 = thr * thr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Matrix3<f64>, Vec<bool>)> = None;
    let mut best_count = 0;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    let (mut s1, mut s2) = (Vec::with_capacity(SAMPLE), Vec::with_capacity(SAMPLE));
    while iter < needed {
        iter += 1;
        s1.clear();
        s2.clear();
        for i in rand::seq::index::sample(&mut rng, n, SAMPLE) {
            s1.push(x1[i]);
            s2.push(x2[i]);
        }
        let Some(e) = eight_point(&s1, &s2) else {
            continue;
        };
        let mask = score(&e, &x1, &x2, thr2);
        let c = count(&mask);
        if c > best_count {
            best_count = c;
            best = Some((e, mask));
            needed = ransac_iterations(c as f64 / n as f64, cfg.confidence, cfg.max_iterations);
        }
    }
    let (mut e, mut mask) = best.ok_or_else(|| SfmError::PairRejected("no non-degenerate sample".into()))?;
    // polish on the consensus set while it keeps growing
    for _ in 0..3 {
        let (i1, i2): (Vec<_>, Vec<_>) = (0..n).filter(|&i| mask[i]).map(|i| (x1[i], x2[i])).unzip();
        if i1.len() < SAMPLE {
            break;
        }
        let Some(refit) = irls_refit(&e, &i1, &i2, 0.01 * thr) else {
            break;
        };
        let refit_mask = score(&refit, &x1, &x2, thr2);
        if count(&refit_mask) < count(&mask) {
            break;
        }
        e = refit;
        mask = refit_mask;
    }
    if count(&mask) < cfg.min_inliers {
        return Err(SfmError::PairRejected(format!("{} inliers, need {}", count(&mask), cfg.min_inliers)));
    }
    Ok((e, mask))
}

/// The four `(R, t)` factorizations of an essential matrix.
fn decompose(e: &Matrix3<f64>) -> Option<[(Matrix3<f64>, Vector3<f64>); 4]> {
    let svd = e.svd(true, true);
    let (mut u, mut v_t) = (svd.u?, svd.v_t?);
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t = u.column(2).into_owned();
    Some([(r1, t), (r1, -t), (r2, t), (r2, -t)])
}

fn essential_from(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
    crate::geometry::skew(t) * r
}

fn sampson_residuals(e: &Matrix3<f64>, x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Vec<f64> {
    x1.iter()
        .zip(x2)
        .map(|(a, b)| {
            let (num, den) = epipolar_terms(e, a, b);
            if den > 0.0 {
                num / den.sqrt()
            } else {
                0.0
            }
        })
        .collect()
}

fn cauchy_weights(res: &[f64], min_scale: f64) -> Vec<f64> {
    let mut a: Vec<f64> = res.iter().map(|v| v.abs()).collect();
    a.sort_by(f64::total_cmp);
    let sigma = (1.4826 * a[a.len() / 2]).max(min_scale);
    res.iter().map(|v| 1.0 / (1.0 + (v / (2.0 * sigma)).powi(2))).collect()
}

/// Reweighted Levenberg-Marquardt on the Sampson residuals; `t` stays on the unit sphere.
fn refine_relative_pose(
    r: Matrix3<f64>,
    t: Vector3<f64>,
    x1: &[Vector2<f64>],
    x2: &[Vector2<f64>],
    min_scale: f64,
) -> (Matrix3<f64>, Vector3<f64>) {
    let apply = |r: &Matrix3<f64>, t: &Vector3<f64>, d: &nalgebra::Vector5<f64>| {
        let dr = nalgebra::Rotation3::from_scaled_axis(Vector3::new(d[0], d[1], d[2])).into_inner();
        // tangent basis of the sphere at t
        let a = if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let b1 = t.cross(&a).normalize();
        let b2 = t.cross(&b1);
        (dr * r, (t + d[3] * b1 + d[4] * b2).normalize())
    };
    let cost = |r: &Matrix3<f64>, t: &Vector3<f64>, w: &[f64]| -> f64 {
        sampson_residuals(&essential_from(r, t), x1, x2).iter().zip(w).map(|(v, w)| w * v * v).sum()
    };
    let (mut r, mut t) = (r, t);
    let mut lambda = 1e-3;
    let h = 1e-7;
    for _ in 0..30 {
        let base = sampson_residuals(&essential_from(&r, &t), x1, x2);
        let w = cauchy_weights(&base, min_scale);
        let c = cost(&r, &t, &w);
        let base: Vec<f64> = base.iter().zip(&w).map(|(v, w)| v * w.sqrt()).collect();
        let mut jac = nalgebra::DMatrix::<f64>::zeros(base.len(), 5);
        for k in 0..5 {
            let mut d = nalgebra::Vector5::zeros();
            d[k] = h;
            let (rk, tk) = apply(&r, &t, &d);
            for (i, v) in sampson_residuals(&essential_from(&rk, &tk), x1, x2).iter().enumerate() {
                jac[(i, k)] = (v * w[i].sqrt() - base[i]) / h;
            }
        }
        let res = nalgebra::DVector::from_vec(base);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * res;
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj.clone();
            for k in 0..5 {
                a[(k, k)] += lambda * (jtj[(k, k)] + 1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let d = nalgebra::Vector5::from_iterator(step.iter().copied());
            let (rn, tn) = apply(&r, &t, &d);
            let cn = cost(&rn, &tn, &w);
            if cn < c {
                let rel = (c - cn) / c.max(f64::MIN_POSITIVE);
                (r, t) = (rn, tn);
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (r, t)
}

/// Relative pose from pixel correspondences via a robust essential matrix.
pub fn estimate_two_view(
    pts_a: &[Vector2<f64>],
    pts_b: &[Vector2<f64>],
    intr: &CameraIntrinsics,
    cfg: &RobustConfig,
) -> Result<TwoView, SfmError> {
    let (e, mask) = verify_pair(pts_a, pts_b, intr, cfg)?;
    let x1: Vec<_> = pts_a.iter().map(|p| normalized(intr, p)).collect();
    let x2: Vec<_> = pts_b.iter().map(|p| normalized(intr, p)).collect();
    let mut candidates = decompose(&e).ok_or_else(|| SfmError::PairRejected("essential SVD failed".into()))?;
    let (i1, i2): (Vec<_>, Vec<_>) = (0..x1.len()).filter(|&i| mask[i]).map(|i| (x1[i], x2[i])).unzip();
    // sign choices share one essential matrix, so refine once and re-split
    let (r0, t0) =
        refine_relative_pose(candidates[0].0, candidates[0].1, &i1, &i2, 0.01 * cfg.threshold_px / intr.mean_focal());
    let e = essential_from(&r0, &t0);
    if let Some(c) = decompose(&e) {
        candidates = c;
    }

    let first = projection_matrix(&CameraPose::identity());
    let mut best: Option<(CameraPose, Vec<bool>, Vec<f64>)> = None;
    for (r, t) in candidates {
        let rot = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
        let pose = CameraPose::new(rot, t);
        let second = projection_matrix(&pose);
        let mut front = vec![false; mask.len()];
        let mut angles = Vec::new();
        for i in (0..mask.len()).filter(|&i| mask[i]) {
            let Some(x) = dlt(&[(first, x1[i]), (second, x2[i])]) else {
                continue;
            };
            if x.z > 0.0 && pose.transform(&x).z > 0.0 {
                front[i] = true;
                angles.push(angle_between(&x, &(x - pose.center())).to_degrees());
            }
        }
        if best.as_ref().is_none_or(|b| count(&front) > count(&b.1)) {
            best = Some((pose, front, angles));
        }
    }
    let (pose, inliers, mut angles) = best.expect("four candidates");
    if count(&inliers) < cfg.min_inliers {
        return Err(SfmError::PairRejected(format!("{} points in front of both cameras", count(&inliers))));
    }
    angles.sort_by(f64::total_cmp);
    let median_parallax_deg = angles[angles.len() / 2];
    if median_parallax_deg < cfg.min_parallax_deg {
        return Err(SfmError::PairRejected(format!(
            "median parallax {median_parallax_deg:.3} deg below {} deg",
            cfg.min_parallax_deg
        )));
    }
    Ok(TwoView { pose, essential: e, inliers, median_parallax_deg })
}
