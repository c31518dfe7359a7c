//! Levenberg-Marquardt bundle adjustment over poses and points.
//!
//! Cameras are parameterized by rotation and centre, `x_cam = R (X - c)`, so
//! position priors act on `c` directly. The point blocks are eliminated with
//! the Schur complement and the reduced camera system is solved densely.

use std::ops::{AddAssign, SubAssign};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, SMatrix, UnitQuaternion, Vector2, Vector3, Vector6};

use super::triangulate::project_with_jacobian;
use super::{SfmError, SparseModel};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::geometry::skew;
use crate::ingest::PosePrior;
use crate::par;

/// Priors on this many registered images fix the similarity gauge.
const PRIOR_GAUGE_MIN: usize = 3;
/// Residual charged for an observation behind its camera.
const BEHIND_PENALTY_PX: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct BundleConfig {
    pub max_iters: usize,
    /// Global multiplier on the per-axis `1/sigma^2` prior weights.
    pub prior_weight: f64,
    pub huber_delta_px: f64,
    /// Stop when the largest gradient entry falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub function_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            prior_weight: 1.0,
            huber_delta_px: 1.5,
            gradient_tolerance: 1e-9,
            function_tolerance: 1e-10,
            initial_lambda: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after initialization and after every accepted step.
    pub accepted_costs: Vec<f64>,
    pub gradient_norm: f64,
    pub converged: bool,
    /// True when prior residuals fixed the gauge and no camera was frozen.
    pub prior_gauge: bool,
}

#[derive(Clone, Copy)]
struct Cam {
    rot: UnitQuaternion<f64>,
    center: Vector3<f64>,
}

impl Cam {
    fn pose(&self) -> CameraPose {
        CameraPose::from_center(self.rot, self.center)
    }
}

struct Problem {
    intr: CameraIntrinsics,
    /// Camera slot per observation, aligned with `points[j].track`.
    obs_cam: Vec<Vec<usize>>,
    obs_uv: Vec<Vec<Vector2<f64>>>,
    /// `(slot, prior position, per-axis weight)`.
    priors: Vec<(usize, Vector3<f64>, Vector3<f64>)>,
    frozen: Vec<[bool; 6]>,
    delta: f64,
}

fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        e * e
    } else {
        2.0 * delta * e - delta * delta
    }
}

impl Problem {
    fn point_cost(&self, j: usize, cams: &[Cam], x: &Vector3<f64>) -> f64 {
        self.obs_cam[j]
            .iter()
            .zip(&self.obs_uv[j])
            .map(|(&c, uv)| {
                let pc = cams[c].rot * (x - cams[c].center);
                if pc.z <= 1e-9 {
                    huber(BEHIND_PENALTY_PX, self.delta)
                } else {
                    huber((self.intr.project(&pc) - uv).norm(), self.delta)
                }
            })
            .sum()
    }

    fn cost(&self, cams: &[Cam], pts: &[Vector3<f64>]) -> f64 {
        let per_point = par::map_range(pts.len(), |j| self.point_cost(j, cams, &pts[j]));
        let reproj: f64 = per_point.iter().sum();
        let prior: f64 = self
            .priors
            .iter()
            .map(|(slot, p, w)| {
                let d = cams[*slot].center - p;
                d.component_mul(&d).dot(w)
            })
            .sum();
        reproj + prior
    }
}

struct PointBlock {
    v: Matrix3<f64>,
    g: Vector3<f64>,
    /// `(camera slot, J_c^T W J_c, J_c^T W J_p, J_c^T W r)`.
    cams: Vec<(usize, Matrix6<f64>, Matrix6x3<f64>, Vector6<f64>)>,
}

fn linearize_point(prob: &Problem, j: usize, cams: &[Cam], x: &Vector3<f64>) -> PointBlock {
    let mut block =
        PointBlock { v: Matrix3::zeros(), g: Vector3::zeros(), cams: Vec::with_capacity(prob.obs_cam[j].len()) };
    for (&c, uv) in prob.obs_cam[j].iter().zip(&prob.obs_uv[j]) {
        let r_mat = cams[c].rot.to_rotation_matrix().into_inner();
        let pc = r_mat * (x - cams[c].center);
        if pc.z <= 1e-9 {
            continue;
        }
        let (proj, jp) = project_with_jacobian(&prob.intr, &pc);
        let r = proj - uv;
        let e = r.norm();
        let w = if e <= prob.delta { 1.0 } else { prob.delta / e };
        let mut jc = SMatrix::<f64, 2, 6>::zeros();
        jc.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -skew(&pc)));
        jc.fixed_view_mut::<2, 3>(0, 3).copy_from(&(jp * -r_mat));
        let jx = jp * r_mat;
        block.v += w * jx.transpose() * jx;
        block.g += w * jx.transpose() * r;
        block.cams.push((c, w * jc.transpose() * jc, w * jc.transpose() * jx, w * jc.transpose() * r));
    }
    block
}

fn apply(cams: &[Cam], pts: &[Vector3<f64>], dc: &DVector<f64>, dp: &[Vector3<f64>]) -> (Vec<Cam>, Vec<Vector3<f64>>) {
    let new_cams = cams
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let s = dc.fixed_rows::<6>(6 * i);
            Cam {
                rot: UnitQuaternion::from_scaled_axis(Vector3::new(s[0], s[1], s[2])) * c.rot,
                center: c.center + Vector3::new(s[3], s[4], s[5]),
            }
        })
        .collect();
    let new_pts = pts.iter().zip(dp).map(|(p, d)| p + d).collect();
    (new_cams, new_pts)
}

/// Refines every pose and point of `model` in place.
///
/// `priors[image_id]` supplies optional position priors. With priors on at
/// least three registered images the gauge is left to them; otherwise the
/// first camera and the largest component of the first baseline are frozen.
pub fn bundle_adjust(
    model: &mut SparseModel,
    priors: &[Option<PosePrior>],
    cfg: &BundleConfig,
) -> Result<BundleReport, SfmError> {
    if model.images.len() < 2 || model.points.len() < 10 {
        return Err(SfmError::Bundle(format!(
            "need >= 2 images and >= 10 points, have {} and {}",
            model.images.len(),
            model.points.len()
        )));
    }
    let ids: Vec<u32> = model.images.keys().copied().collect();
    let slot = |id: u32| ids.binary_search(&id).expect("observation of a registered image");
    let mut cams: Vec<Cam> = ids
        .iter()
        .map(|id| {
            let pose = model.images[id].pose;
            Cam { rot: pose.rotation, center: pose.center() }
        })
        .collect();
    let point_ids: Vec<u64> = model.points.keys().copied().collect();
    let mut pts: Vec<Vector3<f64>> = model.points.values().map(|p| p.position).collect();
    let (obs_cam, obs_uv): (Vec<Vec<usize>>, Vec<Vec<Vector2<f64>>>) = model
        .points
        .values()
        .map(|p| {
            p.track.iter().map(|o| (slot(o.image_id), model.images[&o.image_id].keypoints[o.keypoint as usize])).unzip()
        })
        .unzip();

    let prior_list: Vec<(usize, Vector3<f64>, Vector3<f64>)> = if cfg.prior_weight > 0.0 {
        ids.iter()
            .enumerate()
            .filter_map(|(s, &id)| {
                let p = priors.get(id as usize)?.as_ref()?;
                let w = p.position_sigma_m.map(|sig| cfg.prior_weight / (sig * sig));
                Some((s, p.position_m, w))
            })
            .collect()
    } else {
        Vec::new()
    };
    let prior_gauge = prior_list.len() >= PRIOR_GAUGE_MIN;
    let mut frozen = vec![[false; 6]; ids.len()];
    if !prior_gauge {
        frozen[0] = [true; 6];
        let baseline = cams[1].center - cams[0].center;
        let axis = baseline.iamax();
        frozen[1][3 + axis] = true;
    }
    let prob =
        Problem { intr: model.intrinsics, obs_cam, obs_uv, priors: prior_list, frozen, delta: cfg.huber_delta_px };

    let m = cams.len();
    let mut cost = prob.cost(&cams, &pts);
    if !cost.is_finite() {
        return Err(SfmError::Bundle("non-finite initial cost".into()));
    }
    let initial_cost = cost;
    let mut accepted = vec![cost];
    let mut lambda = cfg.initial_lambda;
    let mut converged = false;
    let mut gradient_norm = f64::INFINITY;
    let mut iterations = 0;

    'outer: while iterations < cfg.max_iters {
        iterations += 1;
        let blocks = par::map_range(pts.len(), |j| linearize_point(&prob, j, &cams, &pts[j]));
        let mut u = vec![Matrix6::<f64>::zeros(); m];
        let mut gc = vec![Vector6::<f64>::zeros(); m];
        for b in &blocks {
            for (c, jtj, _, jtr) in &b.cams {
                u[*c] += jtj;
                gc[*c] += jtr;
            }
        }
        for (s, p, w) in &prob.priors {
            let d = cams[*s].center - p;
            for k in 0..3 {
                u[*s][(3 + k, 3 + k)] += w[k];
                gc[*s][3 + k] += w[k] * d[k];
            }
        }
        // the gradient of the free variables decides convergence
        gradient_norm = 0.0f64;
        for (i, g) in gc.iter().enumerate() {
            for k in 0..6 {
                if !prob.frozen[i][k] {
                    gradient_norm = gradient_norm.max(g[k].abs());
                }
            }
        }
        for b in &blocks {
            gradient_norm = gradient_norm.max(b.g.amax());
        }
        if gradient_norm < cfg.gradient_tolerance {
            converged = true;
            break;
        }

        loop {
            let v_inv: Vec<Matrix3<f64>> = blocks
                .iter()
                .map(|b| {
                    let mut v = b.v;
                    for k in 0..3 {
                        v[(k, k)] += lambda * v[(k, k)] + 1e-12;
                    }
                    v.try_inverse().unwrap_or_else(Matrix3::zeros)
                })
                .collect();
            let mut s = DMatrix::<f64>::zeros(6 * m, 6 * m);
            let mut rhs = DVector::<f64>::zeros(6 * m);
            for i in 0..m {
                let mut ui = u[i];
                for k in 0..6 {
                    ui[(k, k)] += lambda * ui[(k, k)] + 1e-12;
                }
                s.fixed_view_mut::<6, 6>(6 * i, 6 * i).add_assign(&ui);
                rhs.fixed_rows_mut::<6>(6 * i).add_assign(&(-gc[i]));
            }
            for (b, vi) in blocks.iter().zip(&v_inv) {
                for (a, _, wa, _) in &b.cams {
                    let wv = wa * vi;
                    rhs.fixed_rows_mut::<6>(6 * a).add_assign(&(wv * b.g));
                    for (c, _, wc, _) in &b.cams {
                        let blk = wv * wc.transpose();
                        s.fixed_view_mut::<6, 6>(6 * a, 6 * c).sub_assign(&blk);
                    }
                }
            }
            for (i, fz) in prob.frozen.iter().enumerate() {
                for (k, &f) in fz.iter().enumerate() {
                    if f {
                        let r = 6 * i + k;
                        s.row_mut(r).fill(0.0);
                        s.column_mut(r).fill(0.0);
                        s[(r, r)] = 1.0;
                        rhs[r] = 0.0;
                    }
                }
            }
            let Some(chol) = s.cholesky() else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    break 'outer;
                }
                continue;
            };
            let dc = chol.solve(&rhs);
            let dp: Vec<Vector3<f64>> = blocks
                .iter()
                .zip(&v_inv)
                .map(|(b, vi)| {
                    let mut acc = -b.g;
                    for (c, _, wc, _) in &b.cams {
                        acc -= wc.transpose() * dc.fixed_rows::<6>(6 * c);
                    }
                    vi * acc
                })
                .collect();
            let (new_cams, new_pts) = apply(&cams, &pts, &dc, &dp);
            let new_cost = prob.cost(&new_cams, &new_pts);
            if !new_cost.is_finite() {
                return Err(SfmError::Bundle(format!("non-finite cost at iteration {iterations}")));
            }
            if new_cost < cost {
                let rel = (cost - new_cost) / cost.max(1e-300);
                cams = new_cams;
                pts = new_pts;
                cost = new_cost;
                accepted.push(cost);
                lambda = (lambda / 3.0).max(1e-12);
                if rel < cfg.function_tolerance {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                // no descent direction left at machine precision
                converged = true;
                break 'outer;
            }
        }
    }

    for (id, cam) in ids.iter().zip(&cams) {
        model.images.get_mut(id).expect("registered").pose = cam.pose();
    }
    for (pid, x) in point_ids.iter().zip(&pts) {
        model.points.get_mut(pid).expect("existing point").position = *x;
    }
    model.update_point_errors();
    Ok(BundleReport {
        initial_cost,
        final_cost: cost,
        iterations,
        accepted_costs: accepted,
        gradient_norm,
        converged,
        prior_gauge,
    })
}
