//! Analytic gradients of the rasterizer.
//!
//! Per-pixel gradients are accumulated into per-tile buffers and reduced in
//! tile order, so results do not depend on the thread count.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::gaussian::Projected;
use super::render::{prepare, Contribution, Frame, TRANSMITTANCE_STOP};
use super::{RadianceError, SplatScene};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::par;
use crate::raster::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradients {
    pub means: Vec<Vector3<f64>>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    pub appearance: Vec<[f64; 6]>,
    /// Norm of the gradient on each projected mean in normalized device coordinates.
    pub mean2d_ndc_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

impl SceneGradients {
    pub fn zeros(n_gaussians: usize, n_images: usize) -> Self {
        SceneGradients {
            means: vec![Vector3::zeros(); n_gaussians],
            rotations: vec![[0.0; 4]; n_gaussians],
            log_scales: vec![Vector3::zeros(); n_gaussians],
            opacity_logits: vec![0.0; n_gaussians],
            colors: vec![[0.0; 3]; n_gaussians],
            appearance: vec![[0.0; 6]; n_images],
            mean2d_ndc_norm: vec![0.0; n_gaussians],
            visible: vec![false; n_gaussians],
        }
    }
}

/// Gradient with respect to the screen-space parameters of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct Grad2D {
    mean: [f64; 2],
    conic: [f64; 3],
    alpha: f64,
    color: [f64; 3],
}

impl Grad2D {
    fn add(&mut self, o: &Grad2D) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.alpha += o.alpha;
    }
}

fn tile_backward(frame: &Frame, tile: usize, grad_output: &Image, bg: [f64; 3]) -> Vec<Grad2D> {
    let list = &frame.tiles[tile];
    let mut grads = vec![Grad2D::default(); list.len()];
    let mut hits: Vec<(usize, Contribution, f64)> = Vec::new();
    for (x, y) in frame.tile_pixels(tile) {
        let g_pix = grad_output.pixel(x, y);
        if g_pix == [0.0; 3] {
            continue;
        }
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        hits.clear();
        let mut t = 1.0;
        for (slot, &si) in list.iter().enumerate() {
            let Some(c) = frame.splats[si as usize].contribution(px, py) else {
                continue;
            };
            let next = t * (1.0 - c.a);
            if next < TRANSMITTANCE_STOP {
                break;
            }
            hits.push((slot, c, t));
            t = next;
        }
        // Light arriving from behind splat i, weighted by transmittance at the pixel.
        let mut behind = [t * bg[0], t * bg[1], t * bg[2]];
        for &(slot, c, t_i) in hits.iter().rev() {
            let s = &frame.splats[list[slot] as usize];
            let gr = &mut grads[slot];
            let mut d_a = 0.0;
            for k in 0..3 {
                d_a += g_pix[k] * (t_i * s.color[k] - behind[k] / (1.0 - c.a));
                gr.color[k] += g_pix[k] * c.a * t_i;
                behind[k] += c.a * t_i * s.color[k];
            }
            if c.capped {
                continue;
            }
            gr.alpha += d_a * c.g;
            let d_q = -0.5 * c.g * d_a * s.alpha;
            let [ca, cb, cc] = s.conic;
            gr.conic[0] += d_q * c.dx * c.dx;
            gr.conic[1] += d_q * 2.0 * c.dx * c.dy;
            gr.conic[2] += d_q * c.dy * c.dy;
            gr.mean[0] -= d_q * 2.0 * (ca * c.dx + cb * c.dy);
            gr.mean[1] -= d_q * 2.0 * (cb * c.dx + cc * c.dy);
        }
    }
    grads
}

/// Partial derivatives of the rotation matrix with respect to (w, x, y, z).
fn quat_matrix_partials(q: &[f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = *q;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

struct Grad3D {
    mean: Vector3<f64>,
    rotation: [f64; 4],
    log_scale: Vector3<f64>,
    color_pre: [f64; 3],
    gain: [f64; 3],
    offset: [f64; 3],
    ndc: f64,
}

fn chain_to_3d(
    g2: &Grad2D,
    p: &Projected,
    raw: &super::Gaussian3D,
    w: &Matrix3<f64>,
    intr: &CameraIntrinsics,
    appearance: Option<&[f64; 6]>,
) -> Grad3D {
    let [ca, cb, cc] = p.conic;
    let conic = Matrix2::new(ca, cb, cb, cc);
    let g_conic = Matrix2::new(g2.conic[0], 0.5 * g2.conic[1], 0.5 * g2.conic[1], g2.conic[2]);
    let g_cov2 = -conic * g_conic * conic;
    let g_cov_cam = p.jac.transpose() * g_cov2 * p.jac;
    let g_jac: Matrix2x3<f64> = 2.0 * g_cov2 * p.jac * p.cov_cam;
    let g_cov_world = w.transpose() * g_cov_cam * w;

    let scale = raw.log_scale.map(f64::exp);
    let m = p.rot * Matrix3::from_diagonal(&scale);
    let g_m = 2.0 * g_cov_world * m;
    let g_rot = g_m * Matrix3::from_diagonal(&scale);
    let rt_gm = p.rot.transpose() * g_m;
    let log_scale = Vector3::from_fn(|k, _| rt_gm[(k, k)] * scale[k]);

    let partials = quat_matrix_partials(&p.unit_q);
    let g_unit: [f64; 4] = std::array::from_fn(|k| g_rot.component_mul(&partials[k]).sum());
    let norm = raw.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = (0..4).map(|k| g_unit[k] * p.unit_q[k]).sum();
    let rotation = std::array::from_fn(|k| (g_unit[k] - dot * p.unit_q[k]) / norm);

    let t = &p.t_cam;
    let (fx, fy) = (intr.fx, intr.fy);
    let iz = 1.0 / t.z;
    let (gu, gv) = (g2.mean[0], g2.mean[1]);
    let mut g_t = Vector3::new(gu * fx * iz, gv * fy * iz, -(gu * fx * t.x + gv * fy * t.y) * iz * iz);
    g_t.x += g_jac[(0, 2)] * (-fx * iz * iz);
    g_t.y += g_jac[(1, 2)] * (-fy * iz * iz);
    g_t.z += g_jac[(0, 0)] * (-fx * iz * iz)
        + g_jac[(0, 2)] * (2.0 * fx * t.x * iz * iz * iz)
        + g_jac[(1, 1)] * (-fy * iz * iz)
        + g_jac[(1, 2)] * (2.0 * fy * t.y * iz * iz * iz);
    let mean = w.transpose() * g_t;

    let (mut color_pre, mut gain, mut offset) = ([0.0; 3], [0.0; 3], [0.0; 3]);
    match appearance {
        None => color_pre = g2.color,
        Some(a) => {
            for k in 0..3 {
                let v = a[k] * raw.color[k] + a[k + 3];
                if (0.0..=1.0).contains(&v) {
                    color_pre[k] = g2.color[k] * a[k];
                    gain[k] = g2.color[k] * raw.color[k];
                    offset[k] = g2.color[k];
                }
            }
        }
    }
    let ndc = ((gu * 0.5 * intr.width as f64).powi(2) + (gv * 0.5 * intr.height as f64).powi(2)).sqrt();
    Grad3D { mean, rotation, log_scale, color_pre, gain, offset, ndc }
}

/// Gradients of `sum(grad_output * render)` with respect to every scene parameter.
pub fn rasterize_backward(
    scene: &SplatScene,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    appearance_id: Option<usize>,
    grad_output: &Image,
) -> Result<SceneGradients, RadianceError> {
    let frame = prepare(scene, pose, intr, appearance_id)?;
    let bg = scene.background;
    let per_tile: Vec<Vec<Grad2D>> =
        par::map_range(frame.n_tiles(), |tile| tile_backward(&frame, tile, grad_output, bg));

    let mut by_splat = vec![Grad2D::default(); frame.splats.len()];
    for (tile, grads) in per_tile.iter().enumerate() {
        for (slot, g) in grads.iter().enumerate() {
            by_splat[frame.tiles[tile][slot] as usize].add(g);
        }
    }

    let w = pose.rotation_matrix();
    let appearance = frame.appearance;
    let chained: Vec<Grad3D> = par::map_range(frame.splats.len(), |si| {
        let s = &frame.splats[si];
        let p = frame.projections[s.index].as_ref().expect("splats are projected");
        chain_to_3d(&by_splat[si], p, &scene.gaussians[s.index], &w, intr, appearance.as_ref())
    });

    let mut out = SceneGradients::zeros(scene.len(), scene.appearance.len());
    for (s, (g3, g2)) in frame.splats.iter().zip(chained.iter().zip(&by_splat)) {
        let i = s.index;
        let alpha = s.alpha;
        out.means[i] = g3.mean;
        out.rotations[i] = g3.rotation;
        out.log_scales[i] = g3.log_scale;
        out.opacity_logits[i] = g2.alpha * alpha * (1.0 - alpha);
        out.colors[i] = g3.color_pre;
        out.mean2d_ndc_norm[i] = g3.ndc;
        out.visible[i] = true;
        if let Some(id) = appearance_id {
            for k in 0..3 {
                out.appearance[id][k] += g3.gain[k];
                out.appearance[id][k + 3] += g3.offset[k];
            }
        }
    }
    Ok(out)
}
