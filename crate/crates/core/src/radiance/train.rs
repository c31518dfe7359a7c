//! Photometric optimization of a splat scene against posed images.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gaussian::{logit, quat_matrix};
use super::{rasterize, rasterize_backward, Gaussian3D, RadianceError, SceneGradients, SplatScene};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::metrics::{ssim_plane_with_grad, SSIM_WINDOW};
use crate::par;
use crate::raster::Image;

const PARAMS: usize = 14;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MIN_GAIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lambda_ssim: f64,
    pub densify_interval: usize,
    /// First step at which splitting and cloning may happen.
    pub densify_from: usize,
    /// Last step at which splitting and cloning may happen.
    pub densify_until: usize,
    pub tau_grad: f64,
    pub tau_prune: f64,
    pub split_factor: f64,
    /// Splats larger than this fraction of the scene extent are split rather than cloned.
    pub percent_dense: f64,
    pub max_gaussians: usize,
    /// Mean learning rate, multiplied by the scene extent; decays exponentially to `lr_means_final`.
    pub lr_means: f64,
    pub lr_means_final: f64,
    pub lr_scales: f64,
    pub lr_rotations: f64,
    pub lr_opacity: f64,
    pub lr_colors: f64,
    pub lr_appearance: f64,
    pub appearance: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lambda_ssim: 0.2,
            densify_interval: 100,
            densify_from: 500,
            densify_until: 1000,
            tau_grad: 2e-4,
            tau_prune: 0.005,
            split_factor: 1.6,
            percent_dense: 0.01,
            max_gaussians: 20_000,
            lr_means: 1.6e-4,
            lr_means_final: 1.6e-6,
            lr_scales: 5e-3,
            lr_rotations: 1e-3,
            lr_opacity: 5e-2,
            lr_colors: 2.5e-3,
            lr_appearance: 1e-3,
            appearance: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 19] = [
        "steps",
        "lambda_ssim",
        "densify_interval",
        "densify_from",
        "densify_until",
        "tau_grad",
        "tau_prune",
        "split_factor",
        "percent_dense",
        "max_gaussians",
        "lr_means",
        "lr_means_final",
        "lr_scales",
        "lr_rotations",
        "lr_opacity",
        "lr_colors",
        "lr_appearance",
        "appearance",
        "seed",
    ];

    /// Sets one option from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), RadianceError> {
        let bad = |reason: &str| RadianceError::Config { key: key.into(), value: value.into(), reason: reason.into() };
        let real = || {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| bad("expected a non-negative number"))
        };
        let int = || value.parse::<usize>().map_err(|_| bad("expected a non-negative integer"));
        match key {
            "steps" => self.steps = int()?,
            "lambda_ssim" => {
                self.lambda_ssim = real()?;
                if self.lambda_ssim > 1.0 {
                    return Err(bad("must lie in [0, 1]"));
                }
            }
            "densify_interval" => self.densify_interval = int()?.max(1),
            "densify_from" => self.densify_from = int()?,
            "densify_until" => self.densify_until = int()?,
            "tau_grad" => self.tau_grad = real()?,
            "tau_prune" => self.tau_prune = real()?,
            "split_factor" => {
                self.split_factor = real()?;
                if self.split_factor <= 1.0 {
                    return Err(bad("must exceed 1"));
                }
            }
            "percent_dense" => self.percent_dense = real()?,
            "max_gaussians" => self.max_gaussians = int()?,
            "lr_means" => self.lr_means = real()?,
            "lr_means_final" => self.lr_means_final = real()?,
            "lr_scales" => self.lr_scales = real()?,
            "lr_rotations" => self.lr_rotations = real()?,
            "lr_opacity" => self.lr_opacity = real()?,
            "lr_colors" => self.lr_colors = real()?,
            "lr_appearance" => self.lr_appearance = real()?,
            "appearance" => {
                self.appearance = match value {
                    "true" | "1" | "on" => true,
                    "false" | "0" | "off" => false,
                    _ => return Err(bad("expected true or false")),
                }
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an integer"))?,
            _ => return Err(bad("unknown key")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainView {
    pub image: Image,
    pub pose: CameraPose,
    /// Index into the scene's appearance table, if this view has one.
    pub appearance_id: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub scene: SplatScene,
    pub loss_history: Vec<f64>,
}

/// Initial splats from colored points: isotropic scale from the three nearest
/// neighbours, opacity 0.1.
pub fn init_from_points(points: &[(Vector3<f64>, [f64; 3])], n_images: usize, background: [f64; 3]) -> SplatScene {
    let scales = par::map_range(points.len(), |i| {
        let mut d2: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| (q.0 - points[i].0).norm_squared())
            .collect();
        d2.sort_by(f64::total_cmp);
        let k = d2.len().min(3);
        if k == 0 {
            return 0.01;
        }
        (d2[..k].iter().sum::<f64>() / k as f64).sqrt().max(1e-7)
    });
    let gaussians = points
        .iter()
        .zip(scales)
        .map(|((p, c), s)| Gaussian3D::isotropic(*p, s, 0.1, c.map(|v| v.clamp(0.0, 1.0))))
        .collect();
    SplatScene::new(gaussians, n_images, background)
}

/// Loss `(1 - lambda) L1 + lambda (1 - SSIM)` and its gradient on `rendered`.
fn photometric_loss(rendered: &Image, target: &Image, lambda: f64) -> (f64, Image) {
    let n = rendered.data().len() as f64;
    let mut grad = Image::new(rendered.width(), rendered.height());
    let mut l1 = 0.0;
    for ((g, r), t) in grad.data_mut().iter_mut().zip(rendered.data()).zip(target.data()) {
        let d = r - t;
        l1 += d.abs();
        *g = if d > 0.0 {
            (1.0 - lambda) / n
        } else if d < 0.0 {
            -(1.0 - lambda) / n
        } else {
            0.0
        };
    }
    l1 /= n;
    let (w, h) = rendered.dims();
    if lambda == 0.0 || w < SSIM_WINDOW || h < SSIM_WINDOW {
        return ((1.0 - lambda) * l1, grad);
    }
    let mut ssim = 0.0;
    for c in 0..3 {
        let (s, g) = ssim_plane_with_grad(&rendered.channel(c), &target.channel(c), 1.0)
            .expect("dimensions checked by the caller");
        ssim += s / 3.0;
        for (i, gv) in g.iter().enumerate() {
            grad.data_mut()[3 * i + c] -= lambda * gv / 3.0;
        }
    }
    ((1.0 - lambda) * l1 + lambda * (1.0 - ssim), grad)
}

fn scene_extent(views: &[TrainView]) -> f64 {
    let centers: Vec<Vector3<f64>> = views.iter().map(|v| v.pose.center()).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) * 1.1;
    if radius > 1e-9 {
        radius
    } else {
        1.0
    }
}

fn pack(g: &Gaussian3D) -> [f64; PARAMS] {
    let mut p = [0.0; PARAMS];
    p[..3].copy_from_slice(g.mean.as_slice());
    p[3..7].copy_from_slice(&g.rotation);
    p[7..10].copy_from_slice(g.log_scale.as_slice());
    p[10] = g.opacity_logit;
    p[11..].copy_from_slice(&g.color);
    p
}

fn unpack(p: &[f64; PARAMS], g: &mut Gaussian3D) {
    g.mean = Vector3::new(p[0], p[1], p[2]);
    let n = p[3..7].iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1e-12 {
        g.rotation = [p[3] / n, p[4] / n, p[5] / n, p[6] / n];
    }
    g.log_scale = Vector3::new(p[7], p[8], p[9]);
    g.opacity_logit = p[10];
    g.color = [p[11].clamp(0.0, 1.0), p[12].clamp(0.0, 1.0), p[13].clamp(0.0, 1.0)];
}

fn gradient_row(grads: &SceneGradients, i: usize) -> [f64; PARAMS] {
    let mut p = [0.0; PARAMS];
    p[..3].copy_from_slice(grads.means[i].as_slice());
    p[3..7].copy_from_slice(&grads.rotations[i]);
    p[7..10].copy_from_slice(grads.log_scales[i].as_slice());
    p[10] = grads.opacity_logits[i];
    p[11..].copy_from_slice(&grads.colors[i]);
    p
}

#[derive(Clone, Copy)]
struct Moments<const N: usize> {
    m: [f64; N],
    v: [f64; N],
}

impl<const N: usize> Moments<N> {
    fn zero() -> Self {
        Moments { m: [0.0; N], v: [0.0; N] }
    }

    fn step(&mut self, params: &mut [f64; N], grad: &[f64; N], lr: &[f64; N], t: i32) {
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for k in 0..N {
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * grad[k];
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * grad[k] * grad[k];
            params[k] -= lr[k] * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + ADAM_EPS);
        }
    }
}

struct Optimizer {
    gaussians: Vec<Moments<PARAMS>>,
    appearance: Vec<Moments<6>>,
    grad_accum: Vec<f64>,
    grad_count: Vec<u32>,
}

impl Optimizer {
    fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.gaussians.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.grad_accum.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.grad_count.retain(|_| *it.next().unwrap());
    }

    fn push(&mut self) {
        self.gaussians.push(Moments::zero());
        self.grad_accum.push(0.0);
        self.grad_count.push(0);
    }
}

fn densify(scene: &mut SplatScene, opt: &mut Optimizer, config: &TrainConfig, extent: f64, rng: &mut ChaCha8Rng) {
    let n = scene.len();
    let mut keep = vec![true; n];
    for i in 0..n {
        if opt.grad_count[i] == 0 || scene.len() >= config.max_gaussians {
            continue;
        }
        let mean_grad = opt.grad_accum[i] / opt.grad_count[i] as f64;
        if mean_grad < config.tau_grad {
            continue;
        }
        let mut g = scene.gaussians[i].clone();
        if g.max_scale() > config.percent_dense * extent {
            let rot = quat_matrix(&g.unit_rotation());
            let scale = g.log_scale.map(f64::exp);
            for _ in 0..2 {
                let z: Vector3<f64> = Vector3::from_fn(|k, _| {
                    let n: f64 = StandardNormal.sample(rng);
                    n * scale[k]
                });
                let mut child = g.clone();
                child.mean += rot * z;
                child.log_scale = g.log_scale.add_scalar(-config.split_factor.ln());
                scene.gaussians.push(child);
                opt.push();
            }
            keep[i] = false;
        } else {
            // Two coincident copies with opacity 1 - sqrt(1 - a) composite to opacity a.
            g.opacity_logit = logit(1.0 - (1.0 - g.opacity()).sqrt());
            scene.gaussians[i].opacity_logit = g.opacity_logit;
            scene.gaussians.push(g);
            opt.push();
        }
    }
    keep.resize(scene.len(), true);
    retain(scene, opt, &keep);
}

fn prune(scene: &mut SplatScene, opt: &mut Optimizer, tau: f64) {
    let mut keep: Vec<bool> = scene.gaussians.iter().map(|g| g.opacity() >= tau).collect();
    if !keep.iter().any(|k| *k) {
        // Never empty the scene: keep the most opaque splat.
        let best = (0..scene.len())
            .max_by(|&a, &b| scene.gaussians[a].opacity_logit.total_cmp(&scene.gaussians[b].opacity_logit))
            .expect("scene is nonempty");
        keep[best] = true;
    }
    retain(scene, opt, &keep);
}

fn retain(scene: &mut SplatScene, opt: &mut Optimizer, keep: &[bool]) {
    let mut it = keep.iter();
    scene.gaussians.retain(|_| *it.next().unwrap());
    opt.retain(keep);
}

/// Optimizes `scene` against `views`. Views are visited in a seeded random
/// order, one per step.
pub fn train(
    mut scene: SplatScene,
    views: &[TrainView],
    intr: &CameraIntrinsics,
    config: &TrainConfig,
) -> Result<TrainResult, RadianceError> {
    scene.validate()?;
    if views.len() < 2 {
        return Err(RadianceError::TooFewViews(views.len()));
    }
    let expected = (intr.width as usize, intr.height as usize);
    for (index, v) in views.iter().enumerate() {
        if v.image.dims() != expected {
            return Err(RadianceError::ViewSize { index, got: v.image.dims(), expected });
        }
        scene.appearance_for(v.appearance_id)?;
    }
    let extent = scene_extent(views);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer {
        gaussians: vec![Moments::zero(); scene.len()],
        appearance: vec![Moments::zero(); scene.appearance.len()],
        grad_accum: vec![0.0; scene.len()],
        grad_count: vec![0; scene.len()],
    };
    let mut order: Vec<usize> = Vec::new();
    let mut loss_history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let view = &views[order.pop().expect("refilled above")];
        let appearance_id = if config.appearance { view.appearance_id } else { None };
        let render = rasterize(&scene, &view.pose, intr, appearance_id)?;
        let (loss, grad_image) = photometric_loss(&render.image, &view.image, config.lambda_ssim);
        if !loss.is_finite() {
            return Err(RadianceError::NonFiniteLoss(step));
        }
        loss_history.push(loss);
        let grads = rasterize_backward(&scene, &view.pose, intr, appearance_id, &grad_image)?;

        let t = (step + 1) as i32;
        let progress = step as f64 / config.steps.max(1) as f64;
        let lr_mean = extent
            * if config.lr_means_final > 0.0 {
                config.lr_means * (config.lr_means_final / config.lr_means).powf(progress)
            } else {
                config.lr_means
            };
        let mut lr = [0.0; PARAMS];
        lr[..3].fill(lr_mean);
        lr[3..7].fill(config.lr_rotations);
        lr[7..10].fill(config.lr_scales);
        lr[10] = config.lr_opacity;
        lr[11..].fill(config.lr_colors);
        for (i, (g, state)) in scene.gaussians.iter_mut().zip(opt.gaussians.iter_mut()).enumerate() {
            let mut p = pack(g);
            state.step(&mut p, &gradient_row(&grads, i), &lr, t);
            unpack(&p, g);
            if grads.visible[i] {
                opt.grad_accum[i] += grads.mean2d_ndc_norm[i];
                opt.grad_count[i] += 1;
            }
        }
        if let Some(id) = appearance_id {
            let lr = [config.lr_appearance; 6];
            let params = &mut scene.appearance[id];
            opt.appearance[id].step(params, &grads.appearance[id], &lr, t);
            for gain in &mut params[..3] {
                *gain = gain.max(MIN_GAIN);
            }
        }

        if (step + 1) % config.densify_interval == 0 {
            if step >= config.densify_from && step < config.densify_until {
                densify(&mut scene, &mut opt, config, extent, &mut rng);
            }
            prune(&mut scene, &mut opt, config.tau_prune);
            opt.grad_accum.iter_mut().for_each(|v| *v = 0.0);
            opt.grad_count.iter_mut().for_each(|v| *v = 0);
        }
    }
    log::debug!("trained {} steps, {} gaussians", config.steps, scene.len());
    Ok(TrainResult { scene, loss_history })
}
