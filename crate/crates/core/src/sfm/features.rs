//! Difference-of-Gaussians keypoints with 4x4x8 gradient-orientation descriptors.

use std::f64::consts::TAU;

use nalgebra::Vector2;

use super::Keypoint;
use crate::raster::{Image, Plane};

pub const DESCRIPTOR_LEN: usize = 128;

const IMAGE_BORDER: usize = 5;
const MAX_INTERP_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_PEAK_RATIO: f64 = 0.8;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_SCALE_FACTOR: f64 = 3.0;
const DESC_CLAMP: f64 = 0.2;
const INPUT_BLUR: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub max_features: usize,
    /// Scale samples per octave.
    pub octave_layers: usize,
    /// Blur of the first pyramid level.
    pub sigma: f64,
    /// Minimum |DoG| at the refined extremum, times `octave_layers`, on a [0,1] image.
    pub contrast_threshold: f64,
    /// Largest accepted ratio of principal curvatures.
    pub edge_threshold: f64,
    /// Double the input before building the pyramid.
    pub upsample: bool,
    /// Octaves stop once an edge drops below this.
    pub min_octave_size: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_features: 2000,
            octave_layers: 3,
            sigma: 1.6,
            contrast_threshold: 0.04,
            edge_threshold: 10.0,
            upsample: true,
            min_octave_size: 16,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamped borders.
pub(crate) fn blur(src: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return src.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut tmp = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * src.at_clamped(x as isize + j as isize - r, y as isize);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * tmp.at_clamped(x as isize, y as isize + j as isize - r);
            }
            out.set(x, y, acc);
        }
    }
    out
}

fn upsample2(src: &Plane) -> Plane {
    let (w, h) = (src.width * 2, src.height * 2);
    let mut out = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, src.bilinear(x as f64 * 0.5, y as f64 * 0.5));
        }
    }
    out
}

fn downsample2(src: &Plane) -> Plane {
    let (w, h) = (src.width / 2, src.height / 2);
    let mut out = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, src.at(2 * x, 2 * y));
        }
    }
    out
}

fn difference(a: &Plane, b: &Plane) -> Plane {
    Plane { width: a.width, height: a.height, data: a.data.iter().zip(&b.data).map(|(x, y)| y - x).collect() }
}

/// Gaussian and DoG levels of every octave.
pub(crate) struct Pyramid {
    pub gauss: Vec<Vec<Plane>>,
    pub dog: Vec<Vec<Plane>>,
    /// Input-pixel size of one sample in octave 0.
    pub base_step: f64,
}

pub(crate) fn build_pyramid(luma: &Plane, cfg: &DetectorConfig) -> Pyramid {
    let s = cfg.octave_layers;
    let (mut base, base_step, input_blur) =
        if cfg.upsample { (upsample2(luma), 0.5, 2.0 * INPUT_BLUR) } else { (luma.clone(), 1.0, INPUT_BLUR) };
    base = blur(&base, (cfg.sigma * cfg.sigma - input_blur * input_blur).max(0.01).sqrt());

    let k = 2f64.powf(1.0 / s as f64);
    let incr: Vec<f64> = (1..s + 3)
        .map(|i| {
            let prev = cfg.sigma * k.powi(i as i32 - 1);
            let total = prev * k;
            (total * total - prev * prev).sqrt()
        })
        .collect();

    let mut gauss: Vec<Vec<Plane>> = Vec::new();
    let mut level0 = base;
    while level0.width.min(level0.height) >= cfg.min_octave_size.max(2 * IMAGE_BORDER + 3) {
        let mut octave = vec![level0];
        for sig in &incr {
            let next = blur(octave.last().expect("non-empty"), *sig);
            octave.push(next);
        }
        level0 = downsample2(&octave[s]);
        gauss.push(octave);
    }
    let dog = gauss.iter().map(|oct| oct.windows(2).map(|w| difference(&w[0], &w[1])).collect()).collect();
    Pyramid { gauss, dog, base_step }
}

/// Integer-lattice extremum candidates `(octave, layer, x, y)`.
pub(crate) fn scan_extrema(pyr: &Pyramid, cfg: &DetectorConfig) -> Vec<(usize, usize, usize, usize)> {
    let threshold = 0.5 * cfg.contrast_threshold / cfg.octave_layers as f64;
    let mut out = Vec::new();
    for (o, dogs) in pyr.dog.iter().enumerate() {
        let (w, h) = (dogs[0].width, dogs[0].height);
        for layer in 1..=cfg.octave_layers {
            let (prev, cur, next) = (&dogs[layer - 1], &dogs[layer], &dogs[layer + 1]);
            for y in IMAGE_BORDER..h - IMAGE_BORDER {
                for x in IMAGE_BORDER..w - IMAGE_BORDER {
                    let v = cur.at(x, y);
                    if v.abs() <= threshold {
                        continue;
                    }
                    let mut is_max = true;
                    let mut is_min = true;
                    for p in [prev, cur, next] {
                        for dy in -1isize..=1 {
                            for dx in -1isize..=1 {
                                if std::ptr::eq(p, cur) && dx == 0 && dy == 0 {
                                    continue;
                                }
                                let n = p.at((x as isize + dx) as usize, (y as isize + dy) as usize);
                                is_max &= v > n;
                                is_min &= v < n;
                            }
                        }
                    }
                    if is_max || is_min {
                        out.push((o, layer, x, y));
                    }
                }
            }
        }
    }
    out
}

struct Refined {
    x: f64,
    y: f64,
    layer: f64,
    xi: usize,
    yi: usize,
    li: usize,
    contrast: f64,
}

fn refine(dogs: &[Plane], cfg: &DetectorConfig, x0: usize, y0: usize, l0: usize) -> Option<Refined> {
    let (w, h) = (dogs[0].width, dogs[0].height);
    let (mut x, mut y, mut l) = (x0, y0, l0);
    for _ in 0..MAX_INTERP_STEPS {
        let d = |dl: isize, dx: isize, dy: isize| {
            dogs[(l as isize + dl) as usize].at((x as isize + dx) as usize, (y as isize + dy) as usize)
        };
        let v = d(0, 0, 0);
        let g = nalgebra::Vector3::new(
            0.5 * (d(0, 1, 0) - d(0, -1, 0)),
            0.5 * (d(0, 0, 1) - d(0, 0, -1)),
            0.5 * (d(1, 0, 0) - d(-1, 0, 0)),
        );
        let dxx = d(0, 1, 0) + d(0, -1, 0) - 2.0 * v;
        let dyy = d(0, 0, 1) + d(0, 0, -1) - 2.0 * v;
        let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * v;
        let dxy = 0.25 * (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1));
        let dxs = 0.25 * (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0));
        let dys = 0.25 * (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1));
        let hess = nalgebra::Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        let offset = -(hess.try_inverse()? * g);
        if offset.iter().all(|c| c.abs() < 0.5) {
            let contrast = v + 0.5 * g.dot(&offset);
            if contrast.abs() * (cfg.octave_layers as f64) < cfg.contrast_threshold {
                return None;
            }
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            let r = cfg.edge_threshold;
            if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
                return None;
            }
            return Some(Refined {
                x: x as f64 + offset.x,
                y: y as f64 + offset.y,
                layer: l as f64 + offset.z,
                xi: x,
                yi: y,
                li: l,
                contrast,
            });
        }
        if offset.iter().any(|c| c.abs() > (i32::MAX / 3) as f64) {
            return None;
        }
        x = (x as isize + offset.x.round() as isize) as usize;
        y = (y as isize + offset.y.round() as isize) as usize;
        l = (l as isize + offset.z.round() as isize) as usize;
        if l < 1
            || l > cfg.octave_layers
            || x < IMAGE_BORDER
            || y < IMAGE_BORDER
            || x >= w - IMAGE_BORDER
            || y >= h - IMAGE_BORDER
        {
            return None;
        }
    }
    None
}

/// Gradient (magnitude, angle) by central differences; `None` on the border.
#[inline]
fn gradient(img: &Plane, x: isize, y: isize) -> Option<(f64, f64)> {
    if x < 1 || y < 1 || x >= img.width as isize - 1 || y >= img.height as isize - 1 {
        return None;
    }
    let (xu, yu) = (x as usize, y as usize);
    let dx = img.at(xu + 1, yu) - img.at(xu - 1, yu);
    let dy = img.at(xu, yu + 1) - img.at(xu, yu - 1);
    Some(((dx * dx + dy * dy).sqrt(), dy.atan2(dx)))
}

fn dominant_orientations(img: &Plane, x: usize, y: usize, scale: f64) -> Vec<f64> {
    let sigma = ORI_SIGMA_FACTOR * scale;
    let radius = (3.0 * sigma).round() as isize;
    let mut hist = [0.0f64; ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if let Some((mag, ang)) = gradient(img, x as isize + dx, y as isize + dy) {
                let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                let bin = ((ang.rem_euclid(TAU) / TAU * ORI_BINS as f64).round() as usize) % ORI_BINS;
                hist[bin] += wgt * mag;
            }
        }
    }
    let n = ORI_BINS;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            (hist[(i + n - 2) % n] + hist[(i + 2) % n]) / 16.0
                + 4.0 * (hist[(i + n - 1) % n] + hist[(i + 1) % n]) / 16.0
                + 6.0 * hist[i] / 16.0
        })
        .collect();
    let max = smooth.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let (l, c, r) = (smooth[(i + n - 1) % n], smooth[i], smooth[(i + 1) % n]);
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let shift = 0.5 * (l - r) / (l - 2.0 * c + r);
            let bin = (i as f64 + shift).rem_euclid(n as f64);
            out.push(bin / n as f64 * TAU);
        }
    }
    out
}

fn descriptor(img: &Plane, x: f64, y: f64, ori: f64, scale: f64) -> Option<Vec<f32>> {
    let d = DESC_WIDTH;
    let n = DESC_BINS;
    let hist_width = DESC_SCALE_FACTOR * scale;
    let radius = (hist_width * std::f64::consts::SQRT_2 * (d as f64 + 1.0) * 0.5).round() as isize;
    let (cos_t, sin_t) = (ori.cos() / hist_width, ori.sin() / hist_width);
    let exp_scale = -1.0 / (0.5 * (d * d) as f64);
    let (xi, yi) = (x.round() as isize, y.round() as isize);
    let mut hist = vec![0.0f64; (d + 2) * (d + 2) * (n + 2)];
    let idx = |r: usize, c: usize, o: usize| (r * (d + 2) + c) * (n + 2) + o;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let c_rot = dx as f64 * cos_t + dy as f64 * sin_t;
            let r_rot = -(dx as f64) * sin_t + dy as f64 * cos_t;
            let rbin = r_rot + d as f64 / 2.0 - 0.5;
            let cbin = c_rot + d as f64 / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d as f64 || cbin <= -1.0 || cbin >= d as f64 {
                continue;
            }
            let Some((mag, ang)) = gradient(img, xi + dx, yi + dy) else {
                continue;
            };
            let wgt = ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let obin = (ang - ori).rem_euclid(TAU) / TAU * n as f64;
            let v = mag * wgt;
            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0, o0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize, o0 as usize % n);
            for (ri, wr) in [(0usize, 1.0 - fr), (1, fr)] {
                for (ci, wc) in [(0usize, 1.0 - fc), (1, fc)] {
                    for (oi, wo) in [(0usize, 1.0 - fo), (1, fo)] {
                        hist[idx(r0 + ri, c0 + ci, (o0 + oi) % n)] += v * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut desc = vec![0.0f64; DESCRIPTOR_LEN];
    for r in 0..d {
        for c in 0..d {
            for o in 0..n {
                desc[(r * d + c) * n + o] = hist[idx(r + 1, c + 1, o)];
            }
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    let cap = DESC_CLAMP * norm;
    desc.iter_mut().for_each(|v| *v = v.min(cap));
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    Some(desc.iter().map(|v| (v / norm) as f32).collect())
}

/// Detects scale-space keypoints, strongest first, capped at `max_features`.
pub fn detect_features(image: &Image, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let pyr = build_pyramid(&image.luma(), cfg);
    let s = cfg.octave_layers as f64;
    let mut kps = Vec::new();
    for (o, layer, x, y) in scan_extrema(&pyr, cfg) {
        let Some(r) = refine(&pyr.dog[o], cfg, x, y, layer) else {
            continue;
        };
        let step = pyr.base_step * (1u64 << o) as f64;
        let octave_scale = cfg.sigma * 2f64.powf(r.layer / s);
        let gimg = &pyr.gauss[o][r.li];
        let position = Vector2::new(r.x * step + 0.5, r.y * step + 0.5);
        if !(position.x > 0.0
            && position.y > 0.0
            && position.x < image.width() as f64
            && position.y < image.height() as f64)
        {
            continue;
        }
        let px = (position.x as usize).min(image.width() - 1);
        let py = (position.y as usize).min(image.height() - 1);
        let color = image.pixel(px, py);
        for ori in dominant_orientations(gimg, r.xi, r.yi, octave_scale) {
            if let Some(descriptor) = descriptor(gimg, r.x, r.y, ori, octave_scale) {
                kps.push(Keypoint {
                    position,
                    scale: octave_scale * step,
                    orientation: ori,
                    response: r.contrast.abs(),
                    descriptor,
                    color,
                });
            }
        }
    }
    kps.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.position.x.total_cmp(&b.position.x))
            .then(a.position.y.total_cmp(&b.position.y))
            .then(a.orientation.total_cmp(&b.orientation))
    });
    kps.truncate(cfg.max_features);
    kps
}
