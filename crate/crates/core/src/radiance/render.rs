//! Tile-based forward rasterizer and a naive per-pixel reference.

use super::gaussian::{appearance_apply, project_full, project_gaussian, Projected};
use super::{RadianceError, SplatScene};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::par;
use crate::raster::{Image, Plane};

pub const TILE_SIZE: usize = 16;
/// Squared Mahalanobis distance beyond which a splat contributes nothing.
pub const MAHALANOBIS_CUTOFF: f64 = 50.0;
pub const ALPHA_CAP: f64 = 0.995;
/// Compositing stops before a splat would push transmittance below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub final_transmittance: Plane,
}

#[derive(Debug, Clone)]
pub(crate) struct Splat {
    pub index: usize,
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub alpha: f64,
    /// Color after the appearance transform.
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    pub a: f64,
    pub g: f64,
    pub dx: f64,
    pub dy: f64,
    pub capped: bool,
}

impl Splat {
    #[inline]
    pub fn contribution(&self, px: f64, py: f64) -> Option<Contribution> {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let [a, b, c] = self.conic;
        let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        if q > MAHALANOBIS_CUTOFF {
            return None;
        }
        let g = (-0.5 * q).exp();
        let raw = self.alpha * g;
        let capped = raw > ALPHA_CAP;
        Some(Contribution { a: if capped { ALPHA_CAP } else { raw }, g, dx, dy, capped })
    }
}

/// Projected, depth-sorted splats binned into tiles.
pub(crate) struct Frame {
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub splats: Vec<Splat>,
    pub projections: Vec<Option<Projected>>,
    pub tiles: Vec<Vec<u32>>,
    pub appearance: Option<[f64; 6]>,
}

impl Frame {
    pub fn n_tiles(&self) -> usize {
        self.tiles.len()
    }

    pub fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
        let (x1, y1) = ((x0 + TILE_SIZE).min(self.width), (y0 + TILE_SIZE).min(self.height));
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

pub(crate) fn prepare(
    scene: &SplatScene,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    appearance_id: Option<usize>,
) -> Result<Frame, RadianceError> {
    let appearance = scene.appearance_for(appearance_id)?;
    let (width, height) = (intr.width as usize, intr.height as usize);
    let projections: Vec<Option<Projected>> = par::map(&scene.gaussians, |g| project_full(g, pose, intr));

    let mut order: Vec<(f64, usize)> =
        projections.iter().enumerate().filter_map(|(i, p)| p.as_ref().map(|p| (p.splat.depth, i))).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let mut splats = Vec::new();
    for (_, index) in order {
        let p = projections[index].as_ref().expect("sorted entries are projected");
        let s = &p.splat;
        let rx = (MAHALANOBIS_CUTOFF * s.cov[(0, 0)]).sqrt();
        let ry = (MAHALANOBIS_CUTOFF * s.cov[(1, 1)]).sqrt();
        // Pixel centres sit at +0.5; the floor/ceil leave a one-pixel margin.
        let x0 = (s.mean.x - rx - 0.5).floor().max(0.0);
        let x1 = (s.mean.x + rx - 0.5).ceil() + 1.0;
        let y0 = (s.mean.y - ry - 0.5).floor().max(0.0);
        let y1 = (s.mean.y + ry - 0.5).ceil() + 1.0;
        if !(x0 < width as f64 && y0 < height as f64 && x1 > 0.0 && y1 > 0.0) {
            continue;
        }
        let (x0, y0) = (x0 as usize, y0 as usize);
        let (x1, y1) = ((x1 as usize).min(width), (y1 as usize).min(height));
        let slot = splats.len() as u32;
        for ty in y0 / TILE_SIZE..=(y1 - 1) / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=(x1 - 1) / TILE_SIZE {
                tiles[ty * tiles_x + tx].push(slot);
            }
        }
        let color = match &appearance {
            Some(params) => appearance_apply(s.color, params),
            None => s.color,
        };
        splats.push(Splat { index, mean: [s.mean.x, s.mean.y], conic: p.conic, alpha: s.alpha, color });
    }
    Ok(Frame { width, height, tiles_x, splats, projections, tiles, appearance })
}

#[inline]
pub(crate) fn shade<'a>(splats: impl Iterator<Item = &'a Splat>, px: f64, py: f64, bg: [f64; 3]) -> ([f64; 3], f64) {
    let mut color = [0.0; 3];
    let mut t = 1.0;
    for s in splats {
        let Some(c) = s.contribution(px, py) else {
            continue;
        };
        let next = t * (1.0 - c.a);
        if next < TRANSMITTANCE_STOP {
            break;
        }
        let w = c.a * t;
        for k in 0..3 {
            color[k] += w * s.color[k];
        }
        t = next;
    }
    for k in 0..3 {
        color[k] += t * bg[k];
    }
    (color, t)
}

/// Renders `scene` from `pose`; `appearance_id` selects a per-image color transform.
pub fn rasterize(
    scene: &SplatScene,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    appearance_id: Option<usize>,
) -> Result<RenderOutput, RadianceError> {
    let frame = prepare(scene, pose, intr, appearance_id)?;
    let bg = scene.background;
    let blocks: Vec<Vec<([f64; 3], f64)>> = par::map_range(frame.n_tiles(), |tile| {
        let list = &frame.tiles[tile];
        frame
            .tile_pixels(tile)
            .map(|(x, y)| shade(list.iter().map(|&i| &frame.splats[i as usize]), x as f64 + 0.5, y as f64 + 0.5, bg))
            .collect()
    });
    let mut image = Image::new(frame.width, frame.height);
    let mut transmittance = Plane::new(frame.width, frame.height);
    for (tile, block) in blocks.into_iter().enumerate() {
        for ((x, y), (rgb, t)) in frame.tile_pixels(tile).zip(block) {
            image.set_pixel(x, y, rgb);
            transmittance.set(x, y, t);
        }
    }
    Ok(RenderOutput { image, final_transmittance: transmittance })
}

/// Untiled renderer: every pixel projects, filters and sorts the whole scene.
pub fn rasterize_reference(
    scene: &SplatScene,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    appearance_id: Option<usize>,
) -> Result<RenderOutput, RadianceError> {
    let appearance = scene.appearance_for(appearance_id)?;
    let (w, h) = (intr.width as usize, intr.height as usize);
    let mut image = Image::new(w, h);
    let mut transmittance = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut hits: Vec<(f64, usize, Splat)> = Vec::new();
            for (index, g) in scene.gaussians.iter().enumerate() {
                let Some(p) = project_gaussian(g, pose, intr) else {
                    continue;
                };
                let color = appearance.as_ref().map_or(p.color, |a| appearance_apply(p.color, a));
                let splat = Splat { index, mean: [p.mean.x, p.mean.y], conic: p.conic(), alpha: p.alpha, color };
                if splat.contribution(x as f64 + 0.5, y as f64 + 0.5).is_some() {
                    hits.push((p.depth, index, splat));
                }
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (rgb, t) = shade(hits.iter().map(|h| &h.2), x as f64 + 0.5, y as f64 + 0.5, scene.background);
            image.set_pixel(x, y, rgb);
            transmittance.set(x, y, t);
        }
    }
    Ok(RenderOutput { image, final_transmittance: transmittance })
}
