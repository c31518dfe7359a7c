//! Seeded scene and trajectory generators used by tests, benchmarks and the
//! bundled fixture.

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::ingest::{Dataset, PosePrior, RecordingFrame};
use crate::radiance::{logit, rasterize, Gaussian3D, SplatScene, TrainView};
use crate::raster::Image;
use crate::sfm::{Keypoint, ModelImage, Observation, Point3D, SparseModel, DESCRIPTOR_LEN};

/// Random splats inside a cube of half-width `extent`.
pub fn random_splats(n: usize, extent: f64, seed: u64) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Gaussian3D {
            mean: Vector3::from_fn(|_, _| rng.random_range(-extent..extent)),
            rotation: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            log_scale: Vector3::from_fn(|_, _| rng.random_range((0.075 * extent).ln()..(0.25 * extent).ln())),
            opacity_logit: logit(rng.random_range(0.5..0.95)),
            color: std::array::from_fn(|_| rng.random_range(0.1..0.9)),
        })
        .collect()
}

/// Magnitudes of the uniform noise applied by [`perturb_splats`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub mean: f64,
    pub log_scale: f64,
    pub opacity_logit: f64,
    pub color: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation { mean: 0.15, log_scale: 0.4, opacity_logit: 1.0, color: 0.2 }
    }
}

pub fn perturb_splats(gaussians: &mut [Gaussian3D], p: &Perturbation, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |m: f64| {
        if m > 0.0 {
            rng.random_range(-m..m)
        } else {
            0.0
        }
    };
    for g in gaussians {
        g.mean += Vector3::new(u(p.mean), u(p.mean), u(p.mean));
        g.log_scale += Vector3::new(u(p.log_scale), u(p.log_scale), u(p.log_scale));
        g.opacity_logit += u(p.opacity_logit);
        for c in &mut g.color {
            *c = (*c + u(p.color)).clamp(0.0, 1.0);
        }
    }
}

/// `n` cameras on a circle of `radius` around the z axis, alternating between
/// two heights, all looking at the origin.
pub fn orbit_poses(n: usize, radius: f64) -> Vec<CameraPose> {
    (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let height = if i % 2 == 0 { 0.2 * radius } else { -0.1 * radius };
            let eye = Vector3::new(radius * a.cos(), radius * a.sin(), height);
            CameraPose::look_at(eye, Vector3::zeros(), Vector3::z())
        })
        .collect()
}

/// A splat-rendered multi-view dataset with one held-out view.
#[derive(Debug, Clone)]
pub struct SplatViews {
    pub truth: SplatScene,
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<CameraPose>,
    pub images: Vec<Image>,
    pub held_out: usize,
}

impl SplatViews {
    /// Renders `truth` from an orbit of `n_views` cameras at `size` x `size` pixels.
    pub fn render(truth: SplatScene, n_views: usize, size: u32, held_out: usize) -> Self {
        let f = size as f64 * 1.25;
        let intrinsics = CameraIntrinsics::pinhole(f, f, size as f64 / 2.0, size as f64 / 2.0, size, size);
        let poses = orbit_poses(n_views, 4.0);
        let images = poses
            .iter()
            .map(|p| rasterize(&truth, p, &intrinsics, None).expect("ground truth has no appearance ids").image)
            .collect();
        SplatViews { truth, intrinsics, poses, images, held_out }
    }

    /// Training views (all but the held-out one), each with its own appearance slot.
    /// `gains[k]` scales the k-th training image when given.
    pub fn training_views(&self, gains: Option<&[f64]>) -> Vec<TrainView> {
        (0..self.poses.len())
            .filter(|&i| i != self.held_out)
            .enumerate()
            .map(|(k, i)| {
                let mut image = self.images[i].clone();
                if let Some(g) = gains {
                    image.data_mut().iter_mut().for_each(|v| *v = (*v * g[k]).clamp(0.0, 1.0));
                }
                TrainView { image, pose: self.poses[i], appearance_id: Some(k) }
            })
            .collect()
    }
}

/// Noise model for [`FeatureScene::observe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationNoise {
    /// Per-axis standard deviation of keypoint positions.
    pub pixel_sigma: f64,
    /// Per-component standard deviation added to unit descriptors.
    pub descriptor_sigma: f32,
    /// Unmatched keypoints with random descriptors added to every image.
    pub clutter_per_image: usize,
}

impl Default for ObservationNoise {
    fn default() -> Self {
        ObservationNoise { pixel_sigma: 0.5, descriptor_sigma: 0.02, clutter_per_image: 0 }
    }
}

/// Keypoints observed from known cameras and points, for SfM tests without images.
#[derive(Debug, Clone)]
pub struct FeatureScene {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<CameraPose>,
    pub points: Vec<Vector3<f64>>,
    pub names: Vec<String>,
    pub features: Vec<Vec<Keypoint>>,
    /// Scene point behind each keypoint; `None` for clutter.
    pub point_of: Vec<Vec<Option<usize>>>,
}

fn unit_descriptor(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = Normal::new(0.0f32, 1.0).expect("valid");
    let v: Vec<f32> = (0..DESCRIPTOR_LEN).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

impl FeatureScene {
    pub fn observe(
        intrinsics: CameraIntrinsics,
        poses: Vec<CameraPose>,
        points: Vec<Vector3<f64>>,
        noise: &ObservationNoise,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let descriptors: Vec<Vec<f32>> = points.iter().map(|_| unit_descriptor(&mut rng)).collect();
        let px = Normal::new(0.0, noise.pixel_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let dn = Normal::new(0.0f32, noise.descriptor_sigma.max(f32::MIN_POSITIVE)).expect("valid sigma");
        let (w, h) = (intrinsics.width as f64, intrinsics.height as f64);
        let mut features = Vec::with_capacity(poses.len());
        let mut point_of = Vec::with_capacity(poses.len());
        for pose in &poses {
            let mut kps = Vec::new();
            let mut ids = Vec::new();
            for (j, x) in points.iter().enumerate() {
                let pc = pose.transform(x);
                if pc.z < 0.1 {
                    continue;
                }
                let mut uv = intrinsics.project(&pc);
                if noise.pixel_sigma > 0.0 {
                    uv += Vector2::new(px.sample(&mut rng), px.sample(&mut rng));
                }
                if !(uv.x >= 0.0 && uv.x < w && uv.y >= 0.0 && uv.y < h) {
                    continue;
                }
                let mut d: Vec<f32> = descriptors[j].iter().map(|v| v + dn.sample(&mut rng)).collect();
                let norm = d.iter().map(|x| x * x).sum::<f32>().sqrt();
                d.iter_mut().for_each(|v| *v /= norm);
                let shade = 0.3 + 0.4 * (j % 7) as f64 / 6.0;
                kps.push(Keypoint {
                    position: uv,
                    scale: 2.0,
                    orientation: 0.0,
                    response: 1.0,
                    descriptor: d,
                    color: [shade, shade, shade],
                });
                ids.push(Some(j));
            }
            for _ in 0..noise.clutter_per_image {
                kps.push(Keypoint {
                    position: Vector2::new(rng.random_range(0.0..w), rng.random_range(0.0..h)),
                    scale: 2.0,
                    orientation: 0.0,
                    response: 0.5,
                    descriptor: unit_descriptor(&mut rng),
                    color: [0.5; 3],
                });
                ids.push(None);
            }
            features.push(kps);
            point_of.push(ids);
        }
        let names = (0..poses.len()).map(|i| format!("frame_{i:04}.png")).collect();
        FeatureScene { intrinsics, poses, points, names, features, point_of }
    }

    /// Position priors with `sigma_m` noise and orientation priors tilted by up to `orientation_deg`.
    pub fn priors(&self, sigma_m: f64, orientation_deg: f64, seed: u64) -> Vec<Option<PosePrior>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma_m.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let max_tilt = orientation_deg.to_radians();
        self.poses
            .iter()
            .enumerate()
            .map(|(i, pose)| {
                let c = pose.center() + Vector3::from_fn(|_, _| n.sample(&mut rng));
                let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let tilt = UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(0.0..=max_tilt));
                Some(PosePrior::new(i as i64 * 100_000_000, c, sigma_m).with_orientation(tilt * pose.rotation))
            })
            .collect()
    }

    /// Path length of the camera centres.
    pub fn trajectory_length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].center() - w[0].center()).norm()).sum()
    }
}

/// `n` cameras on a horizontal arc of `radius` spanning `span_deg`, looking at the origin.
pub fn arc_poses(n: usize, radius: f64, span_deg: f64) -> Vec<CameraPose> {
    let span = span_deg.to_radians();
    (0..n)
        .map(|i| {
            let a = -span / 2.0 + span * i as f64 / (n.max(2) - 1) as f64;
            let eye = Vector3::new(radius * a.sin(), 0.3 * (i % 3) as f64, -radius * a.cos());
            CameraPose::look_at(eye, Vector3::zeros(), -Vector3::y())
        })
        .collect()
}

/// 640x480 camera with a 500 px focal length.
pub fn vga_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0, 640, 480)
}

/// 20 cameras on a 90 degree arc of radius 8 m around 500 points in a 4 m cube.
pub fn arc_scene(noise: &ObservationNoise, seed: u64) -> FeatureScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5c);
    let points = (0..500).map(|_| Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0))).collect();
    FeatureScene::observe(vga_intrinsics(), arc_poses(20, 8.0, 90.0), points, noise, seed)
}

/// Layout of a sideways strip past a wall of points at 4.5 to 5.5 m depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripLayout {
    pub frames: usize,
    pub spacing_m: f64,
    /// Points per square metre of textured wall.
    pub density: f64,
    /// Untextured interval of the wall along x, if any.
    pub gap: Option<(f64, f64)>,
}

impl StripLayout {
    /// Wall footprint of one 640x480 view at 5 m, along x.
    pub const FOOTPRINT_M: f64 = 2.0 * 5.0 * 320.0 / 500.0;

    /// 40 frames whose textureless gap is wider than one view footprint, so
    /// no view sees both sides.
    pub fn gap_strip() -> Self {
        let frames = 40;
        let spacing_m = 0.4;
        let mid = spacing_m * (frames - 1) as f64 / 2.0;
        let half = (Self::FOOTPRINT_M + 0.4) / 2.0;
        StripLayout { frames, spacing_m, density: 14.0, gap: Some((mid - half, mid + half)) }
    }

    pub fn plain(frames: usize) -> Self {
        StripLayout { frames, spacing_m: 0.4, density: 4.0, gap: None }
    }
}

/// Cameras looking along +z while translating along +x past a textured wall.
pub fn strip_scene(layout: &StripLayout, noise: &ObservationNoise, seed: u64) -> FeatureScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57e1);
    let poses: Vec<CameraPose> = (0..layout.frames)
        .map(|i| {
            CameraPose::from_center(UnitQuaternion::identity(), Vector3::new(i as f64 * layout.spacing_m, 0.0, 0.0))
        })
        .collect();
    let margin = StripLayout::FOOTPRINT_M / 2.0 + 0.5;
    let (x0, x1) = (-margin, layout.spacing_m * (layout.frames.max(1) - 1) as f64 + margin);
    let half_height = 2.4;
    let count = (layout.density * (x1 - x0) * 2.0 * half_height).round() as usize;
    let points = (0..count)
        .map(|_| {
            Vector3::new(
                rng.random_range(x0..x1),
                rng.random_range(-half_height..half_height),
                rng.random_range(4.5..5.5),
            )
        })
        .filter(|p| layout.gap.is_none_or(|(g0, g1)| p.x < g0 || p.x > g1))
        .collect();
    FeatureScene::observe(vga_intrinsics(), poses, points, noise, seed)
}

/// Random model with sparse, non-contiguous ids, for format round trips.
pub fn random_sparse_model(seed: u64, n_images: usize, n_points: usize, distorted: bool) -> SparseModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = CameraIntrinsics::pinhole(
        rng.random_range(100.0..900.0),
        rng.random_range(100.0..900.0),
        rng.random_range(100.0..300.0),
        rng.random_range(100.0..200.0),
        640,
        480,
    );
    if distorted {
        k.distortion = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
    }
    let mut m = SparseModel::new(k);
    // sparse, non-contiguous ids
    let ids: Vec<u32> = (0..n_images as u32).map(|i| i * 3 + rng.random_range(1..3)).collect();
    for &id in &ids {
        let q = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)));
        let kps = (0..n_points + 4)
            .map(|_| Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect();
        m.images.insert(
            id,
            ModelImage {
                name: format!("frame_{id:05}.png"),
                pose: CameraPose::new(q, Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0))),
                keypoints: kps,
            },
        );
    }
    for j in 0..n_points {
        let mut track: Vec<Observation> = ids
            .iter()
            .filter(|_| rng.random_bool(0.7))
            .map(|&image_id| Observation { image_id, keypoint: j as u32 })
            .collect();
        if track.len() < 2 {
            track = ids[..2].iter().map(|&image_id| Observation { image_id, keypoint: j as u32 }).collect();
        }
        m.points.insert(
            j as u64 * 7 + 100,
            Point3D {
                position: Vector3::from_fn(|_, _| rng.random_range(-50.0..50.0)),
                // 8-bit colours survive the text format exactly
                color: std::array::from_fn(|_| rng.random_range(0..=255u8) as f64 / 255.0),
                reprojection_error_px: rng.random_range(0.0..3.0),
                track,
            },
        );
    }
    m
}

/// Frames in the bundled pipeline fixture.
pub const FIXTURE_FRAMES: usize = 12;
/// Spacing of the fixture's pose-prior timestamps (10 Hz).
pub const FIXTURE_PERIOD_NS: i64 = 100_000_000;

/// Ground truth of the bundled fixture: a slab of small opaque splats seen by
/// 12 cameras on a shallow arc at 5 m.
pub fn fixture_scene() -> (SplatScene, CameraIntrinsics, Vec<CameraPose>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1c5);
    let gaussians = (0..700)
        .map(|_| {
            Gaussian3D::isotropic(
                Vector3::new(rng.random_range(-3.6..3.6), rng.random_range(-2.6..2.6), rng.random_range(-0.8..0.8)),
                rng.random_range(0.04..0.12),
                rng.random_range(0.8..0.98),
                std::array::from_fn(|_| rng.random_range(0.05..0.95)),
            )
        })
        .collect();
    let intrinsics = CameraIntrinsics::pinhole(140.0, 140.0, 80.0, 60.0, 160, 120);
    let poses = arc_poses(FIXTURE_FRAMES, 5.0, 30.0);
    (SplatScene::new(gaussians, 0, [0.5; 3]), intrinsics, poses)
}

/// The fixture as an ingested recording, with 5 cm position priors.
pub fn fixture_dataset() -> Dataset {
    let (scene, intrinsics, poses) = fixture_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1c6);
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| RecordingFrame {
            frame_id: i,
            timestamp_ns: i as i64 * FIXTURE_PERIOD_NS,
            image: rasterize(&scene, pose, &intrinsics, None).expect("fixture scene renders").image,
            source_topic: "/camera/image_raw".into(),
        })
        .collect();
    let priors = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let c = pose.center() + Vector3::from_fn(|_, _| noise.sample(&mut rng));
            Some(PosePrior::new(i as i64 * FIXTURE_PERIOD_NS, c, 0.05))
        })
        .collect();
    Dataset { frames, intrinsics, priors }
}
