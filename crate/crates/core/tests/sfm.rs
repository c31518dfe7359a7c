use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regolith_core::camera::CameraPose;
use regolith_core::geometry::{rmse, umeyama};
use regolith_core::sfm::{
    bundle_adjust, reconstruct, BundleConfig, MapperConfig, ModelImage, Observation, PairStrategy, Point3D,
    SparseModel, DEFAULT_LOOP_RADIUS_M, DEFAULT_MATCH_RATIO,
};
use regolith_core::synthetic::{arc_scene, strip_scene, FeatureScene, ObservationNoise, StripLayout};

/// Model with the generator's own tracks, at the true poses and points.
fn ground_truth_model(scene: &FeatureScene) -> SparseModel {
    let mut model = SparseModel::new(scene.intrinsics);
    for (i, pose) in scene.poses.iter().enumerate() {
        model.images.insert(
            i as u32,
            ModelImage {
                name: scene.names[i].clone(),
                pose: *pose,
                keypoints: scene.features[i].iter().map(|k| k.position).collect(),
            },
        );
    }
    let mut tracks: Vec<Vec<Observation>> = vec![Vec::new(); scene.points.len()];
    for (i, ids) in scene.point_of.iter().enumerate() {
        for (k, id) in ids.iter().enumerate() {
            if let Some(j) = id {
                tracks[*j].push(Observation { image_id: i as u32, keypoint: k as u32 });
            }
        }
    }
    for (j, track) in tracks.into_iter().enumerate() {
        if track.len() >= 2 {
            model.points.insert(
                j as u64,
                Point3D { position: scene.points[j], color: [0.5; 3], reprojection_error_px: 0.0, track },
            );
        }
    }
    model.update_point_errors();
    model
}

fn perturb_poses(model: &mut SparseModel, seed: u64, metres: f64, radians: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for im in model.images.values_mut() {
        let dc = Vector3::from_fn(|_, _| rng.random_range(-metres..metres));
        let dr = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-radians..radians)));
        im.pose = CameraPose::from_center(dr * im.pose.rotation, im.pose.center() + dc);
    }
}

fn mean_error(model: &SparseModel) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for p in model.points.values() {
        for o in &p.track {
            sum += model.residual(p, o).unwrap().norm();
            n += 1;
        }
    }
    sum / n as f64
}

fn registered_centres(model: &SparseModel, scene: &FeatureScene) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    model.images.iter().map(|(&id, im)| (im.pose.center(), scene.poses[id as usize].center())).unzip()
}

#[test]
fn bundle_adjustment_on_the_arc_reaches_the_noise_floor() {
    let scene = arc_scene(&ObservationNoise::default(), 3);
    let mut model = ground_truth_model(&scene);
    perturb_poses(&mut model, 4, 0.1, 0.01);
    let before = mean_error(&model);
    let report = bundle_adjust(&mut model, &[], &BundleConfig::default()).unwrap();
    let after = mean_error(&model);
    assert!(before > 2.0, "perturbation too small: {before}");
    assert!(after <= 0.7, "mean reprojection {after}");
    assert!(report.accepted_costs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn priors_anchor_the_gauge_without_alignment() {
    let scene = arc_scene(&ObservationNoise::default(), 5);
    let priors = scene.priors(0.05, 0.0, 6);
    let mut model = ground_truth_model(&scene);
    perturb_poses(&mut model, 7, 0.3, 0.02);
    let report = bundle_adjust(&mut model, &priors, &BundleConfig::default()).unwrap();
    assert!(report.prior_gauge);
    let (est, truth) = registered_centres(&model, &scene);
    let worst = est.iter().zip(&truth).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst <= 0.1, "worst absolute position error {worst} m");
}

#[test]
fn arc_reconstruction_from_features() {
    let scene = arc_scene(&ObservationNoise::default(), 11);
    let rec = reconstruct(
        &scene.intrinsics,
        &scene.names,
        &scene.features,
        &[],
        &PairStrategy::Exhaustive,
        DEFAULT_MATCH_RATIO,
        &MapperConfig::default(),
    )
    .unwrap();
    let r = &rec.report;
    eprintln!("arc: {r:?}");
    assert_eq!(r.registered_images, 20);
    assert!(r.converged);
    assert!(r.mean_reprojection_error_px <= 0.7, "{}", r.mean_reprojection_error_px);
    let (est, truth) = registered_centres(&rec.mapped.model, &scene);
    let sim = umeyama(&est, &truth).unwrap();
    let aligned: Vec<_> = est.iter().map(|p| sim.apply(p)).collect();
    let err = rmse(&aligned, &truth);
    assert!(err <= 0.01 * scene.trajectory_length(), "rmse {err} m");
    for p in rec.mapped.model.points.values() {
        for o in &p.track {
            let pose = rec.mapped.model.images[&o.image_id].pose;
            assert!(pose.transform(&p.position).z > 0.0);
        }
    }
}

#[test]
fn priors_bridge_a_textureless_gap() {
    let scene = strip_scene(&StripLayout::gap_strip(), &ObservationNoise::default(), 21);
    let priors = scene.priors(0.05, 1.0, 22);
    let cfg = MapperConfig::default();
    let run = |strategy: PairStrategy, priors: &[_]| {
        reconstruct(&scene.intrinsics, &scene.names, &scene.features, priors, &strategy, DEFAULT_MATCH_RATIO, &cfg)
            .unwrap()
    };
    let exhaustive = run(PairStrategy::Exhaustive, &[]);
    let prior = run(PairStrategy::Prior { window: 5, radius: DEFAULT_LOOP_RADIUS_M }, &priors);
    eprintln!("exhaustive: {:?}", exhaustive.report);
    eprintln!("prior: {:?} segments {}", prior.report, prior.mapped.segments);
    assert!(!exhaustive.report.converged);
    assert!(prior.report.converged);
    let (est, truth) = registered_centres(&prior.mapped.model, &scene);
    let worst = est.iter().zip(&truth).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst < 0.25, "worst position error {worst} m");
}

#[test]
fn mapping_is_deterministic() {
    let scene = strip_scene(&StripLayout::plain(12), &ObservationNoise::default(), 31);
    let go = || {
        reconstruct(
            &scene.intrinsics,
            &scene.names,
            &scene.features,
            &[],
            &PairStrategy::Sequential { window: 3 },
            DEFAULT_MATCH_RATIO,
            &MapperConfig::default(),
        )
        .unwrap()
        .mapped
        .model
    };
    assert_eq!(go(), go());
}
