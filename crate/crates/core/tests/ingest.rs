use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use regolith_core::camera::CameraIntrinsics;
use regolith_core::ingest::messages::{
    CameraInfoMsg, Header, ImageMsg, NavSatFixMsg, PoseMsg, CAMERA_INFO_TYPE, IMAGE_TYPE, NAVSAT_TYPE, POSE_COV_TYPE,
};
use regolith_core::ingest::rosbag::BagWriter;
use regolith_core::ingest::{
    read_recording, write_manifest_dataset, Backend, IngestConfig, IngestError, Manifest, ManifestFrame, PosePrior,
};
use regolith_core::raster::Image;

const MS: i64 = 1_000_000;

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(40.0, 40.0, 16.0, 12.0, 32, 24)
}

fn test_image(seed: usize) -> Image {
    Image::from_fn(32, 24, |x, y| {
        let v = ((x * 7 + y * 13 + seed * 31) % 256) as f64 / 255.0;
        [v, 1.0 - v, ((x + seed) % 2) as f64]
    })
}

fn write_manifest_fixture(dir: &Path, stamps: &[i64]) {
    let mut frames = Vec::new();
    for (i, &t) in stamps.iter().enumerate() {
        let file = format!("img_{i}.png");
        test_image(i).save(&dir.join(&file)).unwrap();
        frames.push(ManifestFrame { file, timestamp_ns: t });
    }
    let m = Manifest { frames, image_topic: "/cam/image".into() };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
    std::fs::write(dir.join("intrinsics.json"), serde_json::to_string(&intrinsics()).unwrap()).unwrap();
}

#[test]
fn empty_directory_has_no_frames() {
    let dir = tempfile::tempdir().unwrap();
    for backend in [Backend::Manifest, Backend::Rosbag2] {
        let cfg = IngestConfig { backend, ..Default::default() };
        let err = read_recording(dir.path(), &cfg).unwrap_err();
        assert!(matches!(err, IngestError::NoFrames(_)), "{err}");
        assert!(err.to_string().contains("no frames found"));
    }
}

#[test]
fn missing_path_is_reported() {
    let err = read_recording(Path::new("/definitely/not/here"), &IngestConfig::default()).unwrap_err();
    assert!(matches!(err, IngestError::MissingPath(_)));
}

#[test]
fn manifest_with_three_frames() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest_fixture(dir.path(), &[0, 33 * MS, 66 * MS]);
    let ds = read_recording(dir.path(), &IngestConfig::default()).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.frames.iter().map(|f| f.frame_id).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(ds.frames[2].timestamp_ns, 66 * MS);
    assert_eq!(ds.frames[1].image.to_rgb8(), test_image(1).to_rgb8());
    assert_eq!(ds.intrinsics, intrinsics());
    assert_eq!(ds.prior_count(), 0);
    // two reads are bit-identical
    assert_eq!(read_recording(dir.path(), &IngestConfig::default()).unwrap(), ds);
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest_fixture(dir.path(), &[0, 40 * MS, 20 * MS, 60 * MS]);
    match read_recording(dir.path(), &IngestConfig::default()).unwrap_err() {
        IngestError::NonMonotone { index, .. } => assert_eq!(index, 2),
        other => panic!("unexpected {other}"),
    }
    let cfg = IngestConfig { image_topic: Some("/other".into()), ..Default::default() };
    assert!(matches!(read_recording(dir.path(), &cfg), Err(IngestError::UnknownTopic(_))));
}

#[test]
fn manifest_priors_are_synchronized() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest_fixture(dir.path(), &[0, 100 * MS, 200 * MS]);
    std::fs::write(
        dir.path().join("priors.csv"),
        "timestamp_ns,x,y,z,qw,qx,qy,qz,sx,sy,sz\n5000000,1,0,0,,,,,0.1,0.1,0.1\n98000000,2,0,0,1,0,0,0,0.1,0.1,0.1\n310000000,3,0,0,,,,,0.1,0.1,0.1\n",
    )
    .unwrap();
    let ds = read_recording(dir.path(), &IngestConfig::default()).unwrap();
    assert_eq!(ds.priors[0].unwrap().position_m.x, 1.0);
    assert_eq!(ds.priors[1].unwrap().position_m.x, 2.0);
    assert!(ds.priors[1].unwrap().orientation.is_some());
    assert!(ds.priors[2].is_none());
}

#[test]
fn normalized_dataset_roundtrips_through_manifest_layout() {
    let src = tempfile::tempdir().unwrap();
    write_manifest_fixture(src.path(), &[0, 33 * MS, 66 * MS]);
    std::fs::write(src.path().join("priors.csv"), "timestamp_ns,x,y,z,qw,qx,qy,qz,sx,sy,sz\n0,1,2,3,,,,,0.5,0.5,0.5\n")
        .unwrap();
    let ds = read_recording(src.path(), &IngestConfig::default()).unwrap();
    let out = tempfile::tempdir().unwrap();
    write_manifest_dataset(&ds, out.path()).unwrap();
    assert_eq!(read_recording(out.path(), &IngestConfig::default()).unwrap(), ds);
}

/// Writes a bag with `n` rgb8 frames, camera info and optional priors.
fn write_bag(path: &Path, stamps: &[i64], with_info: bool) {
    let mut w = BagWriter::create(path).unwrap();
    let img_topic = w.add_topic("/cam/image_raw", IMAGE_TYPE).unwrap();
    let info_topic = w.add_topic("/cam/camera_info", CAMERA_INFO_TYPE).unwrap();
    let gps = w.add_topic("/gps/fix", NAVSAT_TYPE).unwrap();
    let pose = w.add_topic("/odom/pose", POSE_COV_TYPE).unwrap();
    if with_info {
        let info = CameraInfoMsg::from_intrinsics(Header::from_ns(stamps[0], "cam"), &intrinsics());
        w.write(info_topic, stamps[0], &info.encode()).unwrap();
    }
    for (i, &t) in stamps.iter().enumerate() {
        let msg = ImageMsg::from_image(Header::from_ns(t, "cam"), &test_image(i), "rgb8").unwrap();
        w.write(img_topic, t, &msg.encode()).unwrap();
        let fix = NavSatFixMsg {
            header: Header::from_ns(t + 2 * MS, "gps"),
            status: 0,
            service: 1,
            latitude: 42.0 + i as f64 * 1e-6,
            longitude: -1.0,
            altitude: 300.0,
            position_covariance: [0.01, 0.0, 0.0, 0.0, 0.01, 0.0, 0.0, 0.0, 0.04],
            position_covariance_type: 2,
        };
        w.write(gps, t + 2 * MS, &fix.encode()).unwrap();
        let q = UnitQuaternion::from_euler_angles(0.0, 0.0, 0.1 * i as f64);
        let p = PoseMsg {
            header: Header::from_ns(t, "odom"),
            position: Vector3::new(i as f64, 0.0, 0.0),
            orientation_xyzw: [q.i, q.j, q.k, q.w],
            covariance: [0.0; 36],
        };
        w.write(pose, t, &p.encode(true)).unwrap();
    }
    w.finish().unwrap();
}

#[test]
fn rosbag_fixture_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let stamps: Vec<i64> = (0..5).map(|i| 1_700_000_000 * 1_000_000_000 + i * 33_333_333 + 17).collect();
    write_bag(&dir.path().join("rover_0.db3"), &stamps, true);
    let cfg = IngestConfig { backend: Backend::Rosbag2, ..Default::default() };
    let ds = read_recording(dir.path(), &cfg).unwrap();
    assert_eq!(ds.len(), 5);
    assert_eq!(ds.frames.iter().map(|f| f.timestamp_ns).collect::<Vec<_>>(), stamps);
    for (i, f) in ds.frames.iter().enumerate() {
        assert_eq!(f.image.to_rgb8(), test_image(i).to_rgb8());
        assert_eq!(f.source_topic, "/cam/image_raw");
    }
    assert_eq!(ds.intrinsics, intrinsics());
    assert_eq!(read_recording(dir.path(), &cfg).unwrap(), ds);
}

#[test]
fn rosbag_prior_topics() {
    let dir = tempfile::tempdir().unwrap();
    let stamps: Vec<i64> = (0..4).map(|i| 10 * MS + i * 100 * MS).collect();
    write_bag(&dir.path().join("b.db3"), &stamps, true);

    let gps = IngestConfig { backend: Backend::Rosbag2, prior_topic: Some("/gps/fix".into()), ..Default::default() };
    let ds = read_recording(dir.path(), &gps).unwrap();
    assert_eq!(ds.prior_count(), 4);
    let p0: PosePrior = ds.priors[0].unwrap();
    assert!(p0.position_m.norm() < 1e-9);
    assert!((p0.position_sigma_m - Vector3::new(0.1, 0.1, 0.2)).norm() < 1e-12);
    // 1e-6 degree of latitude is about 0.11 m north
    assert!((ds.priors[1].unwrap().position_m.y - 0.111).abs() < 0.005);

    let odom = IngestConfig { backend: Backend::Rosbag2, prior_topic: Some("/odom/pose".into()), ..Default::default() };
    let ds = read_recording(dir.path(), &odom).unwrap();
    let p2 = ds.priors[2].unwrap();
    assert_eq!(p2.position_m, Vector3::new(2.0, 0.0, 0.0));
    let expected = UnitQuaternion::from_euler_angles(0.0, 0.0, 0.2).inverse();
    assert!(p2.orientation.unwrap().angle_to(&expected) < 1e-12);
    assert_eq!(p2.position_sigma_m, Vector3::repeat(1.0));
}

#[test]
fn rosbag_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_bag(&dir.path().join("b.db3"), &[0, MS, 2 * MS], false);
    let cfg = IngestConfig { backend: Backend::Rosbag2, ..Default::default() };
    assert!(matches!(read_recording(dir.path(), &cfg), Err(IngestError::MissingIntrinsics(_))));
    std::fs::write(dir.path().join("intrinsics.json"), serde_json::to_string(&intrinsics()).unwrap()).unwrap();
    assert_eq!(read_recording(dir.path(), &cfg).unwrap().len(), 3);
    let bad = IngestConfig { image_topic: Some("/nope".into()), ..cfg.clone() };
    assert!(matches!(read_recording(dir.path(), &bad), Err(IngestError::UnknownTopic(_))));

    let dir = tempfile::tempdir().unwrap();
    let mut w = BagWriter::create(&dir.path().join("c.db3")).unwrap();
    let t = w.add_topic("/cam", IMAGE_TYPE).unwrap();
    let mut msg = ImageMsg::from_image(Header::from_ns(1, "c"), &test_image(0), "rgb8").unwrap();
    msg.encoding = "16UC1".into();
    w.write(t, 1, &msg.encode()).unwrap();
    w.finish().unwrap();
    std::fs::write(dir.path().join("intrinsics.json"), serde_json::to_string(&intrinsics()).unwrap()).unwrap();
    assert!(matches!(read_recording(dir.path(), &cfg), Err(IngestError::UnsupportedEncoding(_))));
}
