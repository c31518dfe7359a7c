//! `transforms.json` dataset descriptor for radiance-field trainers.
//!
//! Transforms are camera-to-world with the camera looking down -z and y up,
//! i.e. the model's camera axes multiplied by `diag(1, -1, -1)`.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{io_err, FormatError};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::sfm::SparseModel;

/// Axis flip between the model's camera frame (x right, y down, z forward)
/// and the descriptor's (x right, y up, z backward).
pub const OPENGL_FLIP: [[f64; 4]; 4] =
    [[1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

const CONVENTION: &str = "transform_matrix is camera-to-world; camera axes x right, y up, looking down -z \
(model camera axes with y and z negated)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMetadata {
    pub generator: String,
    pub convention: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorFrame {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
    pub colmap_im_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub camera_model: String,
    pub fl_x: f64,
    pub fl_y: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p2: Option<f64>,
    pub frames: Vec<DescriptorFrame>,
    pub metadata: DescriptorMetadata,
}

fn to_rows(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn flip() -> Matrix4<f64> {
    Matrix4::from_fn(|r, c| OPENGL_FLIP[r][c])
}

/// Camera-to-world transform in the descriptor convention.
pub(crate) fn descriptor_transform(pose: &CameraPose) -> Matrix4<f64> {
    let inv = pose.inverse();
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&inv.rotation_matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&inv.translation);
    m * flip()
}

impl DatasetDescriptor {
    /// Frames in image-id order, each `file_path` being `prefix` joined with the image name.
    pub fn from_model(model: &SparseModel, prefix: &str) -> Self {
        let k = &model.intrinsics;
        let nz = |v: f64| (v != 0.0).then_some(v);
        let frames = model
            .images
            .iter()
            .map(|(&id, im)| DescriptorFrame {
                file_path: if prefix.is_empty() {
                    im.name.clone()
                } else {
                    format!("{}/{}", prefix.trim_end_matches('/'), im.name)
                },
                transform_matrix: to_rows(&descriptor_transform(&im.pose)),
                colmap_im_id: id,
            })
            .collect();
        DatasetDescriptor {
            camera_model: "OPENCV".into(),
            fl_x: k.fx,
            fl_y: k.fy,
            cx: k.cx,
            cy: k.cy,
            w: k.width,
            h: k.height,
            k1: nz(k.distortion[0]),
            k2: nz(k.distortion[1]),
            p1: nz(k.distortion[2]),
            p2: nz(k.distortion[3]),
            frames,
            metadata: DescriptorMetadata {
                generator: concat!("regolith ", env!("CARGO_PKG_VERSION")).into(),
                convention: CONVENTION.into(),
            },
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let mut k = CameraIntrinsics::pinhole(self.fl_x, self.fl_y, self.cx, self.cy, self.w, self.h);
        k.distortion = [self.k1.unwrap_or(0.0), self.k2.unwrap_or(0.0), self.p1.unwrap_or(0.0), self.p2.unwrap_or(0.0)];
        k
    }

    /// World-to-camera poses recovered by undoing the flip and inverting.
    pub fn poses(&self) -> Vec<CameraPose> {
        self.frames
            .iter()
            .map(|f| {
                let m = Matrix4::from_fn(|r, c| f.transform_matrix[r][c]) * flip();
                let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
                let c: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
                let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
                CameraPose::from_center(rot.inverse(), c)
            })
            .collect()
    }

    fn check_rotations(&self) -> Result<(), String> {
        for f in &self.frames {
            let r = Matrix3::from_fn(|i, j| f.transform_matrix[i][j]);
            let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
            if !(dev <= 1e-6) {
                return Err(format!("{}: rotation block deviates from orthonormal by {dev:e}", f.file_path));
            }
        }
        Ok(())
    }
}

/// Writes `path` for every registered image, which must exist in `image_dir`.
///
/// `file_path` entries are relative to the descriptor's directory when
/// `image_dir` lies below it.
pub fn write_dataset_descriptor(
    model: &SparseModel,
    image_dir: &Path,
    path: &Path,
) -> Result<DatasetDescriptor, FormatError> {
    for im in model.images.values() {
        let p = image_dir.join(&im.name);
        if !p.is_file() {
            return Err(FormatError::MissingImage(p));
        }
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let prefix = match image_dir.strip_prefix(base) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => image_dir.to_string_lossy().into_owned(),
    };
    let desc = DatasetDescriptor::from_model(model, &prefix);
    let json =
        serde_json::to_string_pretty(&desc).map_err(|source| FormatError::Json { path: path.to_path_buf(), source })?;
    if !base.as_os_str().is_empty() {
        fs::create_dir_all(base).map_err(io_err(base))?;
    }
    fs::write(path, json + "\n").map_err(io_err(path))?;
    Ok(desc)
}

pub fn read_dataset_descriptor(path: &Path) -> Result<DatasetDescriptor, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let desc: DatasetDescriptor =
        serde_json::from_str(&text).map_err(|source| FormatError::Json { path: path.to_path_buf(), source })?;
    desc.check_rotations().map_err(|message| FormatError::Invalid { path: path.to_path_buf(), message })?;
    Ok(desc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfm::ModelImage;

    fn model(poses: &[CameraPose]) -> SparseModel {
        let mut m = SparseModel::new(CameraIntrinsics::pinhole(120.0, 121.0, 64.0, 48.0, 128, 96));
        for (i, p) in poses.iter().enumerate() {
            m.images.insert(i as u32, ModelImage { name: format!("f{i}.png"), pose: *p, keypoints: vec![] });
        }
        m
    }

    #[test]
    fn identity_pose_gives_the_flip() {
        let d = DatasetDescriptor::from_model(&model(&[CameraPose::identity()]), "images");
        assert_eq!(d.frames[0].transform_matrix, OPENGL_FLIP);
        assert_eq!(d.frames[0].file_path, "images/f0.png");
    }

    #[test]
    fn camera_looks_down_negative_z() {
        let pose = CameraPose::look_at(Vector3::new(3.0, 1.0, 2.0), Vector3::zeros(), Vector3::z());
        let t = descriptor_transform(&pose);
        let forward = -t.fixed_view::<3, 1>(0, 2).into_owned();
        let expected = -Vector3::new(3.0, 1.0, 2.0).normalize();
        assert!((forward - expected).norm() < 1e-12);
        assert!((t.fixed_view::<3, 1>(0, 3) - Vector3::new(3.0, 1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn two_images_with_files() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        fs::create_dir(&images).unwrap();
        let poses = [
            CameraPose::identity(),
            CameraPose::look_at(Vector3::new(1.0, 0.0, -4.0), Vector3::zeros(), -Vector3::y()),
        ];
        let m = model(&poses);
        let out = dir.path().join("transforms.json");
        assert!(matches!(write_dataset_descriptor(&m, &images, &out), Err(FormatError::MissingImage(_))));
        for i in 0..2 {
            fs::write(images.join(format!("f{i}.png")), b"x").unwrap();
        }
        write_dataset_descriptor(&m, &images, &out).unwrap();
        let d = read_dataset_descriptor(&out).unwrap();
        assert_eq!(d.frames.len(), 2);
        assert_eq!((d.fl_x, d.fl_y, d.cx, d.cy, d.w, d.h), (120.0, 121.0, 64.0, 48.0, 128, 96));
        assert_eq!(d.frames[1].file_path, "images/f1.png");
        let text = fs::read_to_string(&out).unwrap();
        assert!(!text.contains("k1") && text.contains("\"metadata\""));
        for (a, b) in d.poses().iter().zip(&poses) {
            assert!(a.rotation.angle_to(&b.rotation) < 1e-9);
            assert!((a.translation - b.translation).norm() < 1e-9);
        }
        assert_eq!(d.intrinsics(), m.intrinsics);
    }

    #[test]
    fn distortion_is_emitted_only_when_nonzero() {
        let mut m = model(&[CameraPose::identity()]);
        m.intrinsics.distortion = [0.1, 0.0, 0.0, -0.002];
        let json = serde_json::to_string(&DatasetDescriptor::from_model(&m, "")).unwrap();
        assert!(json.contains("\"k1\":0.1") && json.contains("\"p2\":-0.002"));
        assert!(!json.contains("\"k2\"") && !json.contains("\"p1\""));
    }
}
