//! COLMAP text model: `cameras.txt`, `images.txt`, `points3D.txt`.
//!
//! One shared camera with id 1. Floats are written in shortest round-trip
//! form; colours are quantized to 8 bits as the format requires.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};

use super::{io_err, FormatError};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::sfm::{ModelImage, Observation, Point3D, SparseModel};

pub const CAMERAS_FILE: &str = "cameras.txt";
pub const IMAGES_FILE: &str = "images.txt";
pub const POINTS_FILE: &str = "points3D.txt";

const CAMERA_ID: u32 = 1;

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the three text files into `dir`, creating it if needed.
///
/// An empty model (no images) produces headers only.
pub fn write_sparse_text(model: &SparseModel, dir: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let k = &model.intrinsics;

    let mut cameras = String::from(
        "# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n",
    );
    let _ = writeln!(cameras, "# Number of cameras: {}", usize::from(!model.images.is_empty()));
    if !model.images.is_empty() {
        if k.has_distortion() {
            let [k1, k2, p1, p2] = k.distortion;
            let _ = writeln!(
                cameras,
                "{CAMERA_ID} OPENCV {} {} {} {} {} {} {k1} {k2} {p1} {p2}",
                k.width, k.height, k.fx, k.fy, k.cx, k.cy
            );
        } else {
            let _ =
                writeln!(cameras, "{CAMERA_ID} PINHOLE {} {} {} {} {} {}", k.width, k.height, k.fx, k.fy, k.cx, k.cy);
        }
    }

    let mut observed: HashMap<(u32, u32), u64> = HashMap::new();
    for (&pid, p) in &model.points {
        for o in &p.track {
            observed.insert((o.image_id, o.keypoint), pid);
        }
    }
    let mut images = String::from(
        "# Image list with two lines of data per image:\n\
         #   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n\
         #   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    let obs = model.observation_count();
    let mean = if model.images.is_empty() { 0.0 } else { obs as f64 / model.images.len() as f64 };
    let _ = writeln!(images, "# Number of images: {}, mean observations per image: {mean}", model.images.len());
    for (&id, im) in &model.images {
        let q = im.pose.rotation.quaternion();
        let t = im.pose.translation;
        let _ =
            writeln!(images, "{id} {} {} {} {} {} {} {} {CAMERA_ID} {}", q.w, q.i, q.j, q.k, t.x, t.y, t.z, im.name);
        let row: Vec<String> = im
            .keypoints
            .iter()
            .enumerate()
            .map(|(k, p)| match observed.get(&(id, k as u32)) {
                Some(pid) => format!("{} {} {pid}", p.x, p.y),
                None => format!("{} {} -1", p.x, p.y),
            })
            .collect();
        images.push_str(&row.join(" "));
        images.push('\n');
    }

    let mut points = String::from(
        "# 3D point list with one line of data per point:\n\
         #   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n",
    );
    let mean_track = if model.points.is_empty() { 0.0 } else { obs as f64 / model.points.len() as f64 };
    let _ = writeln!(points, "# Number of points: {}, mean track length: {mean_track}", model.points.len());
    for (&pid, p) in &model.points {
        let x = p.position;
        let _ = write!(
            points,
            "{pid} {} {} {} {} {} {} {}",
            x.x,
            x.y,
            x.z,
            to_u8(p.color[0]),
            to_u8(p.color[1]),
            to_u8(p.color[2]),
            p.reprojection_error_px
        );
        for o in &p.track {
            let _ = write!(points, " {} {}", o.image_id, o.keypoint);
        }
        points.push('\n');
    }

    for (name, text) in [(CAMERAS_FILE, cameras), (IMAGES_FILE, images), (POINTS_FILE, points)] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}

struct Lines<'a> {
    path: &'a Path,
    text: String,
}

impl<'a> Lines<'a> {
    fn load(path: &'a Path) -> Result<Self, FormatError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(Self { path, text })
    }

    /// Non-comment, non-blank lines with 1-based line numbers.
    fn data(&self) -> impl Iterator<Item = (usize, &str)> {
        self.text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
    }

    fn parse_err(&self, line: usize, message: impl Into<String>) -> FormatError {
        FormatError::Parse { path: self.path.to_path_buf(), line, message: message.into() }
    }

    fn dangling(&self, line: usize, message: impl Into<String>) -> FormatError {
        FormatError::Dangling { path: self.path.to_path_buf(), line, message: message.into() }
    }

    fn num<T: std::str::FromStr>(&self, line: usize, field: &str, what: &str) -> Result<T, FormatError> {
        field.parse().map_err(|_| self.parse_err(line, format!("invalid {what} {field:?}")))
    }
}

fn read_camera(dir: &Path) -> Result<Option<CameraIntrinsics>, FormatError> {
    let path = dir.join(CAMERAS_FILE);
    let f = Lines::load(&path)?;
    let mut camera = None;
    for (ln, line) in f.data() {
        if camera.is_some() {
            return Err(f.parse_err(ln, "only a single shared camera is supported"));
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 4 {
            return Err(f.parse_err(ln, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS"));
        }
        let id: u32 = f.num(ln, t[0], "camera id")?;
        if id != CAMERA_ID {
            return Err(f.parse_err(ln, format!("camera id {id}, expected {CAMERA_ID}")));
        }
        let (w, h): (u32, u32) = (f.num(ln, t[2], "width")?, f.num(ln, t[3], "height")?);
        let params: Vec<f64> = t[4..].iter().map(|v| f.num(ln, v, "parameter")).collect::<Result<_, _>>()?;
        let mut k = match (t[1], params.len()) {
            ("PINHOLE", 4) | ("OPENCV", 8) => {
                CameraIntrinsics::pinhole(params[0], params[1], params[2], params[3], w, h)
            }
            (m, n) => return Err(f.parse_err(ln, format!("unsupported camera model {m} with {n} parameters"))),
        };
        if params.len() == 8 {
            k.distortion = [params[4], params[5], params[6], params[7]];
        }
        camera = Some(k);
    }
    Ok(camera)
}

/// Reads a model written by [`write_sparse_text`] or COLMAP's text export.
///
/// Reports malformed lines and references to missing images, keypoints or
/// points with the file and line number.
pub fn read_sparse_text(dir: &Path) -> Result<SparseModel, FormatError> {
    let camera = read_camera(dir)?;

    let images_path = dir.join(IMAGES_FILE);
    let fi = Lines::load(&images_path)?;
    let mut images = BTreeMap::new();
    // (image, keypoint) -> (point id, line) as claimed by images.txt
    let mut claimed: Vec<(u32, u32, u64, usize)> = Vec::new();
    let mut data = fi.data();
    while let Some((ln, line)) = data.next() {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 10 {
            return Err(fi.parse_err(ln, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"));
        }
        let id: u32 = fi.num(ln, t[0], "image id")?;
        let v: Vec<f64> = t[1..8].iter().map(|x| fi.num(ln, x, "pose value")).collect::<Result<_, _>>()?;
        let cam: u32 = fi.num(ln, t[8], "camera id")?;
        if camera.is_none() || cam != CAMERA_ID {
            return Err(fi.dangling(ln, format!("camera {cam} is not defined")));
        }
        // names may contain spaces: take the rest of the line after nine fields
        let name = line.split_whitespace().skip(9).collect::<Vec<_>>().join(" ");
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        if !(q.norm() > 0.0) {
            return Err(fi.parse_err(ln, "zero quaternion"));
        }
        // keep written unit quaternions bit-exact; renormalize anything else
        let rot = if (q.norm() - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        let pose = CameraPose::new(rot, Vector3::new(v[4], v[5], v[6]));
        let (pln, points_line) = match data.next() {
            Some(x) => x,
            None => (ln + 1, ""),
        };
        let p: Vec<&str> = points_line.split_whitespace().collect();
        if p.len() % 3 != 0 {
            return Err(fi.parse_err(pln, "POINTS2D must be (X, Y, POINT3D_ID) triples"));
        }
        let mut keypoints = Vec::with_capacity(p.len() / 3);
        for (k, c) in p.chunks(3).enumerate() {
            keypoints.push(Vector2::new(fi.num(pln, c[0], "x")?, fi.num(pln, c[1], "y")?));
            let pid: i64 = fi.num(pln, c[2], "point id")?;
            if pid >= 0 {
                claimed.push((id, k as u32, pid as u64, pln));
            } else if pid != -1 {
                return Err(fi.parse_err(pln, format!("invalid point id {pid}")));
            }
        }
        if images.insert(id, ModelImage { name, pose, keypoints }).is_some() {
            return Err(fi.parse_err(ln, format!("duplicate image id {id}")));
        }
    }

    let points_path = dir.join(POINTS_FILE);
    let fp = Lines::load(&points_path)?;
    let mut points = BTreeMap::new();
    for (ln, line) in fp.data() {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 8 || (t.len() - 8) % 2 != 0 {
            return Err(fp.parse_err(ln, "expected POINT3D_ID X Y Z R G B ERROR (IMAGE_ID POINT2D_IDX)..."));
        }
        let pid: u64 = fp.num(ln, t[0], "point id")?;
        let x: Vec<f64> = t[1..4].iter().map(|v| fp.num(ln, v, "coordinate")).collect::<Result<_, _>>()?;
        let rgb: Vec<u8> = t[4..7].iter().map(|v| fp.num(ln, v, "colour")).collect::<Result<_, _>>()?;
        let error: f64 = fp.num(ln, t[7], "error")?;
        let mut track = Vec::with_capacity((t.len() - 8) / 2);
        for c in t[8..].chunks(2) {
            let o =
                Observation { image_id: fp.num(ln, c[0], "image id")?, keypoint: fp.num(ln, c[1], "keypoint index")? };
            let Some(im) = images.get(&o.image_id) else {
                return Err(fp.dangling(ln, format!("point {pid} observed in unknown image {}", o.image_id)));
            };
            if o.keypoint as usize >= im.keypoints.len() {
                return Err(
                    fp.dangling(ln, format!("point {pid} references keypoint {} of image {}", o.keypoint, o.image_id))
                );
            }
            track.push(o);
        }
        track.sort();
        let point = Point3D {
            position: Vector3::new(x[0], x[1], x[2]),
            color: [rgb[0] as f64 / 255.0, rgb[1] as f64 / 255.0, rgb[2] as f64 / 255.0],
            reprojection_error_px: error,
            track,
        };
        if points.insert(pid, point).is_some() {
            return Err(fp.parse_err(ln, format!("duplicate point id {pid}")));
        }
    }

    for (img, kp, pid, ln) in claimed {
        let ok =
            points.get(&pid).is_some_and(|p: &Point3D| p.track.contains(&Observation { image_id: img, keypoint: kp }));
        if !ok {
            return Err(
                fi.dangling(ln, format!("POINT3D_ID {pid} of image {img} keypoint {kp} has no matching track entry"))
            );
        }
    }

    let intrinsics = match camera {
        Some(k) => k,
        None if images.is_empty() => {
            return Err(FormatError::Empty("model has no camera and no images"));
        }
        None => unreachable!("images without a camera are rejected above"),
    };
    Ok(SparseModel { intrinsics, images, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_image_model() -> SparseModel {
        let k = CameraIntrinsics::pinhole(100.0, 100.0, 50.0, 40.0, 100, 80);
        let mut m = SparseModel::new(k);
        for i in 0..2u32 {
            m.images.insert(
                i + 1,
                ModelImage {
                    name: format!("img {i}.png"),
                    pose: CameraPose::from_center(UnitQuaternion::identity(), Vector3::new(i as f64, 0.0, 0.0)),
                    keypoints: vec![Vector2::new(10.5, 20.25), Vector2::new(30.0, 5.0)],
                },
            );
        }
        m.points.insert(
            7,
            Point3D {
                position: Vector3::new(0.1, 0.2, 5.0),
                color: [1.0, 0.0, 51.0 / 255.0],
                reprojection_error_px: 0.25,
                track: vec![Observation { image_id: 1, keypoint: 0 }, Observation { image_id: 2, keypoint: 1 }],
            },
        );
        m
    }

    #[test]
    fn empty_model_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let m = SparseModel::new(CameraIntrinsics::pinhole(1.0, 1.0, 0.5, 0.5, 1, 1));
        write_sparse_text(&m, dir.path()).unwrap();
        for f in [CAMERAS_FILE, IMAGES_FILE, POINTS_FILE] {
            let text = fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(text.lines().all(|l| l.starts_with('#')), "{f}: {text}");
        }
    }

    #[test]
    fn layout_matches_the_text_convention() {
        let dir = tempfile::tempdir().unwrap();
        write_sparse_text(&two_image_model(), dir.path()).unwrap();
        let data = |f: &str| -> Vec<String> {
            fs::read_to_string(dir.path().join(f))
                .unwrap()
                .lines()
                .filter(|l| !l.starts_with('#'))
                .map(String::from)
                .collect()
        };
        assert_eq!(data(CAMERAS_FILE), ["1 PINHOLE 100 80 100 100 50 40"]);
        let images = data(IMAGES_FILE);
        assert_eq!(images[0], "1 1 0 0 0 -0 -0 -0 1 img 0.png");
        assert_eq!(images[1], "10.5 20.25 7 30 5 -1");
        assert_eq!(images[3], "10.5 20.25 -1 30 5 7");
        assert_eq!(data(POINTS_FILE), ["7 0.1 0.2 5 255 0 51 0.25 1 0 2 1"]);
        assert_eq!(read_sparse_text(dir.path()).unwrap(), two_image_model());
    }

    #[test]
    fn dangling_point_id_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        write_sparse_text(&two_image_model(), dir.path()).unwrap();
        let path = dir.path().join(IMAGES_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("30 5 -1", "30 5 99");
        fs::write(&path, text).unwrap();
        match read_sparse_text(dir.path()) {
            Err(FormatError::Dangling { line, message, .. }) => {
                assert_eq!(line, 6);
                assert!(message.contains("99"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines_are_located() {
        let dir = tempfile::tempdir().unwrap();
        write_sparse_text(&two_image_model(), dir.path()).unwrap();
        let path = dir.path().join(POINTS_FILE);
        let text = fs::read_to_string(&path).unwrap().replace(" 0.25 ", " abc ");
        fs::write(&path, text).unwrap();
        let err = read_sparse_text(dir.path()).unwrap_err();
        assert!(matches!(err, FormatError::Parse { line: 4, .. }), "{err:?}");
        assert!(err.to_string().contains("points3D.txt:4"), "{err}");

        // track entry pointing past the keypoint list
        write_sparse_text(&two_image_model(), dir.path()).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace(" 2 1\n", " 2 5\n");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_sparse_text(dir.path()), Err(FormatError::Dangling { line: 4, .. })));
    }
}
