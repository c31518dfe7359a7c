//! The handful of ROS 2 message layouts the rosbag2 backend understands.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::cdr::{CdrError, CdrReader, CdrWriter};
use super::{IngestError, PosePrior};
use crate::camera::CameraIntrinsics;
use crate::raster::Image;

pub const IMAGE_TYPE: &str = "sensor_msgs/msg/Image";
pub const CAMERA_INFO_TYPE: &str = "sensor_msgs/msg/CameraInfo";
pub const NAVSAT_TYPE: &str = "sensor_msgs/msg/NavSatFix";
pub const POSE_COV_TYPE: &str = "geometry_msgs/msg/PoseWithCovarianceStamped";
pub const POSE_TYPE: &str = "geometry_msgs/msg/PoseStamped";

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Header {
    pub sec: i32,
    pub nanosec: u32,
    pub frame_id: String,
}

impl Header {
    pub fn from_ns(ns: i64, frame_id: &str) -> Self {
        Self {
            sec: ns.div_euclid(1_000_000_000) as i32,
            nanosec: ns.rem_euclid(1_000_000_000) as u32,
            frame_id: frame_id.to_string(),
        }
    }

    pub fn stamp_ns(&self) -> i64 {
        i64::from(self.sec) * 1_000_000_000 + i64::from(self.nanosec)
    }

    fn read(r: &mut CdrReader) -> Result<Self, CdrError> {
        Ok(Self { sec: r.i32()?, nanosec: r.u32()?, frame_id: r.string()? })
    }

    fn write(&self, w: &mut CdrWriter) {
        w.i32(self.sec);
        w.u32(self.nanosec);
        w.string(&self.frame_id);
    }
}

/// `sensor_msgs/msg/Image`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMsg {
    pub header: Header,
    pub height: u32,
    pub width: u32,
    pub encoding: String,
    pub is_bigendian: u8,
    pub step: u32,
    pub data: Vec<u8>,
}

impl ImageMsg {
    pub fn decode(payload: &[u8]) -> Result<Self, CdrError> {
        let mut r = CdrReader::new(payload)?;
        Ok(Self {
            header: Header::read(&mut r)?,
            height: r.u32()?,
            width: r.u32()?,
            encoding: r.string()?,
            is_bigendian: r.u8()?,
            step: r.u32()?,
            data: r.bytes()?.to_vec(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CdrWriter::new();
        self.header.write(&mut w);
        w.u32(self.height);
        w.u32(self.width);
        w.string(&self.encoding);
        w.u8(self.is_bigendian);
        w.u32(self.step);
        w.bytes(&self.data);
        w.finish()
    }

    /// Packs a raster as `rgb8`, `bgr8` or `mono8` (luma).
    pub fn from_image(header: Header, image: &Image, encoding: &str) -> Result<Self, IngestError> {
        let rgb = image.to_rgb8();
        let (w, h) = image.dims();
        let data: Vec<u8> = match encoding {
            "rgb8" => rgb,
            "bgr8" => rgb.chunks_exact(3).flat_map(|c| [c[2], c[1], c[0]]).collect(),
            "mono8" => image.luma().data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
            other => return Err(IngestError::UnsupportedEncoding(other.to_string())),
        };
        let channels = if encoding == "mono8" { 1 } else { 3 };
        Ok(Self {
            header,
            height: h as u32,
            width: w as u32,
            encoding: encoding.to_string(),
            is_bigendian: 0,
            step: (w * channels) as u32,
            data,
        })
    }

    pub fn to_image(&self) -> Result<Image, IngestError> {
        let channels = match self.encoding.as_str() {
            "rgb8" | "bgr8" => 3,
            "mono8" => 1,
            other => return Err(IngestError::UnsupportedEncoding(other.to_string())),
        };
        let (w, h, step) = (self.width as usize, self.height as usize, self.step as usize);
        let invalid = |reason: String| IngestError::InvalidFrame { index: 0, reason };
        if step < w * channels {
            return Err(invalid(format!("step {step} shorter than a {w}-pixel row")));
        }
        if self.data.len() < step * h {
            return Err(invalid(format!("{} data bytes for {h} rows of {step}", self.data.len())));
        }
        let mut rgb = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            let row = &self.data[y * step..y * step + w * channels];
            match self.encoding.as_str() {
                "rgb8" => rgb.extend_from_slice(row),
                "bgr8" => rgb.extend(row.chunks_exact(3).flat_map(|c| [c[2], c[1], c[0]])),
                _ => rgb.extend(row.iter().flat_map(|&v| [v, v, v])),
            }
        }
        Image::from_rgb8(w, h, &rgb).map_err(|e| invalid(e.to_string()))
    }
}

/// Leading fields of `sensor_msgs/msg/CameraInfo` (through `p`).
#[derive(Clone, Debug, PartialEq)]
pub struct CameraInfoMsg {
    pub header: Header,
    pub height: u32,
    pub width: u32,
    pub distortion_model: String,
    pub d: Vec<f64>,
    pub k: [f64; 9],
    pub r: [f64; 9],
    pub p: [f64; 12],
}

impl CameraInfoMsg {
    pub fn decode(payload: &[u8]) -> Result<Self, CdrError> {
        let mut r = CdrReader::new(payload)?;
        Ok(Self {
            header: Header::read(&mut r)?,
            height: r.u32()?,
            width: r.u32()?,
            distortion_model: r.string()?,
            d: r.f64_seq()?,
            k: r.f64_array()?,
            r: r.f64_array()?,
            p: r.f64_array()?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CdrWriter::new();
        self.header.write(&mut w);
        w.u32(self.height);
        w.u32(self.width);
        w.string(&self.distortion_model);
        w.f64_seq(&self.d);
        w.f64_slice(&self.k);
        w.f64_slice(&self.r);
        w.f64_slice(&self.p);
        // binning_x, binning_y, roi
        w.u32(0);
        w.u32(0);
        for _ in 0..4 {
            w.u32(0);
        }
        w.bool(false);
        w.finish()
    }

    pub fn from_intrinsics(header: Header, k: &CameraIntrinsics) -> Self {
        Self {
            header,
            height: k.height,
            width: k.width,
            distortion_model: "plumb_bob".into(),
            d: vec![k.distortion[0], k.distortion[1], k.distortion[2], k.distortion[3], 0.0],
            k: [k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0],
            r: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            p: [k.fx, 0.0, k.cx, 0.0, 0.0, k.fy, k.cy, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let mut distortion = [0.0; 4];
        for (dst, src) in distortion.iter_mut().zip(&self.d) {
            *dst = *src;
        }
        CameraIntrinsics {
            fx: self.k[0],
            fy: self.k[4],
            cx: self.k[2],
            cy: self.k[5],
            width: self.width,
            height: self.height,
            distortion,
        }
    }
}

/// `sensor_msgs/msg/NavSatFix`.
#[derive(Clone, Debug, PartialEq)]
pub struct NavSatFixMsg {
    pub header: Header,
    pub status: i8,
    pub service: u16,
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub position_covariance: [f64; 9],
    pub position_covariance_type: u8,
}

impl NavSatFixMsg {
    pub fn decode(payload: &[u8]) -> Result<Self, CdrError> {
        let mut r = CdrReader::new(payload)?;
        Ok(Self {
            header: Header::read(&mut r)?,
            status: r.i8()?,
            service: r.u16()?,
            latitude: r.f64()?,
            longitude: r.f64()?,
            altitude: r.f64()?,
            position_covariance: r.f64_array()?,
            position_covariance_type: r.u8()?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CdrWriter::new();
        self.header.write(&mut w);
        w.i8(self.status);
        w.u16(self.service);
        w.f64(self.latitude);
        w.f64(self.longitude);
        w.f64(self.altitude);
        w.f64_slice(&self.position_covariance);
        w.u8(self.position_covariance_type);
        w.finish()
    }
}

/// `geometry_msgs/msg/PoseWithCovarianceStamped` (or `PoseStamped` with an
/// all-zero covariance). The pose is the camera's pose in the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseMsg {
    pub header: Header,
    pub position: Vector3<f64>,
    /// `(x, y, z, w)` as on the wire.
    pub orientation_xyzw: [f64; 4],
    pub covariance: [f64; 36],
}

impl PoseMsg {
    pub fn decode(payload: &[u8], with_covariance: bool) -> Result<Self, CdrError> {
        let mut r = CdrReader::new(payload)?;
        let header = Header::read(&mut r)?;
        let position = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
        let orientation_xyzw = r.f64_array()?;
        let covariance = if with_covariance { r.f64_array()? } else { [0.0; 36] };
        Ok(Self { header, position, orientation_xyzw, covariance })
    }

    pub fn encode(&self, with_covariance: bool) -> Vec<u8> {
        let mut w = CdrWriter::new();
        self.header.write(&mut w);
        w.f64_slice(self.position.as_slice());
        w.f64_slice(&self.orientation_xyzw);
        if with_covariance {
            w.f64_slice(&self.covariance);
        }
        w.finish()
    }

    /// Prior with world-to-camera orientation (the inverse of the message pose).
    pub fn to_prior(&self, default_sigma: f64) -> PosePrior {
        let [x, y, z, w] = self.orientation_xyzw;
        let q = Quaternion::new(w, x, y, z);
        let orientation = (q.norm() > 0.0).then(|| UnitQuaternion::new_normalize(q).inverse());
        let sigma = Vector3::from_fn(|i, _| {
            let v = self.covariance[i * 6 + i];
            if v > 0.0 {
                v.sqrt()
            } else {
                default_sigma
            }
        });
        PosePrior {
            timestamp_ns: self.header.stamp_ns(),
            position_m: self.position,
            orientation,
            position_sigma_m: sigma,
        }
    }
}
