//! Offline reconstruction pipeline for rover image sequences.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`ingest`]: recordings (manifest directories or rosbag2 containers) into a
//!   synchronized [`ingest::Dataset`].
//! * [`sfm`]: features, pair proposal, matching, incremental mapping and bundle
//!   adjustment into a [`sfm::SparseModel`].
//! * [`radiance`]: Gaussian-splat scenes, projection, compositing, a
//!   differentiable rasterizer and the training loop.
//! * [`metrics`]: PSNR/SSIM, grading bands and aggregate quality reports.
//! * [`formats`]: sparse-model text files, dataset descriptors and PLY.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod camera;
pub mod formats;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod par;
pub mod radiance;
pub mod raster;
pub mod sfm;
pub mod synthetic;

pub use camera::{CameraIntrinsics, CameraPose};
pub use raster::Image;
