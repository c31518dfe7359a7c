//! Interchange formats: COLMAP-style sparse text models, the
//! `transforms.json` dataset descriptor, and binary PLY for splats and points.

mod colmap;
mod descriptor;
mod ply;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use colmap::{read_sparse_text, write_sparse_text, CAMERAS_FILE, IMAGES_FILE, POINTS_FILE};
pub use descriptor::{
    read_dataset_descriptor, write_dataset_descriptor, DatasetDescriptor, DescriptorFrame, DescriptorMetadata,
    OPENGL_FLIP,
};
pub use ply::{
    read_point_ply, read_splat_ply, read_splats, write_point_ply, write_splat_ply, write_splats, ColoredPoint,
    SPLAT_PROPERTIES,
};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: dangling reference: {message}")]
    Dangling { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("image file {0} does not exist")]
    MissingImage(PathBuf),
    #[error("nothing to write: {0}")]
    Empty(&'static str),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}
