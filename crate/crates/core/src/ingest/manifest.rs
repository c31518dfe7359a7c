//! Canonical directory layout: `manifest.json`, image files, `intrinsics.json`
//! and an optional `priors.csv`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, read_priors_csv, write_priors_csv, Dataset, IngestConfig, IngestError, PosePrior, RecordingFrame};
use crate::camera::CameraIntrinsics;
use crate::par;
use crate::raster::Image;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INTRINSICS_FILE: &str = "intrinsics.json";
pub const PRIORS_FILE: &str = "priors.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub file: String,
    pub timestamp_ns: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: Vec<ManifestFrame>,
    pub image_topic: String,
}

pub(crate) fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, IngestError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

type Parts = (Vec<RecordingFrame>, CameraIntrinsics, Vec<PosePrior>);

pub(crate) fn read(dir: &Path, config: &IngestConfig) -> Result<Parts, IngestError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(IngestError::NoFrames(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.frames.is_empty() {
        return Err(IngestError::NoFrames(dir.to_path_buf()));
    }
    if let Some(topic) = &config.image_topic {
        if *topic != manifest.image_topic {
            return Err(IngestError::UnknownTopic(topic.clone()));
        }
    }
    let intr_path = dir.join(INTRINSICS_FILE);
    if !intr_path.exists() {
        return Err(IngestError::MissingIntrinsics(intr_path));
    }
    let intrinsics = read_intrinsics(&intr_path)?;

    let decoded = par::map(&manifest.frames, |f| {
        let path = dir.join(&f.file);
        Image::load(&path).map_err(|source| IngestError::Image { path, source })
    });
    let mut frames = Vec::with_capacity(decoded.len());
    for (i, (img, mf)) in decoded.into_iter().zip(&manifest.frames).enumerate() {
        frames.push(RecordingFrame {
            frame_id: i,
            timestamp_ns: mf.timestamp_ns,
            image: img?,
            source_topic: manifest.image_topic.clone(),
        });
    }
    let priors_path = dir.join(PRIORS_FILE);
    let priors = if priors_path.exists() { read_priors_csv(&priors_path)? } else { Vec::new() };
    Ok((frames, intrinsics, priors))
}

/// Writes `dataset` in the canonical directory layout (8-bit PNG frames).
pub fn write_manifest_dataset(dataset: &Dataset, dir: &Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let topic = dataset.frames.first().map(|f| f.source_topic.clone()).unwrap_or_else(|| "/camera/image_raw".into());
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, frame) in dataset.frames.iter().enumerate() {
        let name = dataset.frame_name(i);
        let path = dir.join(&name);
        frame.image.save(&path).map_err(|source| IngestError::Image { path, source })?;
        entries.push(ManifestFrame { file: name, timestamp_ns: frame.timestamp_ns });
    }
    let manifest = Manifest { frames: entries, image_topic: topic };
    let mpath = dir.join(MANIFEST_FILE);
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&mpath))?;
    let ipath = dir.join(INTRINSICS_FILE);
    std::fs::write(&ipath, serde_json::to_string_pretty(&dataset.intrinsics)?).map_err(io_err(&ipath))?;
    let priors: Vec<PosePrior> = dataset.priors.iter().flatten().copied().collect();
    if !priors.is_empty() {
        write_priors_csv(&dir.join(PRIORS_FILE), &priors)?;
    }
    Ok(())
}
