use super::{Dataset, IngestError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SubsamplePolicy {
    /// Keep frames whose id is a multiple of `k` past the first frame's id.
    Stride(usize),
    /// Keep a frame once its prior position is at least this many metres
    /// from the last kept frame.
    MinBaseline(f64),
}

/// Ordered subset of `dataset` that always keeps the first frame.
pub fn subsample_frames(dataset: &Dataset, policy: SubsamplePolicy) -> Result<Dataset, IngestError> {
    let keep: Vec<usize> = match policy {
        SubsamplePolicy::Stride(k) => {
            let k = k.max(1);
            let first = dataset.frames.first().map_or(0, |f| f.frame_id);
            (0..dataset.len()).filter(|&i| (dataset.frames[i].frame_id - first) % k == 0).collect()
        }
        SubsamplePolicy::MinBaseline(d) => {
            if let Some(missing) = dataset.priors.iter().position(Option::is_none) {
                return Err(IngestError::MissingPriors(missing));
            }
            let mut keep = Vec::new();
            let mut last: Option<nalgebra::Vector3<f64>> = None;
            for (i, p) in dataset.priors.iter().enumerate() {
                let pos = p.as_ref().expect("checked above").position_m;
                match last {
                    Some(prev) if (pos - prev).norm() < d => {}
                    _ => {
                        keep.push(i);
                        last = Some(pos);
                    }
                }
            }
            keep
        }
    };
    Ok(Dataset {
        frames: keep.iter().map(|&i| dataset.frames[i].clone()).collect(),
        intrinsics: dataset.intrinsics,
        priors: keep.iter().map(|&i| dataset.priors[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CameraIntrinsics, PosePrior, RecordingFrame};
    use crate::raster::Image;
    use nalgebra::Vector3;

    fn dataset(n: usize, spacing: Option<f64>) -> Dataset {
        let frames = (0..n)
            .map(|i| RecordingFrame {
                frame_id: i,
                timestamp_ns: i as i64 * 1000,
                image: Image::new(16, 16),
                source_topic: "cam".into(),
            })
            .collect();
        let priors = (0..n)
            .map(|i| spacing.map(|s| PosePrior::new(i as i64 * 1000, Vector3::new(i as f64 * s, 0.0, 0.0), 0.1)))
            .collect();
        Dataset { frames, intrinsics: CameraIntrinsics::pinhole(10.0, 10.0, 8.0, 8.0, 16, 16), priors }
    }

    fn ids(d: &Dataset) -> Vec<usize> {
        d.frames.iter().map(|f| f.frame_id).collect()
    }

    #[test]
    fn stride_policy() {
        let d = dataset(10, None);
        assert_eq!(ids(&subsample_frames(&d, SubsamplePolicy::Stride(1)).unwrap()), (0..10).collect::<Vec<_>>());
        let s3 = subsample_frames(&d, SubsamplePolicy::Stride(3)).unwrap();
        assert_eq!(ids(&s3), vec![0, 3, 6, 9]);
        assert_eq!(subsample_frames(&s3, SubsamplePolicy::Stride(3)).unwrap(), s3);
    }

    #[test]
    fn min_baseline_greedy_scan() {
        let d = dataset(12, Some(0.1));
        let out = subsample_frames(&d, SubsamplePolicy::MinBaseline(0.25)).unwrap();
        // simulate the scan independently
        let mut expected = vec![0usize];
        let mut last = 0.0f64;
        for i in 1..12 {
            let x = i as f64 * 0.1;
            if x - last >= 0.25 {
                expected.push(i);
                last = x;
            }
        }
        assert_eq!(ids(&out), expected);
        assert_eq!(expected, vec![0, 3, 6, 9]);
    }

    #[test]
    fn min_baseline_requires_priors() {
        let d = dataset(4, None);
        assert!(matches!(subsample_frames(&d, SubsamplePolicy::MinBaseline(0.1)), Err(IngestError::MissingPriors(0))));
    }
}
