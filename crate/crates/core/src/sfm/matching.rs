//! Image-pair proposal and mutual nearest-neighbour descriptor matching.

use std::collections::BTreeSet;

use super::{Keypoint, SfmError};
use crate::ingest::PosePrior;
use crate::par;

pub const DEFAULT_LOOP_RADIUS_M: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairStrategy {
    Exhaustive,
    Sequential {
        window: usize,
    },
    /// Sequential pairs plus every pair whose prior positions are within `radius` metres.
    Prior {
        window: usize,
        radius: f64,
    },
}

impl PairStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PairStrategy::Exhaustive => "exhaustive",
            PairStrategy::Sequential { .. } => "sequential",
            PairStrategy::Prior { .. } => "prior",
        }
    }

    pub fn uses_priors(&self) -> bool {
        matches!(self, PairStrategy::Prior { .. })
    }
}

/// `n w - w (w + 1) / 2` for `n > w`.
pub fn sequential_pair_count(n: usize, window: usize) -> usize {
    let w = window.min(n.saturating_sub(1));
    n * w - w * (w + 1) / 2
}

/// Unordered pairs `(i, j)` with `i < j`, sorted.
pub fn propose_pairs(
    n_images: usize,
    strategy: &PairStrategy,
    priors: Option<&[Option<PosePrior>]>,
) -> Result<Vec<(usize, usize)>, SfmError> {
    if n_images < 2 {
        return Err(SfmError::InvalidStrategy(format!("need at least 2 images, got {n_images}")));
    }
    let sequential = |w: usize| -> Vec<(usize, usize)> {
        (0..n_images).flat_map(|i| (i + 1..=(i + w).min(n_images - 1)).map(move |j| (i, j))).collect()
    };
    match *strategy {
        PairStrategy::Exhaustive => Ok((0..n_images).flat_map(|i| (i + 1..n_images).map(move |j| (i, j))).collect()),
        PairStrategy::Sequential { window } => {
            if window == 0 {
                return Err(SfmError::InvalidStrategy("window must be at least 1".into()));
            }
            Ok(sequential(window))
        }
        PairStrategy::Prior { window, radius } => {
            if window == 0 || !(radius > 0.0) {
                return Err(SfmError::InvalidStrategy(format!("window {window}, radius {radius}")));
            }
            let priors = priors.ok_or(SfmError::MissingPriors)?;
            if priors.len() != n_images || priors.iter().all(Option::is_none) {
                return Err(SfmError::MissingPriors);
            }
            let mut set: BTreeSet<(usize, usize)> = sequential(window).into_iter().collect();
            for i in 0..n_images {
                let Some(pi) = &priors[i] else { continue };
                for j in i + 1..n_images {
                    if let Some(pj) = &priors[j] {
                        if (pi.position_m - pj.position_m).norm() <= radius {
                            set.insert((i, j));
                        }
                    }
                }
            }
            Ok(set.into_iter().collect())
        }
    }
}

#[inline]
fn dist2(a: &[f32], b: &[f32]) -> f32 {
    // eight independent lanes so the loop vectorizes
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Running nearest and second-nearest; ties keep the first index seen.
#[derive(Clone, Copy)]
struct TwoNearest {
    best: usize,
    d1: f32,
    d2: f32,
}

impl TwoNearest {
    const EMPTY: Self = TwoNearest { best: usize::MAX, d1: f32::INFINITY, d2: f32::INFINITY };

    #[inline]
    fn push(&mut self, j: usize, d: f32) {
        if d < self.d1 {
            self.d2 = self.d1;
            self.d1 = d;
            self.best = j;
        } else if d < self.d2 {
            self.d2 = d;
        }
    }
}

fn passes_ratio(d1: f32, d2: f32, ratio: f64) -> bool {
    // a lone candidate has no competitor and always passes
    d2.is_infinite() || (d1 as f64).sqrt() < ratio * (d2 as f64).sqrt()
}

/// Mutual nearest neighbours passing the ratio test in both directions.
///
/// The result is one-to-one, sorted by the index into `a`, and symmetric:
/// `match_pair(b, a)` is the transpose of `match_pair(a, b)`.
pub fn match_pair(a: &[Vec<f32>], b: &[Vec<f32>], ratio: f64) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut rows = vec![TwoNearest::EMPTY; a.len()];
    let mut cols = vec![TwoNearest::EMPTY; b.len()];
    for (i, da) in a.iter().enumerate() {
        for (j, db) in b.iter().enumerate() {
            let d = dist2(da, db);
            rows[i].push(j, d);
            cols[j].push(i, d);
        }
    }
    rows.iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let c = cols[r.best];
            (c.best == i && passes_ratio(r.d1, r.d2, ratio) && passes_ratio(c.d1, c.d2, ratio)).then_some((i, r.best))
        })
        .collect()
}

/// Exhaustive reference matcher: full distance matrix, then the same rule.
pub fn match_pair_brute_force(a: &[Vec<f32>], b: &[Vec<f32>], ratio: f64) -> Vec<(usize, usize)> {
    let d: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| (dist2(x, y) as f64).sqrt()).collect()).collect();
    let mut out = Vec::new();
    for i in 0..a.len() {
        for j in 0..b.len() {
            let row_ok = (0..b.len()).all(|k| k == j || d[i][k] > d[i][j] || (d[i][k] == d[i][j] && k > j));
            let col_ok = (0..a.len()).all(|k| k == i || d[k][j] > d[i][j] || (d[k][j] == d[i][j] && k > i));
            let row_second = (0..b.len()).filter(|&k| k != j).map(|k| d[i][k]).fold(f64::INFINITY, f64::min);
            let col_second = (0..a.len()).filter(|&k| k != i).map(|k| d[k][j]).fold(f64::INFINITY, f64::min);
            let ratio_ok = |second: f64| second.is_infinite() || d[i][j] < ratio * second;
            if row_ok && col_ok && ratio_ok(row_second) && ratio_ok(col_second) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Keypoint correspondences between two images.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMatches {
    pub a: usize,
    pub b: usize,
    pub matches: Vec<(usize, usize)>,
}

/// Matches every proposed pair; output order follows `pairs`.
pub fn match_all(features: &[Vec<Keypoint>], pairs: &[(usize, usize)], ratio: f64) -> Vec<PairMatches> {
    let descriptors: Vec<Vec<Vec<f32>>> =
        features.iter().map(|kps| kps.iter().map(|k| k.descriptor.clone()).collect()).collect();
    par::map(pairs, |&(a, b)| PairMatches { a, b, matches: match_pair(&descriptors[a], &descriptors[b], ratio) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect()
    }

    #[test]
    fn pair_counts() {
        assert_eq!(propose_pairs(100, &PairStrategy::Exhaustive, None).unwrap().len(), 4950);
        let seq = propose_pairs(5, &PairStrategy::Sequential { window: 2 }, None).unwrap();
        assert_eq!(seq, vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (3, 4)]);
        assert_eq!(sequential_pair_count(5, 2), 7);
        assert_eq!(sequential_pair_count(200, 5), 985);
    }

    #[test]
    fn prior_strategy_adds_loop_closure() {
        let priors: Vec<Option<PosePrior>> = (0..6)
            .map(|i| {
                let a = i as f64 / 5.0 * std::f64::consts::TAU;
                Some(PosePrior::new(i, Vector3::new(3.0 * a.cos(), 3.0 * a.sin(), 0.0), 0.05))
            })
            .collect();
        let strategy = PairStrategy::Prior { window: 1, radius: 0.5 };
        let pairs = propose_pairs(6, &strategy, Some(&priors)).unwrap();
        // brute-force: every pair within the radius or the window
        let mut want = Vec::new();
        for i in 0..6 {
            for j in i + 1..6 {
                let close = (priors[i].unwrap().position_m - priors[j].unwrap().position_m).norm() <= 0.5;
                if j - i <= 1 || close {
                    want.push((i, j));
                }
            }
        }
        assert_eq!(pairs, want);
        assert_eq!(pairs.len(), 6);
        assert!(pairs.contains(&(0, 5)));
        assert_eq!(propose_pairs(6, &strategy, None), Err(SfmError::MissingPriors));
    }

    #[test]
    fn identical_lists_match_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_unit(&mut rng, 30, 128);
        let m = match_pair(&d, &d, 0.8);
        assert_eq!(m, (0..30).map(|i| (i, i)).collect::<Vec<_>>());
        assert!(match_pair(&d, &[], 0.8).is_empty());
        assert!(match_pair(&[], &d, 0.8).is_empty());
    }

    #[test]
    fn random_disjoint_descriptors_rarely_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_unit(&mut rng, 50, 128);
        let b = random_unit(&mut rng, 50, 128);
        let m = match_pair(&a, &b, 0.6);
        assert_eq!(m, match_pair_brute_force(&a, &b, 0.6));
        assert!(m.len() <= 5, "{} matches", m.len());
    }

    proptest! {
        #[test]
        fn matching_is_symmetric_and_agrees_with_brute_force(seed in 0u64..500, na in 1usize..25, nb in 1usize..25, ratio in 0.5f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // low dimension makes near neighbours common
            let a = random_unit(&mut rng, na, 4);
            let b = random_unit(&mut rng, nb, 4);
            let ab = match_pair(&a, &b, ratio);
            let mut ba: Vec<_> = match_pair(&b, &a, ratio).into_iter().map(|(j, i)| (i, j)).collect();
            ba.sort();
            prop_assert_eq!(&ab, &ba);
            prop_assert_eq!(&ab, &match_pair_brute_force(&a, &b, ratio));
        }

        #[test]
        fn pair_sets_are_nested(n in 2usize..40, w in 1usize..8, r in 0.01f64..5.0, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let priors: Vec<Option<PosePrior>> = (0..n)
                .map(|i| Some(PosePrior::new(i as i64, Vector3::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), 0.0), 0.1)))
                .collect();
            let seq: BTreeSet<_> = propose_pairs(n, &PairStrategy::Sequential { window: w }, None).unwrap().into_iter().collect();
            let pri: BTreeSet<_> = propose_pairs(n, &PairStrategy::Prior { window: w, radius: r }, Some(&priors)).unwrap().into_iter().collect();
            let exh: BTreeSet<_> = propose_pairs(n, &PairStrategy::Exhaustive, None).unwrap().into_iter().collect();
            prop_assert!(seq.is_subset(&pri) && pri.is_subset(&exh));
            if n > w {
                prop_assert_eq!(seq.len(), n * w - w * (w + 1) / 2);
            }
        }
    }
}
