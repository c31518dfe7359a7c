//! Incremental mapping: verified matches, tracks, initialization,
//! registration, triangulation and periodic bundle adjustment.
//!
//! With priors enabled the first segment is seeded from prior poses, and
//! when registration stalls a new segment is seeded the same way; all
//! segments then share the prior frame. Without priors the mapper stops at
//! the first stall.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Rotation3, UnitQuaternion, Vector2};

use super::bundle::{bundle_adjust, BundleConfig, BundleReport};
use super::matching::PairMatches;
use super::pnp::{register_next_image, PnpConfig};
use super::triangulate::{triangulate_track, TriangulationConfig};
use super::twoview::{estimate_two_view, verify_pair, RobustConfig};
use super::{Keypoint, ModelImage, Observation, Point3D, SfmError, SparseModel};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::geometry::umeyama;
use crate::ingest::PosePrior;
use crate::par;

#[derive(Clone, Debug, PartialEq)]
pub struct MapperConfig {
    /// Seed segments from priors and add prior residuals to bundle adjustment.
    pub use_priors: bool,
    /// Geometrically verified matches a pair needs to contribute tracks.
    pub min_pair_inliers: usize,
    /// Initial pairs with at least this median parallax are preferred.
    pub init_min_parallax_deg: f64,
    /// Candidate initial pairs tried before giving up.
    pub init_max_tries: usize,
    pub min_init_points: usize,
    /// Observations reprojecting worse than this are dropped after each adjustment.
    pub max_reprojection_px: f64,
    pub intermediate_ba_iters: usize,
    pub two_view: RobustConfig,
    pub pnp: PnpConfig,
    pub triangulation: TriangulationConfig,
    pub bundle: BundleConfig,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            use_priors: false,
            min_pair_inliers: 15,
            init_min_parallax_deg: 2.0,
            init_max_tries: 40,
            min_init_points: 10,
            max_reprojection_px: 4.0,
            intermediate_ba_iters: 10,
            two_view: RobustConfig::default(),
            pnp: PnpConfig::default(),
            triangulation: TriangulationConfig::default(),
            bundle: BundleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapperOutput {
    pub model: SparseModel,
    /// Independently seeded segments merged into the model.
    pub segments: usize,
    pub verified_pairs: usize,
    pub final_bundle: Option<BundleReport>,
}

struct Verified {
    a: usize,
    b: usize,
    matches: Vec<(usize, usize)>,
}

struct Mapper<'a> {
    cfg: &'a MapperConfig,
    names: &'a [String],
    priors: &'a [Option<PosePrior>],
    kps: Vec<Vec<Vector2<f64>>>,
    colors: Vec<Vec<[f64; 3]>>,
    tracks: Vec<Vec<Observation>>,
    node_track: Vec<Vec<Option<usize>>>,
    track_point: Vec<Option<u64>>,
    /// Registered observers at the last failed triangulation.
    track_attempt: Vec<usize>,
    verified: Vec<Verified>,
    model: SparseModel,
    in_prior_frame: bool,
    segments: usize,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn build_tracks(sizes: &[usize], verified: &[Verified]) -> (Vec<Vec<Observation>>, Vec<Vec<Option<usize>>>) {
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let total: usize = sizes.iter().sum();
    let mut parent: Vec<usize> = (0..total).collect();
    for v in verified {
        for &(i, j) in &v.matches {
            let (x, y) = (find(&mut parent, offsets[v.a] + i), find(&mut parent, offsets[v.b] + j));
            if x != y {
                parent[x.max(y)] = x.min(y);
            }
        }
    }
    let mut groups: HashMap<usize, Vec<Observation>> = HashMap::new();
    let mut order = Vec::new();
    for (img, &n) in sizes.iter().enumerate() {
        for k in 0..n {
            let root = find(&mut parent, offsets[img] + k);
            let g = groups.entry(root).or_insert_with(|| {
                order.push(root);
                Vec::new()
            });
            g.push(Observation { image_id: img as u32, keypoint: k as u32 });
        }
    }
    let mut tracks = Vec::new();
    let mut node_track: Vec<Vec<Option<usize>>> = sizes.iter().map(|&n| vec![None; n]).collect();
    for root in order {
        let obs = &groups[&root];
        if obs.len() < 2 {
            continue;
        }
        // a component that hits one image twice is ambiguous; drop it
        if obs.windows(2).any(|w| w[0].image_id == w[1].image_id) {
            continue;
        }
        for o in obs {
            node_track[o.image_id as usize][o.keypoint as usize] = Some(tracks.len());
        }
        tracks.push(obs.clone());
    }
    (tracks, node_track)
}

impl<'a> Mapper<'a> {
    fn is_registered(&self, img: usize) -> bool {
        self.model.images.contains_key(&(img as u32))
    }

    fn bundle_priors(&self) -> &'a [Option<PosePrior>] {
        if self.cfg.use_priors && self.in_prior_frame {
            self.priors
        } else {
            &[]
        }
    }

    fn prior_pose(&self, img: usize) -> Option<CameraPose> {
        self.priors.get(img)?.as_ref()?.pose()
    }

    fn add_image(&mut self, img: usize, pose: CameraPose) {
        self.model
            .images
            .insert(img as u32, ModelImage { name: self.names[img].clone(), pose, keypoints: self.kps[img].clone() });
    }

    fn try_triangulate(&mut self, t: usize) -> bool {
        if self.track_point[t].is_some() {
            return false;
        }
        let obs: Vec<Observation> =
            self.tracks[t].iter().copied().filter(|o| self.is_registered(o.image_id as usize)).collect();
        if obs.len() < 2 || obs.len() <= self.track_attempt[t] {
            return false;
        }
        let views: Vec<(CameraPose, Vector2<f64>)> = obs
            .iter()
            .map(|o| (self.model.images[&o.image_id].pose, self.kps[o.image_id as usize][o.keypoint as usize]))
            .collect();
        match triangulate_track(&views, &self.model.intrinsics, &self.cfg.triangulation) {
            Ok(p) => {
                let mut color = [0.0; 3];
                for o in &obs {
                    let c = self.colors[o.image_id as usize][o.keypoint as usize];
                    for k in 0..3 {
                        color[k] += c[k] / obs.len() as f64;
                    }
                }
                let id = t as u64;
                self.model
                    .points
                    .insert(id, Point3D { position: p.position, color, reprojection_error_px: p.error_px, track: obs });
                self.track_point[t] = Some(id);
                true
            }
            Err(_) => {
                self.track_attempt[t] = obs.len();
                false
            }
        }
    }

    fn triangulate_image(&mut self, img: usize) -> usize {
        let ts: Vec<usize> = self.node_track[img].iter().flatten().copied().collect();
        ts.into_iter().filter(|&t| self.try_triangulate(t)).count()
    }

    /// Drops badly reprojecting observations and points left with fewer than two.
    fn filter(&mut self) {
        let max = self.cfg.max_reprojection_px;
        let mut dead = Vec::new();
        let ids: Vec<u64> = self.model.points.keys().copied().collect();
        for id in ids {
            let keep: Vec<Observation> = {
                let p = &self.model.points[&id];
                p.track.iter().copied().filter(|o| self.model.residual(p, o).is_some_and(|r| r.norm() <= max)).collect()
            };
            if keep.len() < 2 {
                dead.push(id);
            } else {
                self.model.points.get_mut(&id).expect("listed").track = keep;
            }
        }
        for id in dead {
            self.model.points.remove(&id);
            let t = id as usize;
            self.track_point[t] = None;
            self.track_attempt[t] = self.tracks[t].iter().filter(|o| self.is_registered(o.image_id as usize)).count();
        }
        self.model.update_point_errors();
    }

    fn adjust(&mut self, iters: usize) -> Option<BundleReport> {
        let cfg = BundleConfig { max_iters: iters, ..self.cfg.bundle.clone() };
        let priors = self.bundle_priors();
        let report = match bundle_adjust(&mut self.model, priors, &cfg) {
            Ok(r) => Some(r),
            Err(e) => {
                log::debug!("bundle adjustment skipped: {e}");
                None
            }
        };
        self.filter();
        report
    }

    /// Moves the model into the prior frame once three registered images carry priors.
    fn align_to_priors(&mut self) {
        if !self.cfg.use_priors || self.in_prior_frame {
            return;
        }
        let (src, dst): (Vec<_>, Vec<_>) = self
            .model
            .images
            .iter()
            .filter_map(|(&id, im)| {
                let p = self.priors.get(id as usize)?.as_ref()?;
                Some((im.pose.center(), p.position_m))
            })
            .unzip();
        if src.len() < 3 {
            return;
        }
        let Some(sim) = umeyama(&src, &dst) else {
            return;
        };
        if !(sim.scale > 0.0) || !sim.scale.is_finite() {
            return;
        }
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(sim.rotation));
        for im in self.model.images.values_mut() {
            let c = sim.apply(&im.pose.center());
            im.pose = CameraPose::from_center(im.pose.rotation * rot.inverse(), c);
        }
        for p in self.model.points.values_mut() {
            p.position = sim.apply(&p.position);
        }
        self.in_prior_frame = true;
        log::debug!("model aligned to priors (scale {:.4})", sim.scale);
    }

    fn undo_seed(&mut self, a: usize, b: usize, before: &BTreeSet<u64>) {
        self.model.images.remove(&(a as u32));
        self.model.images.remove(&(b as u32));
        let new: Vec<u64> = self.model.points.keys().filter(|k| !before.contains(k)).copied().collect();
        for id in new {
            self.model.points.remove(&id);
            self.track_point[id as usize] = None;
        }
        for t in 0..self.tracks.len() {
            self.track_attempt[t] = 0;
        }
    }

    /// Seeds a segment from two prior poses; works for the first and later segments.
    fn seed_from_priors(&mut self) -> bool {
        let mut cands: Vec<(usize, usize, usize)> = self
            .verified
            .iter()
            .filter(|v| !self.is_registered(v.a) && !self.is_registered(v.b))
            .filter(|v| self.prior_pose(v.a).is_some() && self.prior_pose(v.b).is_some())
            .map(|v| (v.matches.len(), v.a, v.b))
            .collect();
        cands.sort_by(|x, y| y.0.cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        for (_, a, b) in cands.into_iter().take(self.cfg.init_max_tries) {
            let before: BTreeSet<u64> = self.model.points.keys().copied().collect();
            let (pa, pb) = (self.prior_pose(a).expect("filtered"), self.prior_pose(b).expect("filtered"));
            self.add_image(a, pa);
            self.add_image(b, pb);
            let made = self.triangulate_image(a) + self.triangulate_image(b);
            if made >= self.cfg.min_init_points {
                self.in_prior_frame = true;
                self.segments += 1;
                log::debug!("segment {} seeded from priors of images {a} and {b} ({made} points)", self.segments);
                return true;
            }
            self.undo_seed(a, b, &before);
        }
        false
    }

    fn seed_two_view(&mut self) -> bool {
        let mut cands: Vec<usize> = (0..self.verified.len()).collect();
        cands.sort_by(|&x, &y| {
            let (vx, vy) = (&self.verified[x], &self.verified[y]);
            vy.matches.len().cmp(&vx.matches.len()).then((vx.a, vx.b).cmp(&(vy.a, vy.b)))
        });
        let mut fallback = None;
        let mut chosen = None;
        for &ci in cands.iter().take(self.cfg.init_max_tries) {
            let v = &self.verified[ci];
            let pa: Vec<_> = v.matches.iter().map(|&(i, _)| self.kps[v.a][i]).collect();
            let pb: Vec<_> = v.matches.iter().map(|&(_, j)| self.kps[v.b][j]).collect();
            let Ok(tv) = estimate_two_view(&pa, &pb, &self.model.intrinsics, &self.cfg.two_view) else {
                continue;
            };
            if tv.median_parallax_deg >= self.cfg.init_min_parallax_deg {
                chosen = Some((v.a, v.b, tv.pose));
                break;
            }
            if fallback.is_none() {
                fallback = Some((v.a, v.b, tv.pose));
            }
        }
        let Some((a, b, rel)) = chosen.or(fallback) else {
            return false;
        };
        let before: BTreeSet<u64> = self.model.points.keys().copied().collect();
        self.add_image(a, CameraPose::identity());
        self.add_image(b, rel);
        let made = self.triangulate_image(a);
        if made < self.cfg.min_init_points {
            self.undo_seed(a, b, &before);
            return false;
        }
        self.segments += 1;
        log::debug!("initialized from images {a} and {b} ({made} points)");
        true
    }

    fn correspondences(&self, img: usize) -> Vec<(usize, u64)> {
        self.node_track[img].iter().enumerate().filter_map(|(k, t)| Some((k, self.track_point[(*t)?]?))).collect()
    }

    fn run(&mut self) -> Option<BundleReport> {
        let n = self.names.len();
        let seeded = if self.cfg.use_priors && self.seed_from_priors() { true } else { self.seed_two_view() };
        if !seeded {
            return None;
        }
        self.adjust(self.cfg.bundle.max_iters);
        let mut failed: BTreeSet<usize> = BTreeSet::new();
        loop {
            let mut cands: Vec<(usize, usize)> = (0..n)
                .filter(|&i| !self.is_registered(i) && !failed.contains(&i))
                .map(|i| (self.correspondences(i).len(), i))
                .filter(|&(c, _)| c >= self.cfg.pnp.min_inliers)
                .collect();
            cands.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
            let mut progressed = false;
            for (_, img) in cands {
                let corrs = self.correspondences(img);
                let prior = if self.cfg.use_priors && self.in_prior_frame {
                    self.priors.get(img).and_then(Option::as_ref)
                } else {
                    None
                };
                let kps = self.kps[img].clone();
                let pnp = PnpConfig { seed: self.cfg.pnp.seed.wrapping_add(img as u64), ..self.cfg.pnp.clone() };
                match register_next_image(&mut self.model, img as u32, &self.names[img], kps, &corrs, prior, &pnp) {
                    Ok(_) => {
                        self.triangulate_image(img);
                        self.adjust(self.cfg.intermediate_ba_iters);
                        self.align_to_priors();
                        failed.clear();
                        progressed = true;
                        break;
                    }
                    Err(e) => {
                        log::debug!("{e}");
                        failed.insert(img);
                    }
                }
            }
            if progressed {
                continue;
            }
            if self.cfg.use_priors && self.in_prior_frame && self.seed_from_priors() {
                self.adjust(self.cfg.intermediate_ba_iters);
                failed.clear();
                continue;
            }
            break;
        }
        let report = self.adjust(self.cfg.bundle.max_iters);
        // observations removed by the last filter leave a slightly stale optimum
        self.adjust(self.cfg.bundle.max_iters).or(report)
    }
}

/// Builds a sparse model from per-image keypoints and pairwise matches.
///
/// Keypoints are undistorted up front; the returned model uses the pinhole
/// part of `intrinsics`. An empty model means no initial pair was found.
pub fn incremental_map(
    intrinsics: &CameraIntrinsics,
    names: &[String],
    features: &[Vec<Keypoint>],
    matches: &[PairMatches],
    priors: &[Option<PosePrior>],
    cfg: &MapperConfig,
) -> Result<MapperOutput, SfmError> {
    let n = features.len();
    if names.len() != n || (!priors.is_empty() && priors.len() != n) {
        return Err(SfmError::InvalidModel(format!(
            "{n} feature sets, {} names, {} priors",
            names.len(),
            priors.len()
        )));
    }
    if cfg.use_priors && priors.iter().all(Option::is_none) {
        return Err(SfmError::MissingPriors);
    }
    let mut pinhole = *intrinsics;
    pinhole.distortion = [0.0; 4];
    let kps: Vec<Vec<Vector2<f64>>> =
        features.iter().map(|f| f.iter().map(|k| intrinsics.undistort_pixel(&k.position)).collect()).collect();
    let colors: Vec<Vec<[f64; 3]>> = features.iter().map(|f| f.iter().map(|k| k.color).collect()).collect();

    let candidates: Vec<&PairMatches> =
        matches.iter().filter(|m| m.matches.len() >= cfg.min_pair_inliers.max(8)).collect();
    let verified: Vec<Verified> = par::map(&candidates, |m| {
        let pa: Vec<_> = m.matches.iter().map(|&(i, _)| kps[m.a][i]).collect();
        let pb: Vec<_> = m.matches.iter().map(|&(_, j)| kps[m.b][j]).collect();
        let robust =
            RobustConfig { seed: cfg.two_view.seed.wrapping_add((m.a * n + m.b) as u64), ..cfg.two_view.clone() };
        let (_, mask) = verify_pair(&pa, &pb, &pinhole, &robust).ok()?;
        let inl: Vec<(usize, usize)> = m.matches.iter().zip(&mask).filter(|(_, &b)| b).map(|(p, _)| *p).collect();
        (inl.len() >= cfg.min_pair_inliers).then_some(Verified { a: m.a, b: m.b, matches: inl })
    })
    .into_iter()
    .flatten()
    .collect();
    let sizes: Vec<usize> = kps.iter().map(Vec::len).collect();
    let (tracks, node_track) = build_tracks(&sizes, &verified);
    log::debug!("{} verified pairs, {} tracks", verified.len(), tracks.len());

    let verified_pairs = verified.len();
    let mut m = Mapper {
        cfg,
        names,
        priors,
        kps,
        colors,
        track_point: vec![None; tracks.len()],
        track_attempt: vec![0; tracks.len()],
        tracks,
        node_track,
        verified,
        model: SparseModel::new(pinhole),
        in_prior_frame: false,
        segments: 0,
    };
    let final_bundle = m.run();
    Ok(MapperOutput { model: m.model, segments: m.segments, verified_pairs, final_bundle })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conflicting_components_are_dropped() {
        // image 0 kp 0 matches image 1 kp 0 and kp 1 through image 2
        let verified = vec![
            Verified { a: 0, b: 1, matches: vec![(0, 0)] },
            Verified { a: 0, b: 2, matches: vec![(0, 0), (1, 1)] },
            Verified { a: 1, b: 2, matches: vec![(1, 0), (2, 1)] },
        ];
        let (tracks, node_track) = build_tracks(&[2, 3, 2], &verified);
        // {0:0, 1:0, 2:0, 1:1} hits image 1 twice; {0:1, 2:1, 1:2} is clean
        assert_eq!(tracks.len(), 1);
        assert_eq!(
            tracks[0],
            vec![
                Observation { image_id: 0, keypoint: 1 },
                Observation { image_id: 1, keypoint: 2 },
                Observation { image_id: 2, keypoint: 1 }
            ]
        );
        assert_eq!(node_track[0][0], None);
        assert_eq!(node_track[1][2], Some(0));
    }
}
