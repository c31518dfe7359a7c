//! Pipeline configuration: defaults, a flat `key = value` file, then flag overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regolith_core::ingest::Backend;
use regolith_core::metrics::EvalMode;
use regolith_core::radiance::TrainConfig;
use regolith_core::sfm::{MapperConfig, PairStrategy, DEFAULT_LOOP_RADIUS_M, DEFAULT_MATCH_RATIO};

use crate::PipelineError;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_WINDOW: usize = 5;
/// Every n-th registered frame is held out when evaluating on held-out views.
pub const DEFAULT_HOLDOUT_EVERY: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    Exhaustive,
    Sequential,
    Prior,
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exhaustive" => Ok(StrategyKind::Exhaustive),
            "sequential" => Ok(StrategyKind::Sequential),
            "prior" => Ok(StrategyKind::Prior),
            other => Err(format!("unknown strategy {other:?} (expected exhaustive, sequential or prior)")),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Exhaustive => "exhaustive",
            StrategyKind::Sequential => "sequential",
            StrategyKind::Prior => "prior",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub backend: Backend,
    pub strategy: StrategyKind,
    pub window: usize,
    pub radius: f64,
    pub match_ratio: f64,
    pub max_features: usize,
    pub mapper: MapperConfig,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub seed: u64,
    /// `None` leaves the thread count to the runtime.
    pub threads: Option<usize>,
    pub eval: EvalMode,
    pub holdout_every: usize,
    /// Label used in reports; defaults to the input's file name.
    pub trajectory: Option<String>,
    /// Optional `view,lpips` scores from an external tool.
    pub lpips: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = Self {
            input: PathBuf::new(),
            backend: Backend::Manifest,
            strategy: StrategyKind::Sequential,
            window: DEFAULT_WINDOW,
            radius: DEFAULT_LOOP_RADIUS_M,
            match_ratio: DEFAULT_MATCH_RATIO,
            max_features: 2000,
            mapper: MapperConfig::default(),
            train: TrainConfig::default(),
            out: PathBuf::from("regolith-out"),
            seed: DEFAULT_SEED,
            threads: None,
            eval: EvalMode::HeldOut,
            holdout_every: DEFAULT_HOLDOUT_EVERY,
            trajectory: None,
            lpips: None,
        };
        cfg.apply_seed();
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value.parse().map_err(|_| PipelineError::config(format!("{key} = {value:?}: cannot parse value")))
}

impl PipelineConfig {
    /// Sets one option by key. Training options take a `train.` prefix and
    /// mapper options a `sfm.` prefix.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let value = value.trim();
        match key {
            "input" => self.input = PathBuf::from(value),
            "backend" => self.backend = value.parse().map_err(PipelineError::config)?,
            "strategy" => self.strategy = value.parse().map_err(PipelineError::config)?,
            "window" => self.window = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "match_ratio" => self.match_ratio = parse(key, value)?,
            "max_features" => self.max_features = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "seed" => {
                self.seed = parse(key, value)?;
                self.apply_seed();
            }
            "threads" => self.threads = Some(parse(key, value)?),
            "eval" => self.eval = value.parse().map_err(PipelineError::config)?,
            "holdout_every" => self.holdout_every = parse(key, value)?,
            "trajectory" => self.trajectory = Some(value.to_string()),
            "lpips" => self.lpips = Some(PathBuf::from(value)),
            "sfm.min_pair_inliers" => self.mapper.min_pair_inliers = parse(key, value)?,
            "sfm.init_min_parallax_deg" => self.mapper.init_min_parallax_deg = parse(key, value)?,
            "sfm.max_reprojection_px" => self.mapper.max_reprojection_px = parse(key, value)?,
            "sfm.threshold_px" => self.mapper.two_view.threshold_px = parse(key, value)?,
            "sfm.bundle_iterations" => self.mapper.bundle.max_iters = parse(key, value)?,
            _ => match key.strip_prefix("train.") {
                Some("seed") => return Err(PipelineError::config("train.seed: use the global seed")),
                Some(k) => self.train.set(k, value).map_err(|e| PipelineError::config(e.to_string()))?,
                None => return Err(PipelineError::config(format!("unknown option {key:?}"))),
            },
        }
        Ok(())
    }

    fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        self.mapper.two_view.seed = self.seed;
        self.mapper.pnp.seed = self.seed;
    }

    /// Applies a flat `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::config(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            let key = key.trim();
            self.set(key, value)
                .map_err(|e| PipelineError::config(format!("{}:{}: {}", path.display(), n + 1, e.source)))?;
            // paths in a config file are relative to the file
            match key {
                "input" => self.input = base.join(&self.input),
                "out" => self.out = base.join(&self.out),
                "lpips" => self.lpips = self.lpips.take().map(|p| base.join(p)),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn pair_strategy(&self) -> PairStrategy {
        match self.strategy {
            StrategyKind::Exhaustive => PairStrategy::Exhaustive,
            StrategyKind::Sequential => PairStrategy::Sequential { window: self.window },
            StrategyKind::Prior => PairStrategy::Prior { window: self.window, radius: self.radius },
        }
    }

    pub fn trajectory_name(&self) -> String {
        self.trajectory.clone().unwrap_or_else(|| {
            self.input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "trajectory".into())
        })
    }

    /// Checks everything that can be checked before a stage runs.
    pub fn validate(&self, needs_input: bool) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::config(m));
        if needs_input {
            if self.input.as_os_str().is_empty() {
                return fail("no input given".into());
            }
            if !self.input.exists() {
                return fail(format!("input {} does not exist", self.input.display()));
            }
        }
        if self.out.is_file() {
            return fail(format!("output {} is a file", self.out.display()));
        }
        if let Some(p) = &self.lpips {
            if !p.is_file() {
                return fail(format!("lpips scores {} do not exist", p.display()));
            }
        }
        if self.window == 0 {
            return fail("window must be at least 1".into());
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return fail(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.match_ratio > 0.0 && self.match_ratio <= 1.0) {
            return fail(format!("match_ratio must lie in (0, 1], got {}", self.match_ratio));
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        if self.holdout_every < 2 {
            return fail("holdout_every must be at least 2".into());
        }
        if self.max_features == 0 {
            return fail("max_features must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# comment\ninput = data\nstrategy = prior\nwindow = 3\n\ntrain.steps = 50  # short\nseed = 7\n",
        )
        .unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.input, dir.path().join("data"));
        assert_eq!(cfg.strategy, StrategyKind::Prior);
        assert_eq!(cfg.train.steps, 50);
        assert_eq!(cfg.train.seed, 7);
        cfg.set("window", "9").unwrap();
        assert_eq!(cfg.pair_strategy(), PairStrategy::Prior { window: 9, radius: DEFAULT_LOOP_RADIUS_M });
    }

    #[test]
    fn defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.mapper.two_view.seed, 42);
        assert_eq!(cfg.eval, EvalMode::HeldOut);
    }

    #[test]
    fn bad_entries_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "window = 2\nwhatever\n").unwrap();
        let err = PipelineConfig::default().apply_file(&path).unwrap_err();
        assert!(err.to_string().contains("bad.conf:2"), "{err}");
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("strategy", "random").is_err());
        assert!(cfg.set("train.steps", "-1").is_err());
        assert!(cfg.set("colour", "red").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = PipelineConfig { input: PathBuf::from("/no/such/input"), ..Default::default() };
        assert!(cfg.validate(true).unwrap_err().to_string().contains("does not exist"));
        cfg.validate(false).unwrap();
        cfg.window = 0;
        assert!(cfg.validate(false).is_err());
    }
}
