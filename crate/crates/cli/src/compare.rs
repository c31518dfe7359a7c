//! Match and map times per pair-proposal strategy over one recording.

use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use anyhow::anyhow;
use regolith_core::ingest::PosePrior;
use regolith_core::par;
use regolith_core::sfm::{
    detect_features, reconstruct, CameraIntrinsics, DetectorConfig, Keypoint, MapperConfig, PairStrategy, SfmError,
};

use crate::pipeline::{ingest_stage, Layout};
use crate::{PipelineConfig, PipelineError, Stage, StageContext};

pub const COMPARISON_CSV_HEADER: &str =
    "trajectory,variant,pairs,match_s,map_s,converged,registered,total,pair_reduction_pct,match_reduction_pct,map_reduction_pct";

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub strategy: PairStrategy,
}

impl Variant {
    pub fn new(strategy: PairStrategy) -> Self {
        let label = match strategy {
            PairStrategy::Exhaustive => "exhaustive".to_string(),
            PairStrategy::Sequential { window } => format!("sequential(w={window})"),
            PairStrategy::Prior { window, radius } => format!("prior(w={window},r={radius})"),
        };
        Self { label, strategy }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub pairs: usize,
    pub match_seconds: f64,
    pub map_seconds: f64,
    pub converged: bool,
    pub registered: usize,
    pub total: usize,
    /// Percentage reductions relative to the baseline row.
    pub pair_reduction_pct: f64,
    pub match_reduction_pct: f64,
    pub map_reduction_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub trajectory: String,
    /// Label of the row the reductions are relative to: the first exhaustive
    /// variant, or the first variant when none is exhaustive.
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

fn reduction(value: f64, base: f64) -> f64 {
    if base > 0.0 {
        100.0 * (1.0 - value / base)
    } else {
        0.0
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARISON_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},\"{}\",{},{:.3},{:.3},{},{},{},{:.1},{:.1},{:.1}",
                self.trajectory,
                r.label,
                r.pairs,
                r.match_seconds,
                r.map_seconds,
                yes_no(r.converged),
                r.registered,
                r.total,
                r.pair_reduction_pct,
                r.match_reduction_pct,
                r.map_reduction_pct
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "| Variant | Pairs | Match [s] | Map [s] | Conv. | Registered | Pair red. [%] | Match red. [%] | Map red. [%] |\n\
             |---|---|---|---|---|---|---|---|---|\n"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {:.3} | {:.3} | {} | {}/{} | {:.1} | {:.1} | {:.1} |",
                r.label,
                r.pairs,
                r.match_seconds,
                r.map_seconds,
                yes_no(r.converged),
                r.registered,
                r.total,
                r.pair_reduction_pct,
                r.match_reduction_pct,
                r.map_reduction_pct
            );
        }
        let _ = writeln!(out, "\nTrajectory {}; reductions relative to {}.", self.trajectory, self.baseline);
        out
    }
}

/// Reconstructs `features` once per variant. Priors are handed only to
/// strategies that use them.
#[allow(clippy::too_many_arguments)]
pub fn compare_strategies(
    trajectory: &str,
    intrinsics: &CameraIntrinsics,
    names: &[String],
    features: &[Vec<Keypoint>],
    priors: &[Option<PosePrior>],
    variants: &[Variant],
    ratio: f64,
    mapper: &MapperConfig,
) -> Result<Comparison, SfmError> {
    if variants.len() < 2 {
        return Err(SfmError::InvalidStrategy(format!("need at least 2 variants, got {}", variants.len())));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let p = if v.strategy.uses_priors() { priors } else { &[] };
        let rec = reconstruct(intrinsics, names, features, p, &v.strategy, ratio, mapper)?;
        rows.push(ComparisonRow {
            label: v.label.clone(),
            pairs: rec.pairs,
            match_seconds: rec.report.match_seconds,
            map_seconds: rec.report.map_seconds,
            converged: rec.report.converged,
            registered: rec.report.registered_images,
            total: rec.report.total_images,
            pair_reduction_pct: 0.0,
            match_reduction_pct: 0.0,
            map_reduction_pct: 0.0,
        });
    }
    let base = variants.iter().position(|v| v.strategy == PairStrategy::Exhaustive).unwrap_or(0);
    let (bp, bm, bmap) = (rows[base].pairs as f64, rows[base].match_seconds, rows[base].map_seconds);
    for r in &mut rows {
        r.pair_reduction_pct = reduction(r.pairs as f64, bp);
        r.match_reduction_pct = reduction(r.match_seconds, bm);
        r.map_reduction_pct = reduction(r.map_seconds, bmap);
    }
    Ok(Comparison { trajectory: trajectory.to_string(), baseline: rows[base].label.clone(), rows })
}

/// Runs every configuration's strategy over their shared input and writes
/// `comparison.csv` and `comparison.md` to the first configuration's output.
pub fn emit_comparison(configs: &[PipelineConfig]) -> Result<Comparison, PipelineError> {
    let first =
        configs.first().ok_or_else(|| PipelineError::config("compare needs at least 2 strategy variants, got 0"))?;
    if configs.len() < 2 {
        return Err(PipelineError::config("compare needs at least 2 strategy variants, got 1"));
    }
    for c in &configs[1..] {
        if c.input != first.input || c.backend != first.backend {
            return Err(PipelineError::config(format!(
                "mismatched inputs: {} ({:?}) vs {} ({:?})",
                first.input.display(),
                first.backend,
                c.input.display(),
                c.backend
            )));
        }
        if c.max_features != first.max_features || c.match_ratio != first.match_ratio || c.seed != first.seed {
            return Err(PipelineError::config("variants may differ only in strategy, window and radius"));
        }
    }
    first.validate(true)?;
    let layout = Layout::new(&first.out);
    let dataset = ingest_stage(first)?;
    let t0 = Instant::now();
    let detector = DetectorConfig { max_features: first.max_features, ..Default::default() };
    let features = par::map(&dataset.frames, |f| detect_features(&f.image, &detector));
    log::info!("features for {} frames in {:.2} s", dataset.len(), t0.elapsed().as_secs_f64());
    let variants: Vec<Variant> = configs.iter().map(|c| Variant::new(c.pair_strategy())).collect();
    if variants.iter().any(|v| v.strategy.uses_priors()) && dataset.prior_count() == 0 {
        return Err(PipelineError::new(
            Stage::Compare,
            anyhow!("prior strategy requested but the recording has no priors"),
        ));
    }
    let names: Vec<String> = (0..dataset.len()).map(|i| dataset.frame_name(i)).collect();
    let cmp = compare_strategies(
        &first.trajectory_name(),
        &dataset.intrinsics,
        &names,
        &features,
        &dataset.priors,
        &variants,
        first.match_ratio,
        &first.mapper,
    )
    .stage(Stage::Compare)?;
    fs::write(layout.root.join("comparison.csv"), cmp.to_csv()).stage(Stage::Compare)?;
    fs::write(layout.root.join("comparison.md"), cmp.to_markdown()).stage(Stage::Compare)?;
    Ok(cmp)
}
