//! Stage implementations and the artifact layout under the output directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use regolith_core::formats::{
    read_sparse_text, read_splat_ply, write_dataset_descriptor, write_point_ply, write_sparse_text, write_splat_ply,
    ColoredPoint,
};
use regolith_core::ingest::{read_recording, write_manifest_dataset, Backend, Dataset, IngestConfig};
use regolith_core::metrics::{
    aggregate_report, evaluate_views, read_lpips_scores, GradingBands, PerceptualMetric, QualityReport,
};
use regolith_core::radiance::{init_from_points, rasterize, train, SplatScene, TrainView};
use regolith_core::raster::Image;
use regolith_core::sfm::{detect_features, reconstruct, DetectorConfig, SfmReport, SparseModel};
use regolith_core::{par, synthetic};
use serde_json::json;

use crate::{PipelineConfig, PipelineError, Stage, StageContext};

/// Paths of every artifact below the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    /// Ingested frames in the manifest layout.
    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }
    pub fn sparse(&self) -> PathBuf {
        self.root.join("sparse")
    }
    pub fn points_ply(&self) -> PathBuf {
        self.sparse().join("points.ply")
    }
    pub fn descriptor(&self) -> PathBuf {
        self.root.join("transforms.json")
    }
    pub fn sfm_summary(&self) -> PathBuf {
        self.root.join("sfm.json")
    }
    pub fn splats(&self) -> PathBuf {
        self.root.join("splats.ply")
    }
    /// Background and appearance table that the PLY cannot hold.
    pub fn splat_sidecar(&self) -> PathBuf {
        self.root.join("splats.json")
    }
    pub fn renders(&self) -> PathBuf {
        self.root.join("renders")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }
    pub fn report_md(&self) -> PathBuf {
        self.root.join("report.md")
    }
    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.csv")
    }
}

/// Appends `stage,seconds` rows to `timings.csv`.
#[derive(Debug)]
pub struct StageTimer {
    path: PathBuf,
}

impl StageTimer {
    /// Starts a fresh file when `truncate` is set, otherwise appends.
    pub fn open(layout: &Layout, truncate: bool) -> Result<Self, PipelineError> {
        let path = layout.timings();
        fs::create_dir_all(&layout.root).stage(Stage::Config)?;
        if truncate || !path.exists() {
            fs::write(&path, "stage,seconds\n").stage(Stage::Config)?;
        }
        Ok(Self { path })
    }

    pub fn record(&self, stage: &str, seconds: f64) -> Result<(), PipelineError> {
        let mut f = fs::OpenOptions::new().append(true).open(&self.path).stage(Stage::Config)?;
        writeln!(f, "{stage},{seconds:.3}").stage(Stage::Config)
    }

    pub fn time<T>(&self, stage: Stage, f: impl FnOnce() -> Result<T, PipelineError>) -> Result<T, PipelineError> {
        let t0 = Instant::now();
        let out = f()?;
        self.record(&stage.to_string(), t0.elapsed().as_secs_f64())?;
        Ok(out)
    }
}

/// Reads the recording and writes it in the manifest layout under `images/`.
pub fn ingest_stage(cfg: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let layout = Layout::new(&cfg.out);
    let ingest = IngestConfig { backend: cfg.backend, ..Default::default() };
    let dataset = read_recording(&cfg.input, &ingest).stage(Stage::Ingest)?;
    write_manifest_dataset(&dataset, &layout.images()).stage(Stage::Ingest)?;
    Ok(dataset)
}

/// The dataset written by [`ingest_stage`].
pub fn load_dataset(layout: &Layout, stage: Stage) -> Result<Dataset, PipelineError> {
    let dir = layout.images();
    if !dir.is_dir() {
        return Err(PipelineError::new(stage, anyhow!("{} missing; run the ingest stage first", dir.display())));
    }
    let ingest = IngestConfig { backend: Backend::Manifest, ..Default::default() };
    read_recording(&dir, &ingest).stage(stage)
}

#[derive(Clone, Debug)]
pub struct SfmOutcome {
    pub model: SparseModel,
    pub report: SfmReport,
    pub strategy: String,
    pub pairs: usize,
    pub segments: usize,
}

/// Features, matching and mapping. Writes the sparse model, the point PLY,
/// the dataset descriptor and `sfm.json`.
pub fn sfm_stage(cfg: &PipelineConfig, dataset: &Dataset, timer: &StageTimer) -> Result<SfmOutcome, PipelineError> {
    let layout = Layout::new(&cfg.out);
    let strategy = cfg.pair_strategy();
    if strategy.uses_priors() && dataset.prior_count() == 0 {
        return Err(PipelineError::new(
            Stage::Sfm,
            anyhow!("strategy prior needs pose priors, the recording has none"),
        ));
    }
    let t0 = Instant::now();
    let detector = DetectorConfig { max_features: cfg.max_features, ..Default::default() };
    let features = par::map(&dataset.frames, |f| detect_features(&f.image, &detector));
    timer.record("features", t0.elapsed().as_secs_f64())?;
    let names: Vec<String> = (0..dataset.len()).map(|i| dataset.frame_name(i)).collect();
    let priors = if strategy.uses_priors() { &dataset.priors[..] } else { &[] };
    let rec = reconstruct(&dataset.intrinsics, &names, &features, priors, &strategy, cfg.match_ratio, &cfg.mapper)
        .stage(Stage::Sfm)?;
    timer.record("match", rec.report.match_seconds)?;
    timer.record("map", rec.report.map_seconds)?;
    let outcome = SfmOutcome {
        model: rec.mapped.model,
        report: rec.report,
        strategy: cfg.strategy.to_string(),
        pairs: rec.pairs,
        segments: rec.mapped.segments,
    };
    write_sfm_artifacts(&layout, &outcome).stage(Stage::Sfm)?;
    Ok(outcome)
}

fn write_sfm_artifacts(layout: &Layout, o: &SfmOutcome) -> anyhow::Result<()> {
    let summary = json!({
        "strategy": o.strategy,
        "pairs": o.pairs,
        "segments": o.segments,
        "report": o.report,
    });
    fs::write(layout.sfm_summary(), serde_json::to_string_pretty(&summary)? + "\n")?;
    if o.model.images.is_empty() {
        return Ok(());
    }
    write_sparse_text(&o.model, &layout.sparse())?;
    write_point_ply(&ColoredPoint::from_model(&o.model), &layout.points_ply())?;
    write_dataset_descriptor(&o.model, &layout.images(), &layout.descriptor())?;
    Ok(())
}

/// The sparse model and SfM report written by [`sfm_stage`].
pub fn load_sfm(layout: &Layout, stage: Stage) -> Result<(SparseModel, SfmReport), PipelineError> {
    let read = || -> anyhow::Result<_> {
        let path = layout.sfm_summary();
        let text = fs::read_to_string(&path).with_context(|| format!("{}; run the sfm stage first", path.display()))?;
        let summary: serde_json::Value = serde_json::from_str(&text)?;
        let report: SfmReport = serde_json::from_value(summary["report"].clone())?;
        if report.registered_images == 0 {
            bail!("the sfm stage registered no images");
        }
        Ok((read_sparse_text(&layout.sparse())?, report))
    };
    read().stage(stage)
}

/// Registered image ids split into training and evaluation views.
///
/// Every `holdout_every`-th registered image, starting in the middle of the
/// first block, is held out. Training-view evaluation scores the training set.
pub fn split_views(model: &SparseModel, cfg: &PipelineConfig) -> (Vec<u32>, Vec<u32>) {
    let n = cfg.holdout_every;
    let (held, train): (Vec<(usize, u32)>, Vec<(usize, u32)>) =
        model.images.keys().copied().enumerate().partition(|(k, _)| k % n == n / 2);
    let train: Vec<u32> = train.into_iter().map(|(_, id)| id).collect();
    match cfg.eval {
        regolith_core::metrics::EvalMode::HeldOut => (train, held.into_iter().map(|(_, id)| id).collect()),
        regolith_core::metrics::EvalMode::TrainViews => {
            let all: Vec<u32> = model.images.keys().copied().collect();
            (all.clone(), all)
        }
    }
}

/// Splats plus what the PLY does not store.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatCheckpoint {
    pub scene: SplatScene,
    pub steps: usize,
    pub final_loss: Option<f64>,
}

fn mean_color(images: &[&Image]) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for im in images {
        for px in im.data().chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c];
            }
            n += 1;
        }
    }
    sum.map(|s| if n > 0 { s / n as f64 } else { 0.0 })
}

/// Initializes splats from the sparse points and optimizes them on the
/// training views. Writes `splats.ply` and `splats.json`.
pub fn train_stage(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    model: &SparseModel,
) -> Result<SplatCheckpoint, PipelineError> {
    let layout = Layout::new(&cfg.out);
    let (train_ids, _) = split_views(model, cfg);
    let views: Vec<TrainView> = train_ids
        .iter()
        .enumerate()
        .map(|(k, id)| TrainView {
            image: dataset.frames[*id as usize].image.clone(),
            pose: model.images[id].pose,
            appearance_id: Some(k),
        })
        .collect();
    let points: Vec<_> = model.points.values().map(|p| (p.position, p.color)).collect();
    if points.is_empty() {
        return Err(PipelineError::new(Stage::Train, anyhow!("sparse model has no points to initialize from")));
    }
    let background = mean_color(&views.iter().map(|v| &v.image).collect::<Vec<_>>());
    let init = init_from_points(&points, views.len(), background);
    log::info!("training {} splats on {} views for {} steps", init.len(), views.len(), cfg.train.steps);
    let result = train(init, &views, &model.intrinsics, &cfg.train).stage(Stage::Train)?;
    let ckpt = SplatCheckpoint {
        scene: result.scene,
        steps: cfg.train.steps,
        final_loss: result.loss_history.last().copied(),
    };
    write_splats(&layout, &ckpt).stage(Stage::Train)?;
    Ok(ckpt)
}

fn write_splats(layout: &Layout, ckpt: &SplatCheckpoint) -> anyhow::Result<()> {
    write_splat_ply(&ckpt.scene.gaussians, &layout.splats())?;
    let sidecar = json!({
        "background": ckpt.scene.background,
        "appearance": ckpt.scene.appearance,
        "steps": ckpt.steps,
        "final_loss": ckpt.final_loss,
    });
    fs::write(layout.splat_sidecar(), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

/// The checkpoint written by [`train_stage`], as stored on disk.
pub fn load_splats(layout: &Layout, stage: Stage) -> Result<SplatCheckpoint, PipelineError> {
    let read = || -> anyhow::Result<_> {
        let gaussians = read_splat_ply(&layout.splats()).context("run the train stage first")?;
        let text = fs::read_to_string(layout.splat_sidecar())?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let background: [f64; 3] = serde_json::from_value(v["background"].clone())?;
        let appearance: Vec<[f64; 6]> = serde_json::from_value(v["appearance"].clone())?;
        let mut scene = SplatScene::new(gaussians, 0, background);
        scene.appearance = appearance;
        Ok(SplatCheckpoint {
            scene,
            steps: serde_json::from_value(v["steps"].clone())?,
            final_loss: serde_json::from_value(v["final_loss"].clone())?,
        })
    };
    read().stage(stage)
}

/// Renders the evaluation views to `renders/`. The returned images are the
/// 8-bit values written to disk.
pub fn render_stage(
    cfg: &PipelineConfig,
    model: &SparseModel,
    ckpt: &SplatCheckpoint,
) -> Result<Vec<(String, Image)>, PipelineError> {
    let layout = Layout::new(&cfg.out);
    let (_, eval_ids) = split_views(model, cfg);
    if eval_ids.is_empty() {
        return Err(PipelineError::new(Stage::Render, anyhow!("no {} views to render", cfg.eval)));
    }
    fs::create_dir_all(layout.renders()).stage(Stage::Render)?;
    let mut out = Vec::with_capacity(eval_ids.len());
    for id in eval_ids {
        let im = &model.images[&id];
        let rendered = rasterize(&ckpt.scene, &im.pose, &model.intrinsics, None).stage(Stage::Render)?.image;
        let (w, h) = rendered.dims();
        let stored = Image::from_rgb8(w, h, &rendered.to_rgb8()).stage(Stage::Render)?;
        stored.save(&layout.renders().join(&im.name)).stage(Stage::Render)?;
        out.push((im.name.clone(), stored));
    }
    Ok(out)
}

/// Loads renders written by [`render_stage`] for the current evaluation views.
pub fn load_renders(cfg: &PipelineConfig, model: &SparseModel) -> Result<Vec<(String, Image)>, PipelineError> {
    let layout = Layout::new(&cfg.out);
    let (_, eval_ids) = split_views(model, cfg);
    eval_ids
        .iter()
        .map(|id| {
            let name = model.images[id].name.clone();
            let image = Image::load(&layout.renders().join(&name))
                .with_context(|| format!("render of {name} missing; run the render stage first"))
                .stage(Stage::Evaluate)?;
            Ok((name, image))
        })
        .collect()
}

/// Scores renders against the ingested frames and writes `report.csv` and `report.md`.
pub fn evaluate_stage(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    renders: &[(String, Image)],
    sfm: &SfmReport,
) -> Result<QualityReport, PipelineError> {
    let layout = Layout::new(&cfg.out);
    let by_name: std::collections::BTreeMap<String, usize> =
        (0..dataset.len()).map(|i| (dataset.frame_name(i), i)).collect();
    let triples = renders
        .iter()
        .map(|(name, img)| {
            let i =
                by_name.get(name).ok_or_else(|| anyhow!("no ingested frame named {name}")).stage(Stage::Evaluate)?;
            Ok((name.clone(), img.clone(), dataset.frames[*i].image.clone()))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let lpips = cfg.lpips.as_deref().map(read_lpips_scores).transpose().stage(Stage::Evaluate)?;
    let views = evaluate_views(&triples, lpips.as_ref().map(|l| l as &dyn PerceptualMetric)).stage(Stage::Evaluate)?;
    let bands = GradingBands::standard();
    let geometry = (sfm.registered_images > 0).then(|| sfm.geometry());
    let report = aggregate_report(&cfg.trajectory_name(), cfg.eval, views, geometry, &bands).stage(Stage::Evaluate)?;
    fs::write(layout.report_csv(), report.to_csv(&bands)).stage(Stage::Evaluate)?;
    let mut md = report.to_markdown();
    md.push_str(&format!(
        "\nSfM: strategy {}, {}/{} images registered, converged: {}\n",
        cfg.strategy,
        sfm.registered_images,
        sfm.total_images,
        if sfm.converged { "Yes" } else { "No" }
    ));
    fs::write(layout.report_md(), md).stage(Stage::Evaluate)?;
    Ok(report)
}

/// What a full run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub sfm: SfmReport,
    /// Absent when SfM registered nothing and the later stages were skipped.
    pub report: Option<QualityReport>,
}

impl RunSummary {
    /// Exit status 0 requires every stage to have run and SfM to have converged.
    pub fn success(&self) -> bool {
        self.sfm.converged && self.report.is_some()
    }
}

/// ingest, sfm, train, render, evaluate. A non-converged SfM that still
/// produced a model runs the remaining stages and is flagged in the summary.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate(true)?;
    let layout = Layout::new(&cfg.out);
    let timer = StageTimer::open(&layout, true)?;
    let dataset = timer.time(Stage::Ingest, || ingest_stage(cfg))?;
    let sfm = timer.time(Stage::Sfm, || sfm_stage(cfg, &dataset, &timer))?;
    if sfm.model.images.is_empty() {
        log::warn!("sfm registered no images; skipping train, render and evaluate");
        fs::write(
            layout.report_md(),
            format!("SfM: strategy {}, 0/{} images registered, converged: No\n", cfg.strategy, sfm.report.total_images),
        )
        .stage(Stage::Sfm)?;
        return Ok(RunSummary { sfm: sfm.report, report: None });
    }
    if !sfm.report.converged {
        log::warn!(
            "sfm did not converge ({}/{} registered, {:.3} px)",
            sfm.report.registered_images,
            sfm.report.total_images,
            sfm.report.mean_reprojection_error_px
        );
    }
    timer.time(Stage::Train, || train_stage(cfg, &dataset, &sfm.model))?;
    let renders = timer.time(Stage::Render, || {
        let ckpt = load_splats(&layout, Stage::Render)?;
        render_stage(cfg, &sfm.model, &ckpt)
    })?;
    let report = timer.time(Stage::Evaluate, || evaluate_stage(cfg, &dataset, &renders, &sfm.report))?;
    Ok(RunSummary { sfm: sfm.report, report: Some(report) })
}

/// Settings written next to the bundled fixture.
const FIXTURE_CONFIG: &str = "\
# Settings for the bundled 12-frame synthetic fixture.
strategy = prior
window = 5
holdout_every = 4
trajectory = synthetic12
train.steps = 300
train.densify_from = 100
train.densify_until = 200
train.densify_interval = 50
";

/// Writes the bundled 12-frame fixture (manifest layout plus `regolith.conf`) to `dir`.
pub fn write_fixture(dir: &Path) -> anyhow::Result<()> {
    write_manifest_dataset(&synthetic::fixture_dataset(), dir)?;
    fs::write(dir.join("regolith.conf"), FIXTURE_CONFIG)?;
    Ok(())
}
