use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regolith_cli::{
    emit_comparison, evaluate_stage, ingest_stage, load_dataset, load_renders, load_sfm, load_splats, render_stage,
    run_pipeline, sfm_stage, train_stage, write_fixture, Layout, PipelineConfig, PipelineError, Stage, StageTimer,
};
use regolith_core::par;

/// Rover image sequences to sparse models, Gaussian splats and graded quality reports.
#[derive(Parser, Debug)]
#[command(name = "regolith", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a recording and store its frames under OUT/images.
    Ingest(Common),
    /// Detect, match and map the ingested frames.
    Sfm(Common),
    /// Optimize splats initialized from the sparse model.
    Train(Common),
    /// Render the evaluation views from the trained splats.
    Render(Common),
    /// Score the renders and write report.csv and report.md.
    Evaluate(Common),
    /// All stages in order.
    Run(Common),
    /// Match and map times per pair-proposal strategy.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strategies to compare.
        #[arg(long, value_delimiter = ',', default_value = "exhaustive,sequential,prior")]
        strategies: Vec<String>,
    },
    /// Write the bundled synthetic fixture to DIR.
    Fixture { dir: PathBuf },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = ["manifest", "rosbag2"])]
    backend: Option<String>,
    #[arg(long, value_parser = ["exhaustive", "sequential", "prior"])]
    strategy: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    /// Loop-closure radius of the prior strategy, metres.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = ["train", "heldout"])]
    eval: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other option as key=value, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags: [(&str, Option<String>); 9] = [
            ("input", self.input.as_ref().map(|p| p.display().to_string())),
            ("backend", self.backend.clone()),
            ("strategy", self.strategy.clone()),
            ("window", self.window.map(|v| v.to_string())),
            ("radius", self.radius.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("eval", self.eval.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| PipelineError::config(format!("--set {kv:?}: expected KEY=VALUE")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

/// Exit codes: 0 success, 1 failure, 2 completed without SfM convergence.
fn execute(command: &Command) -> Result<bool, PipelineError> {
    let (common, stage) = match command {
        Command::Fixture { dir } => {
            write_fixture(dir).map_err(|e| PipelineError::new(Stage::Config, e))?;
            println!("fixture written to {}", dir.display());
            return Ok(true);
        }
        Command::Compare { common, strategies } => {
            let base = common.resolve()?;
            let configs = strategies
                .iter()
                .map(|s| {
                    let mut c = base.clone();
                    c.set("strategy", s)?;
                    Ok(c)
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            let cmp = with_threads(&base, || emit_comparison(&configs))?;
            print!("{}", cmp.to_markdown());
            return Ok(true);
        }
        Command::Ingest(c) => (c, Stage::Ingest),
        Command::Sfm(c) => (c, Stage::Sfm),
        Command::Train(c) => (c, Stage::Train),
        Command::Render(c) => (c, Stage::Render),
        Command::Evaluate(c) => (c, Stage::Evaluate),
        Command::Run(c) => (c, Stage::Config),
    };
    let cfg = common.resolve()?;
    with_threads(&cfg, || run_command(&cfg, stage))
}

fn with_threads<R: Send>(cfg: &PipelineConfig, f: impl FnOnce() -> R + Send) -> R {
    par::with_threads(cfg.threads.unwrap_or(0), f)
}

/// `Stage::Config` stands for the full pipeline.
fn run_command(cfg: &PipelineConfig, stage: Stage) -> Result<bool, PipelineError> {
    let layout = Layout::new(&cfg.out);
    match stage {
        Stage::Config => {
            let summary = run_pipeline(cfg)?;
            if let Some(r) = &summary.report {
                print!("{}", r.to_markdown());
            }
            println!(
                "sfm: {}/{} registered, converged: {}",
                summary.sfm.registered_images,
                summary.sfm.total_images,
                if summary.sfm.converged { "Yes" } else { "No" }
            );
            Ok(summary.success())
        }
        Stage::Ingest => {
            cfg.validate(true)?;
            let timer = StageTimer::open(&layout, false)?;
            let ds = timer.time(Stage::Ingest, || ingest_stage(cfg))?;
            println!("{} frames, {} with priors", ds.len(), ds.prior_count());
            Ok(true)
        }
        Stage::Sfm => {
            cfg.validate(false)?;
            let timer = StageTimer::open(&layout, false)?;
            let ds = load_dataset(&layout, Stage::Sfm)?;
            let o = timer.time(Stage::Sfm, || sfm_stage(cfg, &ds, &timer))?;
            println!(
                "{}: {} pairs, {}/{} registered, {:.3} px, converged: {}",
                o.strategy,
                o.pairs,
                o.report.registered_images,
                o.report.total_images,
                o.report.mean_reprojection_error_px,
                if o.report.converged { "Yes" } else { "No" }
            );
            Ok(o.report.converged)
        }
        Stage::Train => {
            cfg.validate(false)?;
            let timer = StageTimer::open(&layout, false)?;
            let ds = load_dataset(&layout, Stage::Train)?;
            let (model, _) = load_sfm(&layout, Stage::Train)?;
            let ckpt = timer.time(Stage::Train, || train_stage(cfg, &ds, &model))?;
            println!("{} splats after {} steps", ckpt.scene.len(), ckpt.steps);
            Ok(true)
        }
        Stage::Render => {
            cfg.validate(false)?;
            let timer = StageTimer::open(&layout, false)?;
            let (model, _) = load_sfm(&layout, Stage::Render)?;
            let ckpt = load_splats(&layout, Stage::Render)?;
            let renders = timer.time(Stage::Render, || render_stage(cfg, &model, &ckpt))?;
            println!("{} views rendered to {}", renders.len(), layout.renders().display());
            Ok(true)
        }
        Stage::Evaluate => {
            cfg.validate(false)?;
            let timer = StageTimer::open(&layout, false)?;
            let ds = load_dataset(&layout, Stage::Evaluate)?;
            let (model, sfm) = load_sfm(&layout, Stage::Evaluate)?;
            let renders = load_renders(cfg, &model)?;
            let report = timer.time(Stage::Evaluate, || evaluate_stage(cfg, &ds, &renders, &sfm))?;
            print!("{}", report.to_markdown());
            Ok(true)
        }
        Stage::Compare => unreachable!("handled by execute"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REGOLITH_LOG", "info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
