//! Thin command-line front end over [`adapterkit::runner`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adapterkit::backbone::BackboneKind;
use adapterkit::env::{CameraConfig, TaskKind};
use adapterkit::runner::{self, ExperimentConfig, PretrainArgs};
use adapterkit::train::FreezeMode;

#[derive(Parser)]
#[command(name = "adapterkit", about = "Frozen-backbone adapter experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a base backbone on the shape/color pretext task.
    Pretrain {
        #[arg(long, value_parser = parse_backbone)]
        backbone: BackboneKind,
        #[arg(long, default_value_t = 20_000)]
        images: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect successful scripted-expert demonstrations into a demo file.
    Collect {
        #[arg(long, value_parser = parse_task)]
        task: TaskKind,
        #[arg(long, value_parser = parse_camera, default_value = "front")]
        camera: CameraConfig,
        #[arg(long, default_value_t = 25)]
        demos: usize,
        #[arg(long, default_value_t = 9_000)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy (frozen / adapters / full-ft / scratch) and evaluate it.
    Train {
        /// Experiment config file; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
        #[arg(long, value_parser = parse_backbone)]
        backbone: Option<BackboneKind>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<FreezeMode>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        bottom: Option<bool>,
        #[arg(long)]
        middle: Option<bool>,
        #[arg(long)]
        top: Option<bool>,
        #[arg(long)]
        f_prime: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        demos: Option<usize>,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a task policy from a composite manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 40)]
        rollouts: usize,
        #[arg(long, default_value_t = 500_000)]
        seed_base: u64,
        #[arg(long, value_parser = parse_camera, default_value = "front")]
        camera: CameraConfig,
    },
    /// Run the 8-cell adapter-location ablation grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Shape-only parameter audit of the reference architectures.
    Audit {
        #[arg(long, default_value_t = 32)]
        f_prime: usize,
        #[arg(long, default_value_t = 4)]
        action_dim: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check bundle integrity; optionally compare against another bundle.
    Verify {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Summarize finished run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    TaskKind::parse(s).ok_or_else(|| format!("unknown task {s:?} (reach|push|stack2d)"))
}

fn parse_backbone(s: &str) -> Result<BackboneKind, String> {
    BackboneKind::parse(s).ok_or_else(|| format!("unknown backbone {s:?} (conv|vit)"))
}

fn parse_mode(s: &str) -> Result<FreezeMode, String> {
    FreezeMode::parse(s).ok_or_else(|| format!("unknown mode {s:?} (frozen|adapters|full-ft|scratch)"))
}

fn parse_camera(s: &str) -> Result<CameraConfig, String> {
    CameraConfig::parse(s).ok_or_else(|| format!("unknown camera {s:?} (front|shifted|mirrored)"))
}

fn run(cli: Cli) -> adapterkit::Result<()> {
    match cli.command {
        Command::Pretrain { backbone, images, epochs, batch, seed, out } => {
            let acc = runner::cmd_pretrain(&PretrainArgs {
                backbone,
                images,
                epochs,
                batch,
                seed,
                out: out.clone(),
            })?;
            println!(
                "pretrained {} base -> {} (val accuracy {:.3})",
                backbone.as_str(),
                out.display(),
                acc
            );
        }
        Command::Collect { task, camera, demos, seed, out } => {
            let frames = runner::cmd_collect(task, camera, demos, seed, &out)?;
            println!("collected {demos} episodes ({frames} frames) -> {}", out.display());
        }
        Command::Train {
            config, task, backbone, mode, base, bottom, middle, top,
            f_prime, lr, steps, warmup, batch, demos, rollouts, seeds, out,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::from_text(&std::fs::read_to_string(path)?)?,
                None => ExperimentConfig::new(
                    task.unwrap_or(TaskKind::Push),
                    backbone.unwrap_or(BackboneKind::Conv),
                    mode.unwrap_or(FreezeMode::Adapters),
                    out.clone().unwrap_or_else(|| PathBuf::from("runs/experiment")),
                ),
            };
            if let Some(v) = task { cfg.task = v; }
            if let Some(v) = backbone { cfg.backbone = v; }
            if let Some(v) = mode { cfg.mode = v; }
            if let Some(v) = base { cfg.base = Some(v); }
            if let Some(v) = bottom { cfg.use_bottom = v; }
            if let Some(v) = middle { cfg.use_middle = v; }
            if let Some(v) = top { cfg.use_top = v; }
            if let Some(v) = f_prime { cfg.f_prime = v; }
            if let Some(v) = lr { cfg.learning_rate = v; }
            if let Some(v) = steps { cfg.steps = v; }
            if let Some(v) = warmup { cfg.warmup = v; }
            if let Some(v) = batch { cfg.batch = v; }
            if let Some(v) = demos { cfg.demos = v; }
            if let Some(v) = rollouts { cfg.rollouts = v; }
            if let Some(v) = seeds { cfg.seeds = v; }
            if let Some(v) = out { cfg.out = v; }
            let outcome = runner::cmd_train(&cfg)?;
            print!("{}", outcome.to_text());
        }
        Command::Eval { manifest, task, rollouts, seed_base, camera } => {
            let mean = runner::cmd_eval(&manifest, &task, rollouts, seed_base, camera)?;
            println!("mean success over {rollouts} rollouts: {mean:.3}");
        }
        Command::Ablate { config } => {
            let cfg = ExperimentConfig::from_text(&std::fs::read_to_string(config)?)?;
            let rows = runner::cmd_ablate(&cfg)?;
            print!("{}", runner::ablation_table(&rows));
        }
        Command::Audit { f_prime, action_dim, out } => {
            let table = runner::cmd_audit(f_prime, action_dim, out.as_deref())?;
            print!("{table}");
        }
        Command::Verify { bundle, against } => {
            let report = runner::cmd_verify(&bundle, against.as_deref())?;
            print!("{report}");
        }
        Command::Report { runs } => {
            let table = runner::cmd_report(&runs)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(runner::exit_code_for(&err) as u8)
        }
    }
}
