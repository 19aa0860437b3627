//! Experiment runner: configuration files, training/evaluation pipelines,
//! ablation grids and report emission. The `adapterkit` binary is a thin
//! argument parser over these functions.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::adapter::{count_trainable, inject, plan_placement, plan_to_text, AdapterPlan};
use crate::backbone::{build_backbone, BackboneKind};
use crate::bundle::{
    self, apply_bundle, backbone_of_kind, head_config_meta, load_bundle, registry_payload_sha256,
    save_registry, WeightBundle,
};
use crate::env::{collect_demos, evaluate, CameraConfig, Controller, Env, EnvState, Observation, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{build_head, HeadConfig, PolicyModel, Reduction};
use crate::pretext::{pretrain, PretextDataset};
use crate::registry::{Origin, OriginFilter};
use crate::train::{train, FreezeMode, TrainConfig, TrainReport};

/// Everything one `train` invocation needs; round-trips through the
/// key/value config text format.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub backbone: BackboneKind,
    /// Required unless mode is scratch.
    pub base: Option<PathBuf>,
    pub mode: FreezeMode,
    pub use_bottom: bool,
    pub use_middle: bool,
    pub use_top: bool,
    pub f_prime: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub warmup: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub demos: usize,
    pub demo_seed: u64,
    pub camera: CameraConfig,
    pub proprio: bool,
    pub rollouts: usize,
    pub eval_seed_base: u64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(task: TaskKind, backbone: BackboneKind, mode: FreezeMode, out: PathBuf) -> Self {
        ExperimentConfig {
            task,
            backbone,
            base: None,
            mode,
            use_bottom: mode == FreezeMode::Adapters,
            use_middle: mode == FreezeMode::Adapters,
            use_top: true,
            f_prime: 32,
            learning_rate: 1e-4,
            steps: 20_000,
            warmup: 1_000,
            batch: 64,
            weight_decay: 1e-6,
            grad_clip: 1.0,
            demos: 25,
            demo_seed: 9_000,
            camera: CameraConfig::Front,
            proprio: false,
            rollouts: 40,
            eval_seed_base: 500_000,
            seeds: vec![1, 2, 3],
            out: out.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != FreezeMode::Adapters && (self.use_bottom || self.use_middle) {
            return Err(Error::Config(format!(
                "mode {} cannot carry injection flags; adapters are for adapters mode",
                self.mode.as_str()
            )));
        }
        if self.mode != FreezeMode::Scratch && self.base.is_none() {
            return Err(Error::Config(format!(
                "mode {} needs a base bundle",
                self.mode.as_str()
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.warmup >= self.steps {
            return Err(Error::Config("warmup must be below steps".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# experiment config\n");
        s.push_str(&format!("task = {}\n", self.task.as_str()));
        s.push_str(&format!("backbone = {}\n", self.backbone.as_str()));
        if let Some(base) = &self.base {
            s.push_str(&format!("base = {}\n", base.display()));
        }
        s.push_str(&format!("mode = {}\n", self.mode.as_str()));
        s.push_str(&format!("bottom = {}\n", self.use_bottom));
        s.push_str(&format!("middle = {}\n", self.use_middle));
        s.push_str(&format!("top = {}\n", self.use_top));
        s.push_str(&format!("f_prime = {}\n", self.f_prime));
        s.push_str(&format!("lr = {}\n", self.learning_rate));
        s.push_str(&format!("steps = {}\n", self.steps));
        s.push_str(&format!("warmup = {}\n", self.warmup));
        s.push_str(&format!("batch = {}\n", self.batch));
        s.push_str(&format!("weight_decay = {}\n", self.weight_decay));
        s.push_str(&format!("grad_clip = {}\n", self.grad_clip));
        s.push_str(&format!("demos = {}\n", self.demos));
        s.push_str(&format!("demo_seed = {}\n", self.demo_seed));
        s.push_str(&format!("camera = {}\n", self.camera.as_str()));
        s.push_str(&format!("proprio = {}\n", self.proprio));
        s.push_str(&format!("rollouts = {}\n", self.rollouts));
        s.push_str(&format!("eval_seed_base = {}\n", self.eval_seed_base));
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        s.push_str(&format!("seeds = {}\n", seeds.join(" ")));
        s.push_str(&format!("out = {}\n", self.out.display()));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::new(
            TaskKind::Push,
            BackboneKind::Conv,
            FreezeMode::Adapters,
            PathBuf::from("runs/experiment"),
        );
        let bad = |k: &str, v: &str| Error::Config(format!("config key {k:?}: bad value {v:?}"));
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {line:?}: expected key = value")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "task" => cfg.task = TaskKind::parse(v).ok_or_else(|| bad(k, v))?,
                "backbone" => cfg.backbone = BackboneKind::parse(v).ok_or_else(|| bad(k, v))?,
                "base" => cfg.base = Some(PathBuf::from(v)),
                "mode" => cfg.mode = FreezeMode::parse(v).ok_or_else(|| bad(k, v))?,
                "bottom" => cfg.use_bottom = v.parse().map_err(|_| bad(k, v))?,
                "middle" => cfg.use_middle = v.parse().map_err(|_| bad(k, v))?,
                "top" => cfg.use_top = v.parse().map_err(|_| bad(k, v))?,
                "f_prime" => cfg.f_prime = v.parse().map_err(|_| bad(k, v))?,
                "lr" => cfg.learning_rate = v.parse().map_err(|_| bad(k, v))?,
                "steps" => cfg.steps = v.parse().map_err(|_| bad(k, v))?,
                "warmup" => cfg.warmup = v.parse().map_err(|_| bad(k, v))?,
                "batch" => cfg.batch = v.parse().map_err(|_| bad(k, v))?,
                "weight_decay" => cfg.weight_decay = v.parse().map_err(|_| bad(k, v))?,
                "grad_clip" => cfg.grad_clip = v.parse().map_err(|_| bad(k, v))?,
                "demos" => cfg.demos = v.parse().map_err(|_| bad(k, v))?,
                "demo_seed" => cfg.demo_seed = v.parse().map_err(|_| bad(k, v))?,
                "camera" => cfg.camera = CameraConfig::parse(v).ok_or_else(|| bad(k, v))?,
                "proprio" => cfg.proprio = v.parse().map_err(|_| bad(k, v))?,
                "rollouts" => cfg.rollouts = v.parse().map_err(|_| bad(k, v))?,
                "eval_seed_base" => cfg.eval_seed_base = v.parse().map_err(|_| bad(k, v))?,
                "seeds" => {
                    cfg.seeds = v
                        .split_whitespace()
                        .map(|s| s.parse().map_err(|_| bad(k, v)))
                        .collect::<Result<Vec<u64>>>()?;
                }
                "out" => cfg.out = PathBuf::from(v),
                _ => return Err(Error::Config(format!("unknown config key {k:?}"))),
            }
        }
        Ok(cfg)
    }
}

/// A trained model driving an episode through its observations.
pub struct TrainedPolicy<'m> {
    pub model: &'m PolicyModel<f32>,
}

impl Controller for TrainedPolicy<'_> {
    fn act(&self, _task: &TaskSpec, _state: &EnvState, obs: &Observation) -> Vec<f32> {
        let proprio: Option<&[f32]> = self.model.head.proprio.then_some(&obs.proprio[..]);
        self.model
            .act(&obs.image, proprio)
            .expect("policy forward on well-formed observation")
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub mean_success: f64,
    pub final_loss: f64,
    /// Median training loss over the first and last 10% of curve points.
    pub loss_first_decile: f64,
    pub loss_last_decile: f64,
    pub lossless: bool,
    pub base_hash_before: String,
    pub base_hash_after: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub counts_base: usize,
    pub counts_adapter: usize,
    pub counts_head: usize,
    pub per_seed: Vec<SeedResult>,
    pub median_success: f64,
    pub wall_seconds: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        return f64::NAN;
    }
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Assemble the model for one seed: base weights (loaded, or fresh for
/// scratch), injected plan, and head.
pub fn build_model(
    cfg: &ExperimentConfig,
    base: Option<&WeightBundle>,
    seed: u64,
) -> Result<(PolicyModel<f32>, AdapterPlan)> {
    let backbone = backbone_of_kind(cfg.backbone);
    let mut registry = if cfg.mode == FreezeMode::Scratch {
        // Fresh random base, seeded per run seed.
        build_backbone::<f32>(&backbone, seed ^ 0x5c7a_7c11)?
    } else {
        let mut reg = build_backbone::<f32>(&backbone, 0)?;
        apply_bundle(
            base.expect("validated: non-scratch mode has a base"),
            &mut reg,
            OriginFilter::Only(Origin::Base),
        )?;
        reg
    };
    let plan = if cfg.mode == FreezeMode::Adapters {
        plan_placement(&backbone, cfg.use_bottom, cfg.use_middle, cfg.use_top, cfg.f_prime)?
    } else {
        AdapterPlan {
            use_top: cfg.use_top,
            ..AdapterPlan::empty()
        }
    };
    let adapters = inject(&backbone, &plan, &mut registry, seed ^ 0xada7)?;
    let head = HeadConfig {
        reduction: Reduction::SpatialProjection,
        top_adapter: cfg.use_top,
        proprio: cfg.proprio,
        action_dim: TaskSpec::named(cfg.task).action_dim,
        ..HeadConfig::new(TaskSpec::named(cfg.task).action_dim)
    };
    build_head(backbone.feature_geometry(), &head, &mut registry, seed ^ 0x4ead)?;
    Ok((
        PolicyModel {
            backbone,
            adapters,
            head,
            registry,
        },
        plan,
    ))
}

/// Run training and evaluation for every seed; write bundles and reports
/// under the config's output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let base = match (&cfg.base, cfg.mode) {
        (_, FreezeMode::Scratch) => None,
        (Some(path), _) => Some(load_bundle(path)?),
        (None, _) => unreachable!("validate checked presence"),
    };

    let env = Env::with_camera(cfg.task, cfg.camera);
    let demos = collect_demos(&env, cfg.demos, cfg.demo_seed);
    let train_set = demos.to_train_set();

    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.txt"), cfg.to_text())?;

    let mut per_seed = Vec::new();
    let mut counts = None;
    for &seed in &cfg.seeds {
        let (mut model, plan) = build_model(cfg, base.as_ref(), seed)?;
        let hash_before = registry_payload_sha256(&model.registry, OriginFilter::Only(Origin::Base));

        let tc = TrainConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            grad_norm_clip: cfg.grad_clip,
            total_steps: cfg.steps,
            warmup_steps: cfg.warmup,
            batch_size: cfg.batch,
            seed,
            freeze_mode: cfg.mode,
            log_every: (cfg.steps / 100).max(1),
        };
        let report = train(&mut model, &train_set, &tc, None)?;
        let hash_after = registry_payload_sha256(&model.registry, OriginFilter::Only(Origin::Base));

        let c = count_trainable(&model.registry);
        counts = Some((c.base, c.adapter, c.head));

        let policy = TrainedPolicy { model: &model };
        let (mean_success, per_episode) =
            evaluate(&env, &policy, cfg.rollouts, cfg.eval_seed_base)?;

        let seed_dir = cfg.out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        write_seed_artifacts(cfg, &model, &plan, &report, &seed_dir, &per_episode)?;

        let losses: Vec<f64> = report.curve.iter().map(|p| p.loss).collect();
        let decile = (losses.len() / 10).max(1);
        per_seed.push(SeedResult {
            seed,
            mean_success,
            final_loss: report.final_loss,
            loss_first_decile: median(&losses[..decile]),
            loss_last_decile: median(&losses[losses.len() - decile..]),
            lossless: hash_before == hash_after,
            base_hash_before: hash_before,
            base_hash_after: hash_after,
        });
    }

    let (counts_base, counts_adapter, counts_head) = counts.unwrap();
    let outcome = RunOutcome {
        config: cfg.clone(),
        counts_base,
        counts_adapter,
        counts_head,
        median_success: median(
            &per_seed.iter().map(|r| r.mean_success).collect::<Vec<_>>(),
        ),
        per_seed,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    std::fs::write(cfg.out.join("report.txt"), outcome.to_text())?;
    Ok(outcome)
}

fn write_seed_artifacts(
    cfg: &ExperimentConfig,
    model: &PolicyModel<f32>,
    plan: &AdapterPlan,
    report: &TrainReport,
    seed_dir: &Path,
    per_episode: &[bool],
) -> Result<()> {
    let mode_meta = vec![
        ("backbone".to_string(), cfg.backbone.as_str().to_string()),
        ("mode".to_string(), cfg.mode.as_str().to_string()),
        ("task".to_string(), cfg.task.as_str().to_string()),
    ];
    if model
        .registry
        .iter()
        .any(|p| p.origin == Origin::Adapter)
    {
        save_registry(
            &model.registry,
            OriginFilter::Only(Origin::Adapter),
            mode_meta.clone(),
            &seed_dir.join("adapters.adpb"),
        )?;
    }
    let mut head_meta = head_config_meta(&model.head);
    head_meta.extend(mode_meta.clone());
    save_registry(
        &model.registry,
        OriginFilter::Only(Origin::Head),
        head_meta,
        &seed_dir.join("head.adpb"),
    )?;
    if matches!(cfg.mode, FreezeMode::FullFinetune | FreezeMode::Scratch) {
        save_registry(
            &model.registry,
            OriginFilter::Only(Origin::Base),
            mode_meta,
            &seed_dir.join("base_trained.adpb"),
        )?;
    }
    std::fs::write(seed_dir.join("plan.txt"), plan_to_text(plan))?;
    let mut curve = String::from("step,loss,lr,grad_norm\n");
    for p in &report.curve {
        curve.push_str(&format!("{},{},{},{}\n", p.step, p.loss, p.lr, p.grad_norm));
    }
    std::fs::write(seed_dir.join("losses.csv"), curve)?;
    let episodes: Vec<String> = per_episode.iter().map(|s| u8::from(*s).to_string()).collect();
    std::fs::write(seed_dir.join("episodes.csv"), episodes.join("\n"))?;
    Ok(())
}

impl RunOutcome {
    /// The machine-readable run report (key = value lines).
    pub fn to_text(&self) -> String {
        let mut s = String::from("# run report\n");
        s.push_str(&format!("task = {}\n", self.config.task.as_str()));
        s.push_str(&format!("backbone = {}\n", self.config.backbone.as_str()));
        s.push_str(&format!("mode = {}\n", self.config.mode.as_str()));
        s.push_str(&format!(
            "adapters = bottom:{} middle:{} top:{} f_prime:{}\n",
            self.config.use_bottom, self.config.use_middle, self.config.use_top, self.config.f_prime
        ));
        s.push_str(&format!("params_base = {}\n", self.counts_base));
        s.push_str(&format!("params_adapter = {}\n", self.counts_adapter));
        s.push_str(&format!("params_head = {}\n", self.counts_head));
        for r in &self.per_seed {
            s.push_str(&format!(
                "seed = {} success {:.4} final_loss {:.6} lossless {} hash_before {} hash_after {}\n",
                r.seed, r.mean_success, r.final_loss, r.lossless,
                &r.base_hash_before[..16], &r.base_hash_after[..16]
            ));
        }
        s.push_str(&format!("median_success = {:.4}\n", self.median_success));
        s.push_str(&format!("wall_seconds = {:.1}\n", self.wall_seconds));
        s
    }
}

// ---- pretraining -------------------------------------------------------------

pub struct PretrainArgs {
    pub backbone: BackboneKind,
    pub images: usize,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<f64> {
    let backbone = backbone_of_kind(args.backbone);
    let dataset = PretextDataset::new(args.seed, args.images);
    let outcome = pretrain::<f32>(&backbone, &dataset, args.epochs, args.seed, args.batch)?;
    let meta = vec![
        ("backbone".to_string(), args.backbone.as_str().to_string()),
        ("pretext_seed".to_string(), args.seed.to_string()),
        ("pretext_images".to_string(), args.images.to_string()),
        ("pretext_epochs".to_string(), args.epochs.to_string()),
        ("val_accuracy".to_string(), format!("{:.4}", outcome.val_accuracy)),
        ("weak_base".to_string(), outcome.weak_base.to_string()),
    ];
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    save_registry(&outcome.registry, OriginFilter::Only(Origin::Base), meta, &args.out)?;
    Ok(outcome.val_accuracy)
}

// ---- ablation grid -----------------------------------------------------------

/// The 8-cell grid: {none, bottom, middle, bottom+middle} x {top, no top}.
pub const ABLATION_CELLS: [(bool, bool, bool); 8] = [
    (false, false, false),
    (true, false, false),
    (false, true, false),
    (true, true, false),
    (false, false, true),
    (true, false, true),
    (false, true, true),
    (true, true, true),
];

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub bottom: bool,
    pub middle: bool,
    pub top: bool,
    pub median_success: f64,
    pub per_seed: Vec<f64>,
}

pub fn cmd_ablate(template: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (bottom, middle, top) in ABLATION_CELLS {
        let mut cfg = template.clone();
        cfg.mode = if bottom || middle {
            FreezeMode::Adapters
        } else {
            FreezeMode::FrozenFeatures
        };
        cfg.use_bottom = bottom;
        cfg.use_middle = middle;
        cfg.use_top = top;
        cfg.out = template.out.join(format!(
            "b{}m{}t{}",
            u8::from(bottom),
            u8::from(middle),
            u8::from(top)
        ));
        let outcome = cmd_train(&cfg)?;
        rows.push(AblationRow {
            bottom,
            middle,
            top,
            median_success: outcome.median_success,
            per_seed: outcome.per_seed.iter().map(|r| r.mean_success).collect(),
        });
    }
    let table = ablation_table(&rows);
    std::fs::write(template.out.join("ablation.txt"), &table)?;
    Ok(rows)
}

/// Grouped table: the no-top block first, then the top block.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    for with_top in [false, true] {
        s.push_str(if with_top {
            "\nwith top adapter (2x256 MLP)\n"
        } else {
            "without top adapter (linear head)\n"
        });
        s.push_str(&format!("{:<18} {:>8}   per-seed\n", "adapters", "median"));
        for r in rows.iter().filter(|r| r.top == with_top) {
            let name = match (r.bottom, r.middle) {
                (false, false) => "none (frozen)",
                (true, false) => "bottom",
                (false, true) => "middle",
                (true, true) => "bottom+middle",
            };
            let seeds: Vec<String> = r.per_seed.iter().map(|v| format!("{v:.3}")).collect();
            s.push_str(&format!(
                "{:<18} {:>8.3}   {}\n",
                name,
                r.median_success,
                seeds.join(" ")
            ));
        }
    }
    s
}

// ---- demo collection, eval, verify, audit, report ------------------------------

pub fn cmd_collect(
    task: TaskKind,
    camera: CameraConfig,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<usize> {
    let env = Env::with_camera(task, camera);
    let set = collect_demos(&env, n, seed);
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    crate::env::save_demoset(&set, out)?;
    Ok(set.frame_count())
}

/// Evaluate a composed task policy from a composite manifest.
pub fn cmd_eval(
    manifest: &Path,
    task_name: &str,
    rollouts: usize,
    seed_base: u64,
    camera: CameraConfig,
) -> Result<f64> {
    let model = bundle::compose(manifest, task_name)?;
    let task = TaskKind::parse(task_name)
        .ok_or_else(|| Error::Config(format!("unknown task {task_name:?}")))?;
    let env = Env::with_camera(task, camera);
    let policy = TrainedPolicy { model: &model };
    let (mean, _) = evaluate(&env, &policy, rollouts, seed_base)?;
    Ok(mean)
}

/// Integrity check: trailer hash plus per-tensor checksums; optionally
/// compare base payloads of two bundles bit-for-bit.
pub fn cmd_verify(bundle_path: &Path, against: Option<&Path>) -> Result<String> {
    let a = load_bundle(bundle_path)?;
    let mut out = format!(
        "{}: ok ({} tensors, {} payload bytes, sha256 {})\n",
        bundle_path.display(),
        a.tensors.len(),
        a.payload_len(),
        &a.payload_sha256()[..16],
    );
    if let Some(other) = against {
        let b = load_bundle(other)?;
        let identical = a.payload_sha256() == b.payload_sha256()
            && a.tensor_names() == b.tensor_names();
        out.push_str(&format!(
            "lossless versus {}: {}\n",
            other.display(),
            identical
        ));
    }
    Ok(out)
}

pub fn cmd_audit(f_prime: usize, action_dim: usize, out_dir: Option<&Path>) -> Result<String> {
    let report = crate::audit::audit_report(f_prime, action_dim)?;
    let table = report.to_table();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("audit.txt"), &table)?;
        std::fs::write(dir.join("audit.csv"), report.to_csv())?;
    }
    Ok(table)
}

/// Summarize finished run directories into one aligned table and CSV.
pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<String> {
    #[derive(Debug)]
    struct Row {
        dir: String,
        task: String,
        backbone: String,
        mode: String,
        median: f64,
    }
    let mut rows = Vec::new();
    for dir in run_dirs {
        let text = std::fs::read_to_string(dir.join("report.txt"))?;
        let get = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(&format!("{key} = ")))
                .unwrap_or("?")
                .to_string()
        };
        rows.push(Row {
            dir: dir.display().to_string(),
            task: get("task"),
            backbone: get("backbone"),
            mode: get("mode"),
            median: get("median_success").parse().unwrap_or(f64::NAN),
        });
    }
    let mut s = format!(
        "{:<28} {:<8} {:<9} {:<9} {:>8}\n",
        "run", "task", "backbone", "mode", "median"
    );
    let mut csv = String::from("run,task,backbone,mode,median\n");
    for r in &rows {
        s.push_str(&format!(
            "{:<28} {:<8} {:<9} {:<9} {:>8.3}\n",
            r.dir, r.task, r.backbone, r.mode, r.median
        ));
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.dir, r.task, r.backbone, r.mode, r.median
        ));
    }
    Ok(format!("{s}\n{csv}"))
}

/// Exit code mapping: 0 success, 2 usage, 3 data or hash integrity,
/// 4 numerical failure.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::HashMismatch { .. }
        | Error::Bundle(_)
        | Error::NameSetMismatch { .. }
        | Error::EmptySelection(_) => 3,
        Error::NanLoss { .. } | Error::NonFiniteGradient(_) => 4,
        Error::Config(_) => 2,
        _ => 1,
    }
}
