//! Scratch driver for calibrating the acceptance-grid budgets.
//! Usage: calibrate <base.adpb> <task> <mode:frozen|adapters|full-ft|scratch|bt|frozen-notop> <steps> <batch> <lr> <seeds...>

use std::path::PathBuf;
use std::time::Instant;

use adapterkit::backbone::BackboneKind;
use adapterkit::env::TaskKind;
use adapterkit::runner::{cmd_train, ExperimentConfig};
use adapterkit::train::FreezeMode;

fn main() -> adapterkit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let base = PathBuf::from(&args[0]);
    let task = TaskKind::parse(&args[1]).unwrap();
    let label = args[2].clone();
    let steps: usize = args[3].parse().unwrap();
    let batch: usize = args[4].parse().unwrap();
    let lr: f64 = args[5].parse().unwrap();
    let seeds: Vec<u64> = args[6..].iter().map(|s| s.parse().unwrap()).collect();

    let (mode, bottom, middle, top) = match label.as_str() {
        "frozen" => (FreezeMode::FrozenFeatures, false, false, true),
        "frozen-notop" => (FreezeMode::FrozenFeatures, false, false, false),
        "adapters" => (FreezeMode::Adapters, true, true, true),
        "bt" => (FreezeMode::Adapters, true, false, true),
        "mt" => (FreezeMode::Adapters, false, true, true),
        "full-ft" => (FreezeMode::FullFinetune, false, false, true),
        "scratch" => (FreezeMode::Scratch, false, false, true),
        other => panic!("unknown mode label {other}"),
    };

    let out = std::env::temp_dir().join(format!(
        "calib_{}_{}_{}x{}_{}",
        task.as_str(),
        label,
        steps,
        batch,
        lr
    ));
    let mut cfg = ExperimentConfig::new(task, BackboneKind::Conv, mode, out);
    cfg.base = (mode != FreezeMode::Scratch).then(|| base.clone());
    cfg.use_bottom = bottom;
    cfg.use_middle = middle;
    cfg.use_top = top;
    cfg.f_prime = 8;
    cfg.learning_rate = lr;
    cfg.steps = steps;
    cfg.warmup = (steps / 20).max(1);
    cfg.batch = batch;
    cfg.seeds = seeds;

    let t = Instant::now();
    let outcome = cmd_train(&cfg)?;
    let per: Vec<String> = outcome
        .per_seed
        .iter()
        .map(|r| format!("{:.3}(loss {:.4})", r.mean_success, r.final_loss))
        .collect();
    println!(
        "{} {} steps={} batch={} lr={}: median {:.3} [{}] in {:.0}s",
        task.as_str(),
        label,
        steps,
        batch,
        lr,
        outcome.median_success,
        per.join(" "),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
