//! Miniature end-to-end run: pretext-pretrain a conv base, freeze it,
//! inject adapters, behavior-clone the reach task, and evaluate — showing
//! the base weights stayed bit-identical.
//!
//! Budgets here are tiny so the example finishes in about a minute; the
//! experiment CLI runs the full-scale versions.
//!
//!     cargo run --release --example train_adapters

use adapterkit::bundle::registry_payload_sha256;
use adapterkit::env::{collect_demos, evaluate, Env, TaskKind};
use adapterkit::pretext::{pretrain, PretextDataset};
use adapterkit::registry::{Origin, OriginFilter};
use adapterkit::runner::{build_model, ExperimentConfig, TrainedPolicy};
use adapterkit::train::{train, FreezeMode, TrainConfig};
use adapterkit::backbone::{Backbone, BackboneKind, ConvBackboneSpec};

fn main() -> adapterkit::Result<()> {
    // A quick pretext base (full runs use 20k images, 10 epochs).
    let backbone = Backbone::Conv(ConvBackboneSpec::default());
    let dataset = PretextDataset::new(1, 2_400);
    let outcome = pretrain::<f32>(&backbone, &dataset, 2, 1, 48)?;
    println!("pretext val accuracy: {:.3} (weak base: {})", outcome.val_accuracy, outcome.weak_base);

    let mut cfg = ExperimentConfig::new(
        TaskKind::Reach,
        BackboneKind::Conv,
        FreezeMode::Adapters,
        std::env::temp_dir().join("adapterkit_train_example"),
    );
    cfg.f_prime = 8;
    cfg.demos = 10;

    // Assemble the model by hand so the freshly pretrained base is used
    // directly instead of going through a bundle file.
    let base_bundle = adapterkit::bundle::bundle_from_registry(
        &outcome.registry,
        OriginFilter::Only(Origin::Base),
        vec![("backbone".into(), "conv".into())],
    )?;
    let (mut model, _plan) = build_model(&cfg, Some(&base_bundle), 1)?;
    let hash_before = registry_payload_sha256(&model.registry, OriginFilter::Only(Origin::Base));

    let env = Env::new(TaskKind::Reach);
    let demos = collect_demos(&env, cfg.demos, cfg.demo_seed);
    let tc = TrainConfig {
        learning_rate: 1e-3,
        total_steps: 400,
        warmup_steps: 40,
        batch_size: 8,
        seed: 1,
        freeze_mode: FreezeMode::Adapters,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &demos.to_train_set(), &tc, None)?;
    println!("final training loss: {:.5}", report.final_loss);

    let hash_after = registry_payload_sha256(&model.registry, OriginFilter::Only(Origin::Base));
    println!(
        "base payload hash unchanged after training: {}",
        hash_before == hash_after
    );

    let policy = TrainedPolicy { model: &model };
    let (mean, _) = evaluate(&env, &policy, 20, 500_000)?;
    println!("mean success over 20 rollouts: {mean:.2}");
    Ok(())
}
