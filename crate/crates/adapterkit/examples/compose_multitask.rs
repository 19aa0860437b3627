//! One frozen base serving three tasks: save per-task adapter and head
//! bundles next to a single base bundle, rebuild each policy through the
//! composite manifest, and compare the on-disk footprint against three
//! full-model copies.
//!
//!     cargo run --release --example compose_multitask

use std::path::PathBuf;

use adapterkit::backbone::BackboneKind;
use adapterkit::bundle::{
    compose, file_sha256, save_manifest, save_registry, CompositeManifest, CompositeTask,
};
use adapterkit::adapter::plan_to_text;
use adapterkit::env::TaskKind;
use adapterkit::registry::{Origin, OriginFilter};
use adapterkit::runner::{build_model, ExperimentConfig};
use adapterkit::tensor::Tensor;
use adapterkit::train::FreezeMode;

fn main() -> adapterkit::Result<()> {
    let dir = std::env::temp_dir().join("adapterkit_compose_example");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir)?;

    // A shared base.
    let backbone = adapterkit::bundle::backbone_of_kind(BackboneKind::Vit);
    let base_reg = adapterkit::backbone::build_backbone::<f32>(&backbone, 11)?;
    let base_path = dir.join("base.adpb");
    let base_bundle = save_registry(
        &base_reg,
        OriginFilter::All,
        vec![("backbone".into(), "vit".into())],
        &base_path,
    )?;

    let mut manifest = CompositeManifest {
        base: PathBuf::from("base.adpb"),
        base_sha256: file_sha256(&base_path)?,
        tasks: Vec::new(),
    };

    let mut task_bytes = 0u64;
    for task in [TaskKind::Reach, TaskKind::Push, TaskKind::Stack2d] {
        let mut cfg = ExperimentConfig::new(
            task,
            BackboneKind::Vit,
            FreezeMode::Adapters,
            dir.clone(),
        );
        cfg.f_prime = 8;
        let (model, plan) = build_model(&cfg, Some(&base_bundle), 5)?;
        let tdir = dir.join(task.as_str());
        std::fs::create_dir_all(&tdir)?;
        save_registry(
            &model.registry,
            OriginFilter::Only(Origin::Adapter),
            vec![],
            &tdir.join("adapters.adpb"),
        )?;
        let head_meta = adapterkit::bundle::head_config_meta(&model.head);
        save_registry(
            &model.registry,
            OriginFilter::Only(Origin::Head),
            head_meta,
            &tdir.join("head.adpb"),
        )?;
        std::fs::write(tdir.join("plan.txt"), plan_to_text(&plan))?;
        task_bytes += std::fs::metadata(tdir.join("adapters.adpb"))?.len();
        task_bytes += std::fs::metadata(tdir.join("head.adpb"))?.len();
        manifest.tasks.push(CompositeTask {
            name: task.as_str().to_string(),
            adapters: PathBuf::from(format!("{}/adapters.adpb", task.as_str())),
            head: PathBuf::from(format!("{}/head.adpb", task.as_str())),
            plan: PathBuf::from(format!("{}/plan.txt", task.as_str())),
        });

        // Verify the composed model is bitwise the in-memory one.
        let manifest_path = dir.join("manifest.txt");
        save_manifest(&manifest, &manifest_path)?;
        let rebuilt = compose(&manifest_path, task.as_str())?;
        let image = Tensor::full(&[3, 64, 64], 0.4f32);
        let a = model.act(&image, None)?;
        let b = rebuilt.act(&image, None)?;
        assert_eq!(a, b, "composed forward must match the in-memory model");
    }

    let base_bytes = std::fs::metadata(&base_path)?.len();
    let composite = base_bytes + task_bytes;
    // A full copy per task would duplicate the base three times.
    let full_each = base_bytes + task_bytes / 3;
    let three_full = 3 * full_each;
    println!("base bundle:      {base_bytes:>10} bytes");
    println!("3 task add-ons:   {task_bytes:>10} bytes");
    println!("composite total:  {composite:>10} bytes");
    println!("3 full models:    {three_full:>10} bytes");
    println!(
        "composite / full: {:.1}%",
        100.0 * composite as f64 / three_full as f64
    );
    Ok(())
}
