//! Inject a full adapter plan into a frozen backbone and show that the
//! adapted model is bit-identical to the base model at initialization,
//! and that ejecting the adapters restores it exactly.
//!
//!     cargo run --release --example zero_effect_injection

use adapterkit::adapter::{count_trainable, eject, inject, plan_placement};
use adapterkit::backbone::{build_backbone, forward_features, Backbone, NoHooks, VitBackboneSpec};
use adapterkit::graph::Graph;
use adapterkit::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> adapterkit::Result<()> {
    let backbone = Backbone::Vit(VitBackboneSpec::default());
    let base = build_backbone::<f32>(&backbone, 7)?;

    let mut adapted = base.clone();
    let plan = plan_placement(&backbone, true, true, true, 32)?;
    let set = inject(&backbone, &plan, &mut adapted, 99)?;
    let counts = count_trainable(&adapted);
    println!(
        "injected {} adapters + {} norm deltas: {} adapter params ({:.2}% of base)",
        set.instances.len(),
        set.norm_deltas.len(),
        counts.adapter,
        100.0 * counts.adapter as f64 / counts.base as f64
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let image = Tensor::from_fn(&[1, 3, 64, 64], |_| rng.random_range(0.0..1.0f32));
        let run = |reg, hooks: &dyn adapterkit::backbone::SiteHooks<f32>| {
            let mut g = Graph::inference(reg);
            let x = g.input(image.clone());
            let y = forward_features(&backbone, &mut g, x, hooks).unwrap();
            g.value(y).clone()
        };
        let base_out = run(&base, &NoHooks);
        let adapted_out = run(&adapted, &set);
        worst = worst.max(base_out.max_abs_diff(&adapted_out));
    }
    println!("max |adapted - base| over 20 random inputs at init: {worst}");
    assert_eq!(worst, 0.0, "zero-at-init must be exact");

    eject(&set, &mut adapted)?;
    println!(
        "ejected adapters: registry back to {} tensors (base had {})",
        adapted.len(),
        base.len()
    );
    Ok(())
}
