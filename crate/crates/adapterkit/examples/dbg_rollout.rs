use adapterkit::adapter::plan_from_text;
use adapterkit::backbone::BackboneKind;
use adapterkit::bundle::*;
use adapterkit::env::{collect_demos, Controller, Env, TaskKind};
use adapterkit::policy::build_head;
use adapterkit::registry::{Origin, OriginFilter};
use adapterkit::runner::TrainedPolicy;
use std::path::PathBuf;

fn main() -> adapterkit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let base_path = PathBuf::from(&args[0]);
    let run_dir = PathBuf::from(&args[1]);
    let task = TaskKind::parse(&args[2]).unwrap();

    let base = load_bundle(&base_path)?;
    let backbone = backbone_of_kind(BackboneKind::Conv);
    let mut registry = adapterkit::backbone::build_backbone::<f32>(&backbone, 0)?;
    apply_bundle(&base, &mut registry, OriginFilter::Only(Origin::Base))?;
    let plan = plan_from_text(&std::fs::read_to_string(run_dir.join("plan.txt"))?)?;
    let adapters = adapterkit::adapter::inject(&backbone, &plan, &mut registry, 0)?;
    if run_dir.join("adapters.adpb").exists() {
        apply_bundle(&load_bundle(&run_dir.join("adapters.adpb"))?, &mut registry, OriginFilter::Only(Origin::Adapter))?;
    }
    let head_bundle = load_bundle(&run_dir.join("head.adpb"))?;
    let head = head_config_from_meta(&head_bundle)?;
    build_head(backbone.feature_geometry(), &head, &mut registry, 0)?;
    apply_bundle(&head_bundle, &mut registry, OriginFilter::Only(Origin::Head))?;
    let model = adapterkit::policy::PolicyModel { backbone, adapters, head, registry };
    let policy = TrainedPolicy { model: &model };

    // Open-loop agreement on training-distribution frames.
    let env = Env::new(task);
    let demos = collect_demos(&env, 3, 9_000);
    let mut err = vec![0.0f64; env.task.action_dim];
    let mut n = 0;
    for ep in &demos.episodes {
        for f in &ep.frames {
            let a = model.act(&f.image, None)?;
            for d in 0..a.len() {
                err[d] += (a[d] as f64 - f.action[d] as f64).abs();
            }
            n += 1;
        }
    }
    for e in &mut err { *e /= n as f64; }
    println!("open-loop mean |policy - expert| per dim over {n} demo frames: {err:?}");

    // Closed-loop trace.
    for seed in [500_000u64, 500_001] {
        let (mut state, mut obs) = env.reset(seed);
        println!("-- seed {seed}: block {:?} goal {:?} eff {:?}", state.objects.first().map(|o| o.pos), state.goal, state.effector);
        for t in 0..env.task.horizon {
            let a = policy.act(&env.task, &state, &obs);
            let (s, o, done) = env.step(&state, &a);
            if t % 10 == 0 || done {
                println!(
                    "t{t:3} eff ({:.3},{:.3}) obj ({:.3},{:.3}) act ({:+.2},{:+.2}) done {done}",
                    s.effector[0], s.effector[1],
                    s.objects.first().map(|o| o.pos[0]).unwrap_or(-1.0),
                    s.objects.first().map(|o| o.pos[1]).unwrap_or(-1.0),
                    a[0], a[1]
                );
            }
            if done { break; }
            state = s;
            obs = o;
        }
    }
    Ok(())
}
