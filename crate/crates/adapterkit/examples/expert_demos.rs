//! Collect scripted-expert demonstrations, write them to the checksummed
//! demo format, read them back, and report expert reliability.
//!
//!     cargo run --release --example expert_demos

use adapterkit::env::{collect_demos, evaluate, load_demoset, save_demoset, Env, ScriptedExpert, TaskKind};

fn main() -> adapterkit::Result<()> {
    for kind in [TaskKind::Reach, TaskKind::Push, TaskKind::Stack2d] {
        let env = Env::new(kind);
        let (rate, _) = evaluate(&env, &ScriptedExpert, 100, 1_000)?;
        println!("{:<8} expert success over 100 rollouts: {rate:.2}", kind.as_str());
    }

    let env = Env::new(TaskKind::Push);
    let demos = collect_demos(&env, 10, 9_000);
    println!(
        "collected {} push episodes, {} frames, seeds {}..={}",
        demos.episodes.len(),
        demos.frame_count(),
        demos.seed_first,
        demos.seed_last
    );

    let dir = std::env::temp_dir().join("adapterkit_demo_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("push.adpd");
    save_demoset(&demos, &path)?;
    let loaded = load_demoset(&path)?;
    println!(
        "round-tripped {} episodes through {} ({} bytes, checksum verified)",
        loaded.episodes.len(),
        path.display(),
        std::fs::metadata(&path)?.len()
    );
    Ok(())
}
