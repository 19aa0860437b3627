//! Property tests over the serialization, schedule, and clipping
//! invariants.

use adapterkit::bundle::{decode_bundle, encode_bundle, BundleTensor, WeightBundle};
use adapterkit::element::DType;
use adapterkit::env::{Env, RandomController, TaskKind};
use adapterkit::graph::GradMap;
use adapterkit::tensor::Tensor;
use adapterkit::train::{clip_grad_norm, cosine_lr, TrainConfig};
use proptest::prelude::*;

fn tensor_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<f32>)> {
    (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(a, b, c)| {
        let shape = vec![a, b, c];
        let n = a * b * c;
        (Just(shape), proptest::collection::vec(-1e3f32..1e3, n..=n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bundle_encode_decode_is_bit_identical(tensors in proptest::collection::vec(tensor_strategy(), 1..4)) {
        let bundle = WeightBundle {
            meta: vec![("k".into(), "v".into())],
            tensors: tensors
                .into_iter()
                .enumerate()
                .map(|(i, (shape, data))| {
                    let t = Tensor::from_vec(&shape, data).unwrap();
                    BundleTensor {
                        name: format!("t{i}"),
                        dtype: DType::F32,
                        shape,
                        bytes: t.to_le_bytes(),
                    }
                })
                .collect(),
        };
        let decoded = decode_bundle(&encode_bundle(&bundle), "prop").unwrap();
        prop_assert_eq!(decoded.tensors.len(), bundle.tensors.len());
        for (a, b) in decoded.tensors.iter().zip(&bundle.tensors) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.shape, &b.shape);
            prop_assert_eq!(&a.bytes, &b.bytes);
        }
        // And the encoding itself is deterministic.
        prop_assert_eq!(encode_bundle(&bundle), encode_bundle(&decoded));
    }

    #[test]
    fn clipped_norm_is_min_of_norm_and_limit(
        grads in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 1..6), 1..4),
        clip in 0.01f64..5.0,
    ) {
        let mut map = GradMap::new();
        for (i, g) in grads.iter().enumerate() {
            map.insert(format!("p{i}"), Tensor::from_vec(&[g.len()], g.clone()).unwrap());
        }
        let before = clip_grad_norm(&mut map, clip).unwrap();
        let after: f64 = map
            .values()
            .flat_map(|t| t.data().iter().map(|g| g * g))
            .sum::<f64>()
            .sqrt();
        prop_assert!((after - before.min(clip)).abs() < 1e-6,
            "post-clip norm {after} vs min({before}, {clip})");
    }

    #[test]
    fn cosine_schedule_is_bounded_and_decays(
        total in 10usize..5000,
        warmup_frac in 0.0f64..0.9,
        peak in 1e-6f64..1.0,
    ) {
        let cfg = TrainConfig {
            learning_rate: peak,
            total_steps: total,
            warmup_steps: (total as f64 * warmup_frac) as usize,
            ..TrainConfig::default()
        };
        let mut last = f64::INFINITY;
        for step in 0..=total {
            let lr = cosine_lr(step, &cfg);
            prop_assert!(lr >= -1e-18 && lr <= peak + 1e-18, "lr {lr} out of [0, {peak}]");
            if step > cfg.warmup_steps {
                prop_assert!(lr <= last + 1e-15, "decay is monotone after warmup");
            }
            last = lr;
        }
        prop_assert!(cosine_lr(total, &cfg).abs() < 1e-15);
    }

    #[test]
    fn episodes_are_pure_functions_of_seed(seed in 0u64..10_000) {
        let env = Env::new(TaskKind::Push);
        let ctrl = RandomController { seed: seed ^ 0xabc };
        let run = || {
            let (mut state, mut obs) = env.reset(seed);
            let mut positions = Vec::new();
            for _ in 0..12 {
                let a = adapterkit::env::Controller::act(&ctrl, &env.task, &state, &obs);
                let (s, o, _) = env.step(&state, &a);
                positions.push((s.effector, s.objects[0].pos));
                state = s;
                obs = o;
            }
            positions
        };
        prop_assert_eq!(run(), run());
    }
}
