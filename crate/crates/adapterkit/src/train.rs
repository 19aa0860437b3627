//! Behavior-cloning optimization: MSE regression onto expert actions with
//! Adam, decoupled weight decay, global gradient-norm clipping and a cosine
//! learning-rate schedule with linear warmup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{GradMap, Graph};
use crate::policy::PolicyModel;
use crate::registry::{Origin, ParameterRegistry};
use crate::tensor::Tensor;

/// Which parameters the run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreezeMode {
    /// Head only; the backbone is a fixed feature extractor.
    FrozenFeatures,
    /// Adapters and head; every base parameter stays bit-identical.
    Adapters,
    /// Everything.
    FullFinetune,
    /// Everything, starting from a randomly re-initialized base.
    Scratch,
}

impl FreezeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FreezeMode::FrozenFeatures => "frozen",
            FreezeMode::Adapters => "adapters",
            FreezeMode::FullFinetune => "full-ft",
            FreezeMode::Scratch => "scratch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "frozen" => Some(FreezeMode::FrozenFeatures),
            "adapters" => Some(FreezeMode::Adapters),
            "full-ft" => Some(FreezeMode::FullFinetune),
            "scratch" => Some(FreezeMode::Scratch),
            _ => None,
        }
    }

    fn origin_trainable(self, origin: Origin) -> bool {
        match self {
            FreezeMode::FrozenFeatures => origin == Origin::Head,
            FreezeMode::Adapters => origin != Origin::Base,
            FreezeMode::FullFinetune | FreezeMode::Scratch => true,
        }
    }
}

/// Set trainable flags across a registry according to the freeze mode.
pub fn apply_freeze_mode<E: Element>(registry: &mut ParameterRegistry<E>, mode: FreezeMode) {
    for p in registry.iter_mut() {
        p.trainable = mode.origin_trainable(p.origin);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_norm_clip: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub freeze_mode: FreezeMode,
    /// Record a curve point every this many steps (the final step is always
    /// recorded).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            grad_norm_clip: 1.0,
            total_steps: 20_000,
            warmup_steps: 1_000,
            batch_size: 64,
            seed: 0,
            freeze_mode: FreezeMode::Adapters,
            log_every: 100,
        }
    }
}

/// Linear warmup to the peak rate, then a cosine decay to zero.
pub fn cosine_lr(step: usize, cfg: &TrainConfig) -> f64 {
    let peak = cfg.learning_rate;
    if step < cfg.warmup_steps {
        return peak * step as f64 / cfg.warmup_steps as f64;
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scale gradients so the global L2 norm over the whole trainable set does
/// not exceed `clip`. Returns the pre-clip norm. Non-finite gradients are an
/// error naming the parameter.
pub fn clip_grad_norm<E: Element>(grads: &mut GradMap<E>, clip: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    for name in &names {
        for &g in grads[*name].data() {
            let g = g.to_f64();
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient((*name).clone()));
            }
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > clip {
        let scale = E::from_f64(clip / norm);
        let scaled: Vec<(String, Tensor<E>)> = grads
            .iter()
            .map(|(k, v)| (k.clone(), v.map(|g| g * scale)))
            .collect();
        for (k, v) in scaled {
            grads.insert(k, v);
        }
    }
    Ok(norm)
}

/// Adam with decoupled weight decay. Moment buffers exist only for the
/// parameters the optimizer was built over (the trainable set). Decay
/// applies to weight matrices only, never to biases, norm scales/offsets or
/// their deltas (anything one-dimensional).
pub struct Adam<E: Element> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: Vec<(String, Tensor<E>, Tensor<E>)>,
    t: usize,
}

impl<E: Element> Adam<E> {
    pub fn new(registry: &ParameterRegistry<E>) -> Self {
        let state = registry
            .iter()
            .filter(|p| p.trainable)
            .map(|p| {
                (
                    p.name.clone(),
                    Tensor::zeros(p.value.shape()),
                    Tensor::zeros(p.value.shape()),
                )
            })
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state,
            t: 0,
        }
    }

    pub fn tracked_params(&self) -> Vec<&str> {
        self.state.iter().map(|(n, _, _)| n.as_str()).collect()
    }

    pub fn step(
        &mut self,
        registry: &mut ParameterRegistry<E>,
        grads: &GradMap<E>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (E::from_f64(self.beta1), E::from_f64(self.beta2));
        let (ob1, ob2) = (E::from_f64(1.0 - self.beta1), E::from_f64(1.0 - self.beta2));
        let lr_e = E::from_f64(lr);
        let eps = E::from_f64(self.eps);
        let (ibc1, ibc2) = (E::from_f64(1.0 / bc1), E::from_f64(1.0 / bc2));

        for (name, m, v) in &mut self.state {
            let Some(grad) = grads.get(name) else {
                continue;
            };
            let param = registry.get_mut(name)?;
            let decay = if param.value.ndim() >= 2 {
                E::from_f64(lr * weight_decay)
            } else {
                E::ZERO
            };
            let n = param.value.numel();
            let mut new_m = Vec::with_capacity(n);
            let mut new_v = Vec::with_capacity(n);
            let mut new_w = Vec::with_capacity(n);
            for i in 0..n {
                let g = grad.data()[i];
                let mi = b1 * m.data()[i] + ob1 * g;
                let vi = b2 * v.data()[i] + ob2 * g * g;
                let mhat = mi * ibc1;
                let vhat = vi * ibc2;
                let mut w = param.value.data()[i];
                w = w - lr_e * mhat / (vhat.sqrt() + eps);
                w = w - decay * w;
                new_m.push(mi);
                new_v.push(vi);
                new_w.push(w);
            }
            *m = Tensor::from_vec(m.shape(), new_m)?;
            *v = Tensor::from_vec(v.shape(), new_v)?;
            param.value = Tensor::from_vec(param.value.shape(), new_w)?;
        }
        Ok(())
    }
}

/// One pooled (observation, action) frame for behavior cloning.
#[derive(Debug, Clone)]
pub struct TrainFrame<E: Element> {
    pub image: Tensor<E>,
    pub proprio: Vec<E>,
    pub action: Vec<E>,
}

/// Flattened demonstration pool the trainer samples from, uniformly with
/// replacement.
#[derive(Debug, Clone)]
pub struct TrainSet<E: Element> {
    pub frames: Vec<TrainFrame<E>>,
    pub action_dim: usize,
}

impl<E: Element> TrainSet<E> {
    fn sample_batch(&self, rng: &mut ChaCha8Rng, batch: usize, proprio: bool) -> Batch<E> {
        let image_shape = self.frames[0].image.shape();
        let pixels: usize = image_shape.iter().product();
        let mut images = Vec::with_capacity(batch * pixels);
        let mut props = Vec::new();
        let mut actions = Vec::with_capacity(batch * self.action_dim);
        let mut full_shape = vec![batch];
        full_shape.extend_from_slice(image_shape);
        for _ in 0..batch {
            let frame = &self.frames[rng.random_range(0..self.frames.len())];
            images.extend_from_slice(frame.image.data());
            if proprio {
                props.extend_from_slice(&frame.proprio);
            }
            actions.extend_from_slice(&frame.action);
        }
        Batch {
            images: Tensor::from_vec(&full_shape, images).expect("frame shapes agree"),
            proprio: if proprio {
                let dim = props.len() / batch;
                Some(Tensor::from_vec(&[batch, dim], props).expect("proprio shapes agree"))
            } else {
                None
            },
            actions: Tensor::from_vec(&[batch, self.action_dim], actions)
                .expect("action dims agree"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch<E: Element> {
    pub images: Tensor<E>,
    pub proprio: Option<Tensor<E>>,
    pub actions: Tensor<E>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub final_loss: f64,
    pub steps: usize,
}

/// Run behavior cloning. Only the trainable set (per `cfg.freeze_mode`) is
/// modified; optimizer state exists only for that set; identical configs
/// and seeds reproduce bit-identical parameters.
pub fn train<E: Element>(
    model: &mut PolicyModel<E>,
    demos: &TrainSet<E>,
    cfg: &TrainConfig,
    mut on_step: Option<&mut dyn FnMut(usize, &PolicyModel<E>) -> Result<()>>,
) -> Result<TrainReport> {
    if demos.frames.is_empty() {
        return Err(Error::EmptyDemoSet);
    }
    if cfg.warmup_steps >= cfg.total_steps {
        return Err(Error::Config(format!(
            "warmup_steps {} must be below total_steps {}",
            cfg.warmup_steps, cfg.total_steps
        )));
    }
    apply_freeze_mode(&mut model.registry, cfg.freeze_mode);
    let mut optimizer = Adam::new(&model.registry);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();

    for step in 0..cfg.total_steps {
        let batch = demos.sample_batch(&mut rng, cfg.batch_size, model.head.proprio);
        let (loss_value, mut grads) = {
            let mut g = Graph::new(&model.registry);
            let images = g.input(batch.images);
            let proprio = batch.proprio.map(|p| g.input(p));
            let target = g.input(batch.actions);
            let pred = model.forward(&mut g, images, proprio)?;
            let loss = g.mse(pred, target)?;
            let value = g.value(loss).item().to_f64();
            (value, g.backward(loss)?)
        };
        if !loss_value.is_finite() {
            return Err(Error::NanLoss {
                step,
                loss: loss_value,
            });
        }
        let grad_norm = clip_grad_norm(&mut grads, cfg.grad_norm_clip)?;
        let lr = cosine_lr(step, cfg);
        optimizer.step(&mut model.registry, &grads, lr, cfg.weight_decay)?;

        if step % cfg.log_every == 0 || step + 1 == cfg.total_steps {
            report.curve.push(CurvePoint {
                step,
                loss: loss_value,
                lr,
                grad_norm,
            });
        }
        report.final_loss = loss_value;
        if let Some(cb) = on_step.as_deref_mut() {
            cb(step, model)?;
        }
    }
    report.steps = cfg.total_steps;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{inject, plan_placement, AdapterPlan, AdapterSet};
    use crate::backbone::{build_backbone, Backbone, ConvBackboneSpec};
    use crate::policy::{build_head, HeadConfig, Reduction};

    #[test]
    fn cosine_schedule_boundaries() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            total_steps: 1000,
            warmup_steps: 100,
            ..Default::default()
        };
        assert_eq!(cosine_lr(100, &cfg), 1e-3); // end of warmup: peak
        assert!(cosine_lr(1000, &cfg).abs() < 1e-18); // cos(pi) = -1
        let mid = cosine_lr(100 + 450, &cfg); // halfway through decay
        assert!((mid - 5e-4).abs() < 1e-12);
        assert!((cosine_lr(50, &cfg) - 5e-4).abs() < 1e-12); // warmup is linear
    }

    #[test]
    fn clip_halves_when_norm_is_twice_the_limit() {
        let mut grads = GradMap::new();
        grads.insert("a".into(), Tensor::<f64>::from_vec(&[2], vec![1.2, 1.6]).unwrap());
        // norm = 2.0
        let n = clip_grad_norm(&mut grads, 1.0).unwrap();
        assert!((n - 2.0).abs() < 1e-12);
        assert_eq!(grads["a"].data(), &[0.6, 0.8]);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut grads = GradMap::new();
        grads.insert("a".into(), Tensor::<f64>::from_vec(&[2], vec![0.3, 0.4]).unwrap());
        let n = clip_grad_norm(&mut grads, 1.0).unwrap();
        assert!((n - 0.5).abs() < 1e-12);
        assert_eq!(grads["a"].data(), &[0.3, 0.4]);
    }

    #[test]
    fn post_clip_norm_is_min_of_norm_and_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut grads = GradMap::new();
            for name in ["a", "b", "c"] {
                let data: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
                grads.insert(name.into(), Tensor::from_vec(&[5], data).unwrap());
            }
            let clip = rng.random_range(0.5..3.0);
            let before = clip_grad_norm(&mut grads, clip).unwrap();
            let after: f64 = grads
                .values()
                .flat_map(|t| t.data().iter().map(|g| g * g))
                .sum::<f64>()
                .sqrt();
            assert!((after - before.min(clip)).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut grads = GradMap::new();
        grads.insert("bad.w".into(), Tensor::<f64>::from_vec(&[1], vec![f64::NAN]).unwrap());
        match clip_grad_norm(&mut grads, 1.0) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "bad.w"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    fn tiny_conv_model(mode: FreezeMode, seed: u64) -> PolicyModel<f32> {
        let backbone = Backbone::Conv(ConvBackboneSpec::default());
        let mut registry = build_backbone::<f32>(&backbone, seed).unwrap();
        let adapters = if mode == FreezeMode::Adapters {
            let plan = plan_placement(&backbone, true, true, true, 8).unwrap();
            inject(&backbone, &plan, &mut registry, seed ^ 1).unwrap()
        } else {
            inject(&backbone, &AdapterPlan::empty(), &mut registry, 0).unwrap()
        };
        let head = HeadConfig {
            reduction: Reduction::SpatialProjection,
            top_adapter: true,
            action_dim: 2,
            ..HeadConfig::new(2)
        };
        build_head(backbone.feature_geometry(), &head, &mut registry, seed ^ 2).unwrap();
        PolicyModel { backbone, adapters: AdapterSet { ..adapters }, head, registry }
    }

    fn tiny_set(n: usize, seed: u64) -> TrainSet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..n)
            .map(|_| TrainFrame {
                image: Tensor::from_fn(&[3, 64, 64], |_| rng.random_range(0.0..1.0)),
                proprio: vec![0.0; 4],
                action: vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
            })
            .collect();
        TrainSet { frames, action_dim: 2 }
    }

    #[test]
    fn empty_demo_set_is_an_error() {
        let mut model = tiny_conv_model(FreezeMode::FrozenFeatures, 1);
        let demos = TrainSet::<f32> { frames: Vec::new(), action_dim: 2 };
        let cfg = TrainConfig { total_steps: 2, warmup_steps: 0, ..Default::default() };
        assert!(matches!(
            train(&mut model, &demos, &cfg, None),
            Err(Error::EmptyDemoSet)
        ));
    }

    #[test]
    fn single_demo_overfit_reaches_small_mse() {
        let mut model = tiny_conv_model(FreezeMode::FrozenFeatures, 5);
        let demos = tiny_set(4, 6);
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            total_steps: 200,
            warmup_steps: 10,
            batch_size: 4,
            seed: 7,
            freeze_mode: FreezeMode::FrozenFeatures,
            ..Default::default()
        };
        let report = train(&mut model, &demos, &cfg, None).unwrap();
        assert!(
            report.final_loss < 1e-3,
            "overfit smoke test: final MSE {} too large",
            report.final_loss
        );
    }

    #[test]
    fn adapters_mode_leaves_base_bit_identical_and_state_lean() {
        let mut model = tiny_conv_model(FreezeMode::Adapters, 11);
        let before: Vec<(String, Tensor<f32>)> = model
            .registry
            .iter()
            .filter(|p| p.origin == Origin::Base)
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        let demos = tiny_set(6, 12);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            total_steps: 12,
            warmup_steps: 2,
            batch_size: 3,
            seed: 1,
            freeze_mode: FreezeMode::Adapters,
            ..Default::default()
        };
        train(&mut model, &demos, &cfg, None).unwrap();
        for (name, value) in before {
            assert!(
                model.registry.get(&name).unwrap().value.bit_eq(&value),
                "base parameter {name} moved in adapters mode"
            );
        }
        // Adapter and head parameters did move.
        assert!(model
            .registry
            .iter()
            .filter(|p| p.origin != Origin::Base)
            .any(|p| p.grad.is_none()));

        let optimizer = Adam::new(&model.registry);
        let tracked = optimizer.tracked_params();
        assert!(tracked.iter().all(|n| {
            let p = model.registry.get(n).unwrap();
            p.origin == Origin::Adapter || p.origin == Origin::Head
        }));
        let trainable_count = model.registry.iter().filter(|p| p.trainable).count();
        assert_eq!(tracked.len(), trainable_count);
    }

    #[test]
    fn same_seed_reproduces_bit_identical_parameters() {
        let run = || {
            let mut model = tiny_conv_model(FreezeMode::Adapters, 21);
            let demos = tiny_set(5, 22);
            let cfg = TrainConfig {
                learning_rate: 1e-3,
                total_steps: 8,
                warmup_steps: 1,
                batch_size: 2,
                seed: 33,
                freeze_mode: FreezeMode::Adapters,
                ..Default::default()
            };
            train(&mut model, &demos, &cfg, None).unwrap();
            model
                .registry
                .iter()
                .filter(|p| p.trainable)
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect::<Vec<_>>()
        };
        let a = run();
        let b = run();
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert!(ta.bit_eq(tb), "{na} differs across identical runs");
        }
    }

    #[test]
    fn warmup_must_stay_below_total_steps() {
        let mut model = tiny_conv_model(FreezeMode::FrozenFeatures, 1);
        let demos = tiny_set(2, 2);
        let cfg = TrainConfig { total_steps: 5, warmup_steps: 5, ..Default::default() };
        assert!(train(&mut model, &demos, &cfg, None).is_err());
    }
}
