//! Central-difference oracle for gradient verification.
//!
//! Runs in 64-bit only; the analytic path it checks is the same code that
//! trains in 32-bit.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::registry::{Origin, ParameterRegistry, SectionTag};
use crate::tensor::Tensor;

/// Max relative error between the analytic gradient of `f` with respect to
/// the named registry parameter and a central finite difference with
/// perturbation `eps`.
///
/// `f` builds a scalar loss on the graph it is given (binding whatever
/// registry parameters it needs). It is called many times and must be
/// deterministic; a bitwise disagreement between two forward passes is an
/// error.
///
/// The error metric per parameter entry is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn finite_difference_check<F>(
    registry: &ParameterRegistry<f64>,
    param: &str,
    f: F,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>) -> Result<NodeId>,
{
    let loss_at = |reg: &ParameterRegistry<f64>| -> Result<f64> {
        let mut g = Graph::new(reg);
        let loss = f(&mut g)?;
        if g.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(g.value(loss).shape().to_vec()));
        }
        Ok(g.value(loss).item())
    };

    // Determinism probe: two independent forward passes must agree bitwise.
    let first = loss_at(registry)?;
    let second = loss_at(registry)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic);
    }

    // Analytic gradient.
    let value = registry.get(param)?.value.clone();
    let analytic = {
        let mut g = Graph::new(registry);
        let loss = f(&mut g)?;
        let grads = g.backward(loss)?;
        grads
            .get(param)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(value.shape()))
    };

    let mut worst = 0.0f64;
    let base = value.data().to_vec();
    for i in 0..base.len() {
        let numeric = {
            let mut plus = base.clone();
            plus[i] += eps;
            let mut minus = base.clone();
            minus[i] -= eps;
            let mut reg = registry.clone();
            reg.get_mut(param)?.value = Tensor::from_vec(value.shape(), plus)?;
            let lp = loss_at(&reg)?;
            reg.get_mut(param)?.value = Tensor::from_vec(value.shape(), minus)?;
            let lm = loss_at(&reg)?;
            (lp - lm) / (2.0 * eps)
        };
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// Registry holding a single trainable parameter named `"p"`, for probing
/// individual ops.
pub fn probe_registry(value: Tensor<f64>) -> ParameterRegistry<f64> {
    let mut reg = ParameterRegistry::new();
    reg.register("p", value, SectionTag::Middle, Origin::Base, true)
        .expect("fresh registry");
    reg
}
