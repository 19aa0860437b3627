//! Shared test support: randomized finite-difference instances per op kind.

#![allow(dead_code)]

use adapterkit::gradcheck::finite_difference_check;
use adapterkit::graph::{Graph, NodeId};
use adapterkit::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Uniform values in [-1, -0.1] u [0.1, 1]: away from zero so kinked ops
/// (relu) see no crossing within the probe width.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, uniform(rng, n, lo, hi)).unwrap()
}

/// Reduce an arbitrary op output to a scalar with a fixed random weighting,
/// so every output entry influences the loss.
pub fn weighted_sum(
    g: &mut Graph<f64>,
    out: NodeId,
    rng: &mut ChaCha8Rng,
) -> adapterkit::Result<NodeId> {
    let shape = g.value(out).shape().to_vec();
    let w = g.input(tensor(rng, &shape, -1.0, 1.0));
    let prod = g.elem_mul(out, w)?;
    g.sum(prod)
}

/// One finite-difference instance: builds the loss via `f` (which receives
/// the probe parameter node), checks the gradient with respect to it.
pub fn check_instance<F>(label: &str, value: Tensor<f64>, f: F)
where
    F: Fn(&mut Graph<f64>, NodeId) -> adapterkit::Result<NodeId>,
{
    let reg = adapterkit::gradcheck::probe_registry(value);
    let err = finite_difference_check(
        &reg,
        "p",
        |g| {
            let p = g.param("p")?;
            f(g, p)
        },
        FD_EPS,
    )
    .unwrap_or_else(|e| panic!("{label}: finite difference check failed to run: {e}"));
    assert!(
        err < FD_TOL,
        "{label}: max relative error {err} exceeds {FD_TOL}"
    );
}

/// Run `per_case` instances of every op kind; returns the list of op names
/// exercised so callers can report coverage.
pub fn run_op_gradcheck_suite(per_case: usize, seed: u64) -> Vec<&'static str> {
    let mut exercised = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // matmul: parameter on each side, 2-D by 2-D, batched by 2-D, batched pair.
    for i in 0..per_case {
        let (m, k, n) = (
            rng.random_range(1..4usize),
            rng.random_range(1..4usize),
            rng.random_range(1..4usize),
        );
        let other = tensor(&mut rng, &[k, n], -1.0, 1.0);
        let wrng = rng.clone();
        check_instance("matmul/lhs", tensor(&mut rng, &[m, k], -1.0, 1.0), move |g, p| {
            let b = g.input(other.clone());
            let y = g.matmul(p, b)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let lhs = tensor(&mut rng, &[2, m, k], -1.0, 1.0);
        let wrng = rng.clone();
        check_instance("matmul/rhs", tensor(&mut rng, &[k, n], -1.0, 1.0), move |g, p| {
            let a = g.input(lhs.clone());
            let y = g.matmul(a, p)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        if i % 2 == 0 {
            let rhs = tensor(&mut rng, &[2, k, n], -1.0, 1.0);
            let wrng = rng.clone();
            check_instance("matmul/batched", tensor(&mut rng, &[2, m, k], -1.0, 1.0), move |g, p| {
                let b = g.input(rhs.clone());
                let y = g.matmul(p, b)?;
                weighted_sum(g, y, &mut wrng.clone())
            });
        }
    }

    exercised.push("matmul");

    // conv2d: parameter as image, kernel, and bias.
    for _ in 0..per_case {
        let (cin, cout) = (rng.random_range(1..3usize), rng.random_range(1..3usize));
        let (h, w) = (rng.random_range(3..6usize), rng.random_range(3..6usize));
        let kside = rng.random_range(1..3usize);
        let stride = rng.random_range(1..3usize);
        let pad = rng.random_range(0..2usize);
        if (h + 2 * pad) < kside || (w + 2 * pad) < kside {
            continue;
        }
        let kern = tensor(&mut rng, &[cout, cin, kside, kside], -1.0, 1.0);
        let img = tensor(&mut rng, &[2, cin, h, w], -1.0, 1.0);
        let bias = tensor(&mut rng, &[cout], -1.0, 1.0);

        let (k2, b2, wrng) = (kern.clone(), bias.clone(), rng.clone());
        check_instance("conv2d/x", img.clone(), move |g, p| {
            let kk = g.input(k2.clone());
            let bb = g.input(b2.clone());
            let y = g.conv2d(p, kk, Some(bb), stride, pad)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let (i2, b2, wrng) = (img.clone(), bias.clone(), rng.clone());
        check_instance("conv2d/kernel", kern.clone(), move |g, p| {
            let xx = g.input(i2.clone());
            let bb = g.input(b2.clone());
            let y = g.conv2d(xx, p, Some(bb), stride, pad)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let (i2, k2, wrng) = (img, kern, rng.clone());
        check_instance("conv2d/bias", bias, move |g, p| {
            let xx = g.input(i2.clone());
            let kk = g.input(k2.clone());
            let y = g.conv2d(xx, kk, Some(p), stride, pad)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
    }
    exercised.push("conv2d");

    // add (including scalar broadcast) and bias-add.
    for _ in 0..per_case {
        let n = rng.random_range(1..8usize);
        let other = tensor(&mut rng, &[n], -1.0, 1.0);
        let wrng = rng.clone();
        check_instance("add", tensor(&mut rng, &[n], -1.0, 1.0), move |g, p| {
            let b = g.input(other.clone());
            let y = g.add(p, b)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let big = tensor(&mut rng, &[n, 3], -1.0, 1.0);
        let wrng = rng.clone();
        check_instance("add/scalar", Tensor::scalar(rng.random_range(-1.0..1.0)), move |g, p| {
            let b = g.input(big.clone());
            let y = g.add(b, p)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let f = rng.random_range(1..5usize);
        let x = tensor(&mut rng, &[3, f], -1.0, 1.0);
        let wrng = rng.clone();
        check_instance("bias-add", tensor(&mut rng, &[f], -1.0, 1.0), move |g, p| {
            let xx = g.input(x.clone());
            let y = g.bias_add(xx, p)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
    }
    exercised.push("add");
    exercised.push("bias-add");

    // scalar-mul, elementwise-mul.
    for _ in 0..per_case {
        let n = rng.random_range(1..8usize);
        let c = rng.random_range(-2.0..2.0);
        let wrng = rng.clone();
        check_instance("scalar-mul", tensor(&mut rng, &[n], -1.0, 1.0), move |g, p| {
            let y = g.scalar_mul(p, c)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let other = tensor(&mut rng, &[n], -1.0, 1.0);
        let wrng = rng.clone();
        check_instance("elementwise-mul", tensor(&mut rng, &[n], -1.0, 1.0), move |g, p| {
            let b = g.input(other.clone());
            let y = g.elem_mul(p, b)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
    }
    exercised.push("scalar-mul");
    exercised.push("elementwise-mul");

    // relu (sampled away from the kink), gelu, log.
    for _ in 0..per_case {
        let n = rng.random_range(1..10usize);
        let v = Tensor::from_vec(&[n], away_from_zero(&mut rng, n)).unwrap();
        let wrng = rng.clone();
        check_instance("relu", v, move |g, p| {
            let y = g.relu(p)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let wrng = rng.clone();
        check_instance("gelu", tensor(&mut rng, &[n], -2.0, 2.0), move |g, p| {
            let y = g.gelu(p)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let wrng = rng.clone();
        check_instance("log", tensor(&mut rng, &[n], 0.5, 2.0), move |g, p| {
            let y = g.log(p)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
    }
    exercised.push("relu");
    exercised.push("gelu");
    exercised.push("log");

    // softmax over a random axis.
    for _ in 0..per_case {
        let shape = [rng.random_range(1..4usize), rng.random_range(2..5usize), rng.random_range(1..4usize)];
        let axis = rng.random_range(0..3usize);
        let wrng = rng.clone();
        check_instance("softmax", tensor(&mut rng, &shape, -2.0, 2.0), move |g, p| {
            let y = g.softmax(p, axis)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
    }
    exercised.push("softmax");

    // layer-norm: parameter as input, scale, offset.
    for _ in 0..per_case {
        let (b, l) = (rng.random_range(1..4usize), rng.random_range(2..6usize));
        let x = tensor(&mut rng, &[b, l], -1.0, 1.0);
        let scale = tensor(&mut rng, &[l], 0.5, 1.5);
        let offset = tensor(&mut rng, &[l], -0.5, 0.5);

        let (s2, o2, wrng) = (scale.clone(), offset.clone(), rng.clone());
        check_instance("layer-norm/x", x.clone(), move |g, p| {
            let ss = g.input(s2.clone());
            let oo = g.input(o2.clone());
            let y = g.layer_norm(p, ss, oo, 1)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let (x2, o2, wrng) = (x.clone(), offset, rng.clone());
        check_instance("layer-norm/scale", scale.clone(), move |g, p| {
            let xx = g.input(x2.clone());
            let oo = g.input(o2.clone());
            let y = g.layer_norm(xx, p, oo, 1)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let (x2, s2, wrng) = (x, scale, rng.clone());
        check_instance("layer-norm/offset", tensor(&mut rng, &[l], -0.5, 0.5), move |g, p| {
            let xx = g.input(x2.clone());
            let ss = g.input(s2.clone());
            let y = g.layer_norm(xx, ss, p, 1)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
    }
    exercised.push("layer-norm");

    // mean-pool.
    for _ in 0..per_case {
        let (kh, kw) = (rng.random_range(1..3usize), rng.random_range(1..3usize));
        let (ho, wo) = (rng.random_range(1..3usize), rng.random_range(1..3usize));
        let shape = [2, kh * ho, kw * wo];
        let wrng = rng.clone();
        check_instance("mean-pool", tensor(&mut rng, &shape, -1.0, 1.0), move |g, p| {
            let y = g.mean_pool(p, kh, kw)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
    }
    exercised.push("mean-pool");

    // reshape, flatten, transpose, concat.
    for _ in 0..per_case {
        let (a, b) = (rng.random_range(1..4usize), rng.random_range(1..4usize));
        let wrng = rng.clone();
        check_instance("reshape", tensor(&mut rng, &[a, b, 2], -1.0, 1.0), move |g, p| {
            let y = g.reshape(p, &[a * b, 2])?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let wrng = rng.clone();
        check_instance("flatten", tensor(&mut rng, &[a, b, 2], -1.0, 1.0), move |g, p| {
            let y = g.flatten(p, 1)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let wrng = rng.clone();
        check_instance("transpose", tensor(&mut rng, &[a, 3, b], -1.0, 1.0), move |g, p| {
            let y = g.transpose(p, 0, 2)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
        let other = tensor(&mut rng, &[a, 2], -1.0, 1.0);
        let wrng = rng.clone();
        check_instance("concat", tensor(&mut rng, &[a, 3], -1.0, 1.0), move |g, p| {
            let b = g.input(other.clone());
            let y = g.concat(&[p, b], 1)?;
            weighted_sum(g, y, &mut wrng.clone())
        });
    }
    exercised.push("reshape");
    exercised.push("flatten");
    exercised.push("transpose");
    exercised.push("concat");

    // scaled-dot-product-attention: parameter as q, k, v.
    for _ in 0..per_case {
        let heads = [1usize, 2][rng.random_range(0..2usize)];
        let n = rng.random_range(2..4usize);
        let f = heads * rng.random_range(1..3usize);
        let q = tensor(&mut rng, &[1, n, f], -1.0, 1.0);
        let k = tensor(&mut rng, &[1, n, f], -1.0, 1.0);
        let v = tensor(&mut rng, &[1, n, f], -1.0, 1.0);
        for role in 0..3 {
            let (q2, k2, v2, wrng) = (q.clone(), k.clone(), v.clone(), rng.clone());
            let probe = [&q, &k, &v][role].clone();
            let label = ["sdpa/q", "sdpa/k", "sdpa/v"][role];
            check_instance(label, probe, move |g, p| {
                let qq = g.input(q2.clone());
                let kk = g.input(k2.clone());
                let vv = g.input(v2.clone());
                let (qq, kk, vv) = match role {
                    0 => (p, kk, vv),
                    1 => (qq, p, vv),
                    _ => (qq, kk, p),
                };
                let y = g.sdpa(qq, kk, vv, heads)?;
                weighted_sum(g, y, &mut wrng.clone())
            });
        }
    }
    exercised.push("scaled-dot-product-attention");

    // sum, mean.
    for _ in 0..per_case {
        let n = rng.random_range(1..8usize);
        check_instance("sum", tensor(&mut rng, &[n], -1.0, 1.0), |g, p| g.sum(p));
        check_instance("mean", tensor(&mut rng, &[n], -1.0, 1.0), |g, p| g.mean(p));
    }
    exercised.push("sum");
    exercised.push("mean");

    exercised
}
