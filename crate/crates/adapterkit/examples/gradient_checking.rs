//! Verify analytic gradients against central finite differences, in 64-bit,
//! for a few representative computations.
//!
//!     cargo run --release --example gradient_checking

use adapterkit::gradcheck::{finite_difference_check, probe_registry};
use adapterkit::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> adapterkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let rand_t = |rng: &mut ChaCha8Rng, shape: &[usize]| {
        Tensor::<f64>::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    };

    // Quadratic: central differences are exact.
    let reg = probe_registry(Tensor::from_vec(&[1], vec![3.0])?);
    let err = finite_difference_check(
        &reg,
        "p",
        |g| {
            let p = g.param("p")?;
            let sq = g.elem_mul(p, p)?;
            g.sum(sq)
        },
        1e-5,
    )?;
    println!("w^2 at w=3:                 max rel err {err:.2e}");

    // Softmax cross-entropy on random logits.
    let logits = rand_t(&mut rng, &[1, 4]);
    let target = Tensor::from_vec(&[1, 4], vec![0.0, 1.0, 0.0, 0.0])?;
    let reg = probe_registry(logits);
    let err = finite_difference_check(
        &reg,
        "p",
        move |g| {
            let p = g.param("p")?;
            let probs = g.softmax(p, 1)?;
            let logp = g.log(probs)?;
            let t = g.input(target.clone());
            let picked = g.elem_mul(logp, t)?;
            let s = g.sum(picked)?;
            g.scalar_mul(s, -1.0)
        },
        1e-5,
    )?;
    println!("softmax cross-entropy:      max rel err {err:.2e}");

    // Layer norm followed by a linear map.
    let x = rand_t(&mut rng, &[2, 6]);
    let w = rand_t(&mut rng, &[6, 3]);
    let reg = probe_registry(x);
    let err = finite_difference_check(
        &reg,
        "p",
        move |g| {
            let p = g.param("p")?;
            let scale = g.input(Tensor::full(&[6], 1.0));
            let offset = g.input(Tensor::zeros(&[6]));
            let n = g.layer_norm(p, scale, offset, 1)?;
            let ww = g.input(w.clone());
            let y = g.matmul(n, ww)?;
            let sq = g.elem_mul(y, y)?;
            g.mean(sq)
        },
        1e-5,
    )?;
    println!("layer-norm + linear:        max rel err {err:.2e}");

    // Attention block gradient through q.
    let q = rand_t(&mut rng, &[1, 4, 8]);
    let k = rand_t(&mut rng, &[1, 4, 8]);
    let v = rand_t(&mut rng, &[1, 4, 8]);
    let reg = probe_registry(q);
    let err = finite_difference_check(
        &reg,
        "p",
        move |g| {
            let p = g.param("p")?;
            let kk = g.input(k.clone());
            let vv = g.input(v.clone());
            let y = g.sdpa(p, kk, vv, 2)?;
            let sq = g.elem_mul(y, y)?;
            g.mean(sq)
        },
        1e-5,
    )?;
    println!("scaled dot-product attn:    max rel err {err:.2e}");
    Ok(())
}
