//! Forward kernels and vector-Jacobian products for every op kind.
//!
//! Layout conventions: images are [batch, channel, height, width], conv
//! kernels [out, in, kh, kw], token streams [batch, tokens, features].
//! There is no implicit broadcasting except scalar-with-tensor (`Add`) and
//! the dedicated `BiasAdd` op; anything else requires an explicit reshape.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Operation kind plus its attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Leaf holding a constant input tensor.
    Input,
    /// Leaf bound to a named registry parameter.
    Param,
    /// `[.., m, k] x [k, n]` or `[.., m, k] x [.., k, n]` -> `[.., m, n]`.
    MatMul,
    /// Inputs `(x, kernel)` or `(x, kernel, bias)`.
    Conv2d { stride: usize, pad: usize },
    /// Identical shapes, or scalar with tensor.
    Add,
    /// `[.., f] + [f]`, the only non-scalar broadcast in the engine.
    BiasAdd,
    ScalarMul(f64),
    ElemMul,
    Relu,
    /// tanh approximation, so outputs are reproducible from the formula.
    Gelu,
    Log,
    Softmax { axis: usize },
    /// Inputs `(x, scale, offset)`; normalizes along `axis`.
    LayerNorm { axis: usize, eps: f64 },
    /// Non-overlapping window mean over the last two axes.
    MeanPool { kh: usize, kw: usize },
    Reshape { shape: Vec<usize> },
    /// Collapse all axes after the first `keep` into one.
    Flatten { keep: usize },
    /// Swap two axes.
    Transpose { a: usize, b: usize },
    Concat { axis: usize },
    /// Inputs `(q, k, v)` of shape `[batch, n, f]`; `f` split into heads.
    Sdpa { heads: usize },
    /// Full reduction to a scalar.
    Sum,
    Mean,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::MatMul => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Add => "add",
            Op::BiasAdd => "bias-add",
            Op::ScalarMul(_) => "scalar-mul",
            Op::ElemMul => "elementwise-mul",
            Op::Relu => "relu",
            Op::Gelu => "gelu",
            Op::Log => "log",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer-norm",
            Op::MeanPool { .. } => "mean-pool",
            Op::Reshape { .. } => "reshape",
            Op::Flatten { .. } => "flatten",
            Op::Transpose { .. } => "transpose",
            Op::Concat { .. } => "concat",
            Op::Sdpa { .. } => "scaled-dot-product-attention",
            Op::Sum => "sum",
            Op::Mean => "mean",
        }
    }
}

/// Forward evaluation. Returns the output tensor plus any saved activation
/// the backward pass wants (attention probabilities for SDPA).
pub fn eval<E: Element>(op: &Op, inputs: &[&Tensor<E>]) -> Result<(Tensor<E>, Option<Tensor<E>>)> {
    match op {
        Op::Input | Op::Param => unreachable!("leaf ops are not evaluated"),
        Op::MatMul => {
            arity(op, inputs, 2)?;
            matmul(inputs[0], inputs[1]).map(|t| (t, None))
        }
        Op::Conv2d { stride, pad } => {
            if inputs.len() != 2 && inputs.len() != 3 {
                return Err(bad(op, inputs, "expects (x, kernel) or (x, kernel, bias)"));
            }
            conv2d(inputs[0], inputs[1], inputs.get(2).copied(), *stride, *pad).map(|t| (t, None))
        }
        Op::Add => {
            arity(op, inputs, 2)?;
            add(inputs[0], inputs[1]).map(|t| (t, None))
        }
        Op::BiasAdd => {
            arity(op, inputs, 2)?;
            bias_add(inputs[0], inputs[1]).map(|t| (t, None))
        }
        Op::ScalarMul(c) => {
            arity(op, inputs, 1)?;
            let c = E::from_f64(*c);
            Ok((inputs[0].map(|x| mul(x, c)), None))
        }
        Op::ElemMul => {
            arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| mul(x, y)).collect();
            Ok((Tensor::from_vec(a.shape(), data)?, None))
        }
        Op::Relu => {
            arity(op, inputs, 1)?;
            Ok((inputs[0].map(|x| if x > E::ZERO { x } else { E::ZERO }), None))
        }
        Op::Gelu => {
            arity(op, inputs, 1)?;
            Ok((inputs[0].map(gelu_tanh), None))
        }
        Op::Log => {
            arity(op, inputs, 1)?;
            Ok((inputs[0].map(|x| x.ln()), None))
        }
        Op::Softmax { axis } => {
            arity(op, inputs, 1)?;
            softmax(inputs[0], *axis).map(|t| (t, None))
        }
        Op::LayerNorm { axis, eps } => {
            arity(op, inputs, 3)?;
            layer_norm(inputs[0], inputs[1], inputs[2], *axis, *eps).map(|t| (t, None))
        }
        Op::MeanPool { kh, kw } => {
            arity(op, inputs, 1)?;
            mean_pool(inputs[0], *kh, *kw).map(|t| (t, None))
        }
        Op::Reshape { shape } => {
            arity(op, inputs, 1)?;
            inputs[0].reshaped(shape).map(|t| (t, None))
        }
        Op::Flatten { keep } => {
            arity(op, inputs, 1)?;
            let shape = flatten_shape(inputs[0].shape(), *keep)
                .ok_or_else(|| bad(op, inputs, "keep exceeds rank"))?;
            inputs[0].reshaped(&shape).map(|t| (t, None))
        }
        Op::Transpose { a, b } => {
            arity(op, inputs, 1)?;
            transpose(inputs[0], *a, *b).map(|t| (t, None))
        }
        Op::Concat { axis } => concat(op, inputs, *axis).map(|t| (t, None)),
        Op::Sdpa { heads } => {
            arity(op, inputs, 3)?;
            sdpa(inputs[0], inputs[1], inputs[2], *heads)
        }
        Op::Sum => {
            arity(op, inputs, 1)?;
            let mut acc = E::ZERO;
            for &x in inputs[0].data() {
                acc = adde(acc, x);
            }
            Ok((Tensor::scalar(acc), None))
        }
        Op::Mean => {
            arity(op, inputs, 1)?;
            let mut acc = E::ZERO;
            for &x in inputs[0].data() {
                acc = adde(acc, x);
            }
            let n = E::from_f64(inputs[0].numel() as f64);
            Ok((Tensor::scalar(div(acc, n)), None))
        }
    }
}

/// Vector-Jacobian product. `wants[i]` tells whether input `i` needs a
/// gradient; kernels skip work for inputs that do not.
pub fn vjp<E: Element>(
    op: &Op,
    inputs: &[&Tensor<E>],
    output: &Tensor<E>,
    saved: Option<&Tensor<E>>,
    grad_out: &Tensor<E>,
    wants: &[bool],
) -> Result<Vec<Option<Tensor<E>>>> {
    match op {
        Op::Input | Op::Param => unreachable!("leaf ops have no vjp"),
        Op::MatMul => matmul_vjp(inputs[0], inputs[1], grad_out, wants),
        Op::Conv2d { stride, pad } => conv2d_vjp(inputs, grad_out, *stride, *pad, wants),
        Op::Add => {
            let mut out = vec![None, None];
            for side in 0..2 {
                if !wants[side] {
                    continue;
                }
                out[side] = Some(if inputs[side].is_scalar() && !inputs[1 - side].is_scalar() {
                    let mut acc = E::ZERO;
                    for &g in grad_out.data() {
                        acc = adde(acc, g);
                    }
                    Tensor::scalar(acc)
                } else {
                    grad_out.clone()
                });
            }
            Ok(out)
        }
        Op::BiasAdd => {
            let f = inputs[1].numel();
            let mut out = vec![None, None];
            if wants[0] {
                out[0] = Some(grad_out.clone());
            }
            if wants[1] {
                let mut db = vec![E::ZERO; f];
                for chunk in grad_out.data().chunks_exact(f) {
                    for (d, &g) in db.iter_mut().zip(chunk) {
                        *d = adde(*d, g);
                    }
                }
                out[1] = Some(Tensor::from_vec(inputs[1].shape(), db)?);
            }
            Ok(out)
        }
        Op::ScalarMul(c) => {
            let c = E::from_f64(*c);
            Ok(vec![wants[0].then(|| grad_out.map(|g| mul(g, c)))])
        }
        Op::ElemMul => {
            let mut out = vec![None, None];
            for side in 0..2 {
                if wants[side] {
                    let other = inputs[1 - side];
                    let data = grad_out
                        .data()
                        .iter()
                        .zip(other.data())
                        .map(|(&g, &o)| mul(g, o))
                        .collect();
                    out[side] = Some(Tensor::from_vec(inputs[side].shape(), data)?);
                }
            }
            Ok(out)
        }
        Op::Relu => {
            let data = grad_out
                .data()
                .iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| if x > E::ZERO { g } else { E::ZERO })
                .collect();
            Ok(vec![wants[0].then(|| Tensor::from_vec(inputs[0].shape(), data).unwrap())])
        }
        Op::Gelu => {
            let data = grad_out
                .data()
                .iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| mul(g, gelu_tanh_grad(x)))
                .collect();
            Ok(vec![wants[0].then(|| Tensor::from_vec(inputs[0].shape(), data).unwrap())])
        }
        Op::Log => {
            let data = grad_out
                .data()
                .iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| div(g, x))
                .collect();
            Ok(vec![wants[0].then(|| Tensor::from_vec(inputs[0].shape(), data).unwrap())])
        }
        Op::Softmax { axis } => Ok(vec![wants[0].then(|| softmax_vjp(output, grad_out, *axis))]),
        Op::LayerNorm { axis, eps } => layer_norm_vjp(inputs, grad_out, *axis, *eps, wants),
        Op::MeanPool { kh, kw } => Ok(vec![wants[0]
            .then(|| mean_pool_vjp(inputs[0].shape(), grad_out, *kh, *kw))]),
        Op::Reshape { .. } | Op::Flatten { .. } => {
            Ok(vec![wants[0].then(|| grad_out.reshaped(inputs[0].shape()).unwrap())])
        }
        Op::Transpose { a, b } => Ok(vec![if wants[0] {
            Some(transpose(grad_out, *a, *b)?)
        } else {
            None
        }]),
        Op::Concat { axis } => concat_vjp(inputs, grad_out, *axis, wants),
        Op::Sdpa { heads } => sdpa_vjp(
            inputs[0],
            inputs[1],
            inputs[2],
            saved.expect("sdpa saves attention probabilities"),
            grad_out,
            *heads,
            wants,
        ),
        Op::Sum => {
            let g = grad_out.item();
            Ok(vec![wants[0].then(|| Tensor::full(inputs[0].shape(), g))])
        }
        Op::Mean => {
            let g = div(grad_out.item(), E::from_f64(inputs[0].numel() as f64));
            Ok(vec![wants[0].then(|| Tensor::full(inputs[0].shape(), g))])
        }
    }
}

// ---- scalar helpers ------------------------------------------------------

#[inline]
fn adde<E: Element>(a: E, b: E) -> E {
    a + b
}

#[inline]
fn add_scalar<E: Element>(a: E, b: E) -> E {
    a + b
}

#[inline]
fn mul<E: Element>(a: E, b: E) -> E {
    a * b
}

#[inline]
fn div<E: Element>(a: E, b: E) -> E {
    a / b
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_tanh<E: Element>(x: E) -> E {
    let c = E::from_f64(GELU_C);
    let a = E::from_f64(GELU_A);
    let half = E::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (E::ONE + inner.tanh())
}

fn gelu_tanh_grad<E: Element>(x: E) -> E {
    let c = E::from_f64(GELU_C);
    let a = E::from_f64(GELU_A);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let d_inner = c * (E::ONE + three * a * x * x);
    half * (E::ONE + t) + half * x * (E::ONE - t * t) * d_inner
}

fn arity<E: Element>(op: &Op, inputs: &[&Tensor<E>], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(bad(op, inputs, "wrong number of inputs"));
    }
    Ok(())
}

fn bad<E: Element>(op: &Op, inputs: &[&Tensor<E>], reason: &str) -> Error {
    Error::BadShape {
        op: op.name(),
        shape: inputs.first().map(|t| t.shape().to_vec()).unwrap_or_default(),
        reason: reason.to_string(),
    }
}

/// Split a shape as `[outer, len, inner]` around `axis`.
fn around_axis(shape: &[usize], axis: usize) -> Option<(usize, usize, usize)> {
    if axis >= shape.len() {
        return None;
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Some((outer, shape[axis], inner))
}

fn flatten_shape(shape: &[usize], keep: usize) -> Option<Vec<usize>> {
    if keep > shape.len() {
        return None;
    }
    let mut out = shape[..keep].to_vec();
    out.push(shape[keep..].iter().product());
    Some(out)
}

// ---- matmul --------------------------------------------------------------

fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let (asp, bsp) = (a.shape(), b.shape());
    if asp.len() < 2 || bsp.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (asp[asp.len() - 2], asp[asp.len() - 1]);
    if bsp.len() == 2 {
        // [.., m, k] x [k, n]: one flat gemm over all leading rows.
        if bsp[0] != k {
            return Err(mismatch());
        }
        let n = bsp[1];
        let rows: usize = a.numel() / k;
        let mut out = vec![E::ZERO; rows * n];
        unsafe {
            E::gemm(rows, k, n, E::ONE, a.data().as_ptr(), b.data().as_ptr(), E::ZERO, out.as_mut_ptr());
        }
        let mut shape = asp.to_vec();
        *shape.last_mut().unwrap() = n;
        Tensor::from_vec(&shape, out)
    } else {
        if asp.len() != bsp.len() || asp[..asp.len() - 2] != bsp[..bsp.len() - 2] || bsp[bsp.len() - 2] != k {
            return Err(mismatch());
        }
        let n = bsp[bsp.len() - 1];
        let batch: usize = asp[..asp.len() - 2].iter().product();
        let mut out = vec![E::ZERO; batch * m * n];
        for i in 0..batch {
            unsafe {
                E::gemm(
                    m,
                    k,
                    n,
                    E::ONE,
                    a.data().as_ptr().add(i * m * k),
                    b.data().as_ptr().add(i * k * n),
                    E::ZERO,
                    out.as_mut_ptr().add(i * m * n),
                );
            }
        }
        let mut shape = asp.to_vec();
        *shape.last_mut().unwrap() = n;
        Tensor::from_vec(&shape, out)
    }
}

fn matmul_vjp<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    grad_out: &Tensor<E>,
    wants: &[bool],
) -> Result<Vec<Option<Tensor<E>>>> {
    let (asp, bsp) = (a.shape(), b.shape());
    let (m, k) = (asp[asp.len() - 2], asp[asp.len() - 1]);
    let mut out = vec![None, None];
    if bsp.len() == 2 {
        let n = bsp[1];
        let rows = a.numel() / k;
        if wants[0] {
            // dA = dOut x B^T
            let mut da = vec![E::ZERO; rows * k];
            unsafe {
                E::gemm_strided(
                    rows, n, k, E::ONE,
                    grad_out.data().as_ptr(), n as isize, 1,
                    b.data().as_ptr(), 1, n as isize,
                    E::ZERO, da.as_mut_ptr(), k as isize, 1,
                );
            }
            out[0] = Some(Tensor::from_vec(asp, da)?);
        }
        if wants[1] {
            // dB = A^T x dOut, summed over all leading rows at once.
            let mut db = vec![E::ZERO; k * n];
            unsafe {
                E::gemm_strided(
                    k, rows, n, E::ONE,
                    a.data().as_ptr(), 1, k as isize,
                    grad_out.data().as_ptr(), n as isize, 1,
                    E::ZERO, db.as_mut_ptr(), n as isize, 1,
                );
            }
            out[1] = Some(Tensor::from_vec(bsp, db)?);
        }
    } else {
        let n = bsp[bsp.len() - 1];
        let batch: usize = asp[..asp.len() - 2].iter().product();
        if wants[0] {
            let mut da = vec![E::ZERO; batch * m * k];
            for i in 0..batch {
                unsafe {
                    E::gemm_strided(
                        m, n, k, E::ONE,
                        grad_out.data().as_ptr().add(i * m * n), n as isize, 1,
                        b.data().as_ptr().add(i * k * n), 1, n as isize,
                        E::ZERO, da.as_mut_ptr().add(i * m * k), k as isize, 1,
                    );
                }
            }
            out[0] = Some(Tensor::from_vec(asp, da)?);
        }
        if wants[1] {
            let mut db = vec![E::ZERO; batch * k * n];
            for i in 0..batch {
                unsafe {
                    E::gemm_strided(
                        k, m, n, E::ONE,
                        a.data().as_ptr().add(i * m * k), 1, k as isize,
                        grad_out.data().as_ptr().add(i * m * n), n as isize, 1,
                        E::ZERO, db.as_mut_ptr().add(i * k * n), n as isize, 1,
                    );
                }
            }
            out[1] = Some(Tensor::from_vec(bsp, db)?);
        }
    }
    Ok(out)
}

// ---- conv2d --------------------------------------------------------------

fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(k).map(|d| d / stride + 1)
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn ck(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

/// Gather padded patches for one image into the batch-wide column matrix
/// `[ck, b*ho*wo]`: patch element (c, ky, kx) is one row, every output
/// position one column, so the whole batch feeds a single gemm with a
/// dense right-hand side.
fn im2col<E: Element>(x: &[E], g: &ConvGeom, cols: &mut [E], positions: usize, col_offset: usize) {
    let hw = g.ho * g.wo;
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * positions + col_offset..row * positions + col_offset + hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let span = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        span.fill(E::ZERO);
                        continue;
                    }
                    let src_row = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // Valid ox span is contiguous; copy it, zero the edges.
                        let shift = kx as isize - g.pad as isize;
                        let lo = (-shift).clamp(0, g.wo as isize) as usize;
                        let hi = (g.w as isize - shift).clamp(0, g.wo as isize) as usize;
                        span[..lo].fill(E::ZERO);
                        span[hi..].fill(E::ZERO);
                        if lo < hi {
                            let s = (lo as isize + shift) as usize;
                            span[lo..hi].copy_from_slice(&src_row[s..s + (hi - lo)]);
                        }
                    } else {
                        for (ox, v) in span.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *v = if ix < 0 || ix >= g.w as isize {
                                E::ZERO
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add patch-column gradients back into one image's gradient.
fn col2im<E: Element>(cols: &[E], g: &ConvGeom, dx: &mut [E], positions: usize, col_offset: usize) {
    let hw = g.ho * g.wo;
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * positions + col_offset..row * positions + col_offset + hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    let row_src = &src[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let shift = kx as isize - g.pad as isize;
                        let lo = (-shift).clamp(0, g.wo as isize) as usize;
                        let hi = (g.w as isize - shift).clamp(0, g.wo as isize) as usize;
                        if lo < hi {
                            let s = base + (lo as isize + shift) as usize;
                            for (d, &v) in dx[s..s + (hi - lo)].iter_mut().zip(&row_src[lo..hi]) {
                                *d = add_scalar(*d, v);
                            }
                        }
                    } else {
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                let i = base + ix as usize;
                                dx[i] = add_scalar(dx[i], row_src[ox]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_dims<E: Element>(
    x: &Tensor<E>,
    kern: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize)> {
    let mismatch = || Error::ShapeMismatch {
        op: "conv2d",
        lhs: x.shape().to_vec(),
        rhs: kern.shape().to_vec(),
    };
    if x.ndim() != 4 || kern.ndim() != 4 || x.shape()[1] != kern.shape()[1] || stride == 0 {
        return Err(mismatch());
    }
    let (b, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (kern.shape()[0], kern.shape()[2], kern.shape()[3]);
    let ho = conv_out_dim(h, kh, stride, pad).ok_or_else(mismatch)?;
    let wo = conv_out_dim(w, kw, stride, pad).ok_or_else(mismatch)?;
    Ok((b, cin, h, w, cout, kh, kw, ho, wo))
}

fn conv2d<E: Element>(
    x: &Tensor<E>,
    kern: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let (b, cin, h, w, cout, kh, kw, ho, wo) = conv_dims(x, kern, stride, pad)?;
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: kern.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
    }
    let geom = ConvGeom { cin, h, w, kh, kw, stride, pad, ho, wo };
    let ck = geom.ck();
    let hw = ho * wo;
    let positions = b * hw;
    let mut cols = vec![E::ZERO; ck * positions];
    for i in 0..b {
        im2col(
            &x.data()[i * cin * h * w..(i + 1) * cin * h * w],
            &geom,
            &mut cols,
            positions,
            i * hw,
        );
    }
    // One gemm over every batch position: W x cols -> [cout, positions].
    let mut out_cols = vec![E::ZERO; cout * positions];
    unsafe {
        E::gemm(
            cout, ck, positions, E::ONE,
            kern.data().as_ptr(), cols.as_ptr(),
            E::ZERO, out_cols.as_mut_ptr(),
        );
    }
    // Back to [b, cout, ho*wo], adding the bias on the way.
    let mut out = vec![E::ZERO; b * cout * hw];
    for i in 0..b {
        for c in 0..cout {
            let bv = bias.map_or(E::ZERO, |t| t.data()[c]);
            let src = &out_cols[c * positions + i * hw..c * positions + (i + 1) * hw];
            let dst = &mut out[(i * cout + c) * hw..(i * cout + c + 1) * hw];
            for (v, &s) in dst.iter_mut().zip(src) {
                *v = s + bv;
            }
        }
    }
    Tensor::from_vec(&[b, cout, ho, wo], out)
}

fn conv2d_vjp<E: Element>(
    inputs: &[&Tensor<E>],
    grad_out: &Tensor<E>,
    stride: usize,
    pad: usize,
    wants: &[bool],
) -> Result<Vec<Option<Tensor<E>>>> {
    let (x, kern) = (inputs[0], inputs[1]);
    let (b, cin, h, w, cout, kh, kw, ho, wo) = conv_dims(x, kern, stride, pad)?;
    let geom = ConvGeom { cin, h, w, kh, kw, stride, pad, ho, wo };
    let ck = geom.ck();
    let hw = ho * wo;
    let positions = b * hw;
    let mut out: Vec<Option<Tensor<E>>> = vec![None; inputs.len()];

    if wants[0] || wants[1] {
        // Upstream gradient in column layout: [cout, positions].
        let mut dout_cols = vec![E::ZERO; cout * positions];
        for i in 0..b {
            for c in 0..cout {
                let src = &grad_out.data()[(i * cout + c) * hw..(i * cout + c + 1) * hw];
                dout_cols[c * positions + i * hw..c * positions + (i + 1) * hw]
                    .copy_from_slice(src);
            }
        }
        if wants[1] {
            let mut cols = vec![E::ZERO; ck * positions];
            for i in 0..b {
                im2col(
                    &x.data()[i * cin * h * w..(i + 1) * cin * h * w],
                    &geom,
                    &mut cols,
                    positions,
                    i * hw,
                );
            }
            // dW^T = cols x dOut_cols^T -> [ck, cout], then transposed out.
            let mut dkern_t = vec![E::ZERO; ck * cout];
            unsafe {
                E::gemm_strided(
                    ck, positions, cout, E::ONE,
                    cols.as_ptr(), positions as isize, 1,
                    dout_cols.as_ptr(), 1, positions as isize,
                    E::ZERO, dkern_t.as_mut_ptr(), cout as isize, 1,
                );
            }
            let mut dkern = vec![E::ZERO; cout * ck];
            for j in 0..ck {
                for c in 0..cout {
                    dkern[c * ck + j] = dkern_t[j * cout + c];
                }
            }
            out[1] = Some(Tensor::from_vec(kern.shape(), dkern)?);
        }
        if wants[0] {
            // dCols = W^T x dOut_cols -> [ck, positions], scattered back.
            let mut dcols = vec![E::ZERO; ck * positions];
            unsafe {
                E::gemm_strided(
                    ck, cout, positions, E::ONE,
                    kern.data().as_ptr(), 1, ck as isize,
                    dout_cols.as_ptr(), positions as isize, 1,
                    E::ZERO, dcols.as_mut_ptr(), positions as isize, 1,
                );
            }
            let mut dx = vec![E::ZERO; b * cin * h * w];
            for i in 0..b {
                col2im(
                    &dcols,
                    &geom,
                    &mut dx[i * cin * h * w..(i + 1) * cin * h * w],
                    positions,
                    i * hw,
                );
            }
            out[0] = Some(Tensor::from_vec(x.shape(), dx)?);
        }
    }
    if inputs.len() == 3 && wants[2] {
        let mut db = vec![E::ZERO; cout];
        for i in 0..b {
            for c in 0..cout {
                let s = &grad_out.data()[(i * cout + c) * hw..(i * cout + c + 1) * hw];
                for &g in s {
                    db[c] = add_scalar(db[c], g);
                }
            }
        }
        out[2] = Some(Tensor::from_vec(&[cout], db)?);
    }
    Ok(out)
}

// ---- add family ----------------------------------------------------------

fn add<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| add_scalar(x, y)).collect();
        return Tensor::from_vec(a.shape(), data);
    }
    if b.is_scalar() {
        let s = b.item();
        return Ok(a.map(|x| add_scalar(x, s)));
    }
    if a.is_scalar() {
        let s = a.item();
        return Ok(b.map(|x| add_scalar(s, x)));
    }
    Err(Error::ShapeMismatch {
        op: "add",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

fn bias_add<E: Element>(x: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
    let f = bias.numel();
    if bias.ndim() != 1 || x.ndim() == 0 || *x.shape().last().unwrap() != f {
        return Err(Error::ShapeMismatch {
            op: "bias-add",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut data = x.data().to_vec();
    for chunk in data.chunks_exact_mut(f) {
        for (v, &bv) in chunk.iter_mut().zip(bias.data()) {
            *v = add_scalar(*v, bv);
        }
    }
    Tensor::from_vec(x.shape(), data)
}

// ---- softmax / layer norm --------------------------------------------------

fn softmax<E: Element>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    let (outer, len, inner) = around_axis(x.shape(), axis).ok_or(Error::BadShape {
        op: "softmax",
        shape: x.shape().to_vec(),
        reason: format!("axis {axis} out of range"),
    })?;
    // Walk memory in natural order, keeping one accumulator per inner
    // position, so strided axes stay cache-friendly.
    let mut data = x.data().to_vec();
    let mut maxes = vec![E::ZERO; inner];
    let mut denoms = vec![E::ZERO; inner];
    for o in 0..outer {
        let base = o * len * inner;
        maxes.copy_from_slice(&data[base..base + inner]);
        for l in 1..len {
            let row = &data[base + l * inner..base + (l + 1) * inner];
            for (m, &v) in maxes.iter_mut().zip(row) {
                if v > *m {
                    *m = v;
                }
            }
        }
        denoms.fill(E::ZERO);
        for l in 0..len {
            let row = &mut data[base + l * inner..base + (l + 1) * inner];
            for ((v, &m), d) in row.iter_mut().zip(&maxes).zip(denoms.iter_mut()) {
                *v = (*v - m).exp();
                *d += *v;
            }
        }
        for l in 0..len {
            let row = &mut data[base + l * inner..base + (l + 1) * inner];
            for (v, &d) in row.iter_mut().zip(&denoms) {
                *v = *v / d;
            }
        }
    }
    Tensor::from_vec(x.shape(), data)
}

fn softmax_vjp<E: Element>(output: &Tensor<E>, grad_out: &Tensor<E>, axis: usize) -> Tensor<E> {
    let (outer, len, inner) = around_axis(output.shape(), axis).unwrap();
    let y = output.data();
    let g = grad_out.data();
    let mut dx = vec![E::ZERO; y.len()];
    let mut dots = vec![E::ZERO; inner];
    for o in 0..outer {
        let base = o * len * inner;
        dots.fill(E::ZERO);
        for l in 0..len {
            let s = base + l * inner;
            for i in 0..inner {
                dots[i] += g[s + i] * y[s + i];
            }
        }
        for l in 0..len {
            let s = base + l * inner;
            for i in 0..inner {
                dx[s + i] = y[s + i] * (g[s + i] - dots[i]);
            }
        }
    }
    Tensor::from_vec(output.shape(), dx).unwrap()
}

fn layer_norm<E: Element>(
    x: &Tensor<E>,
    scale: &Tensor<E>,
    offset: &Tensor<E>,
    axis: usize,
    eps: f64,
) -> Result<Tensor<E>> {
    let (outer, len, inner) = around_axis(x.shape(), axis).ok_or(Error::BadShape {
        op: "layer-norm",
        shape: x.shape().to_vec(),
        reason: format!("axis {axis} out of range"),
    })?;
    if scale.shape() != [len] || offset.shape() != [len] {
        return Err(Error::ShapeMismatch {
            op: "layer-norm",
            lhs: x.shape().to_vec(),
            rhs: scale.shape().to_vec(),
        });
    }
    let xs = x.data();
    let mut out = vec![E::ZERO; xs.len()];
    let inv_len = E::from_f64(1.0 / len as f64);
    let eps_e = E::from_f64(eps);
    let mut means = vec![E::ZERO; inner];
    let mut invs = vec![E::ZERO; inner];
    for o in 0..outer {
        let base = o * len * inner;
        means.fill(E::ZERO);
        for l in 0..len {
            let row = &xs[base + l * inner..base + (l + 1) * inner];
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in means.iter_mut() {
            *m = *m * inv_len;
        }
        invs.fill(E::ZERO);
        for l in 0..len {
            let row = &xs[base + l * inner..base + (l + 1) * inner];
            for (acc, (&v, &m)) in invs.iter_mut().zip(row.iter().zip(&means)) {
                let d = v - m;
                *acc += d * d;
            }
        }
        for v in invs.iter_mut() {
            *v = E::ONE / (*v * inv_len + eps_e).sqrt();
        }
        for l in 0..len {
            let (sc, of) = (scale.data()[l], offset.data()[l]);
            let src = &xs[base + l * inner..base + (l + 1) * inner];
            let dst = &mut out[base + l * inner..base + (l + 1) * inner];
            for i in 0..inner {
                dst[i] = (src[i] - means[i]) * invs[i] * sc + of;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

fn layer_norm_vjp<E: Element>(
    inputs: &[&Tensor<E>],
    grad_out: &Tensor<E>,
    axis: usize,
    eps: f64,
    wants: &[bool],
) -> Result<Vec<Option<Tensor<E>>>> {
    let (x, scale) = (inputs[0], inputs[1]);
    let (outer, len, inner) = around_axis(x.shape(), axis).unwrap();
    let xs = x.data();
    let g = grad_out.data();
    let inv_len = E::from_f64(1.0 / len as f64);
    let eps_e = E::from_f64(eps);
    let mut dx = if wants[0] { vec![E::ZERO; xs.len()] } else { Vec::new() };
    let mut dscale = vec![E::ZERO; len];
    let mut doffset = vec![E::ZERO; len];
    let mut means = vec![E::ZERO; inner];
    let mut invs = vec![E::ZERO; inner];
    let mut m1 = vec![E::ZERO; inner];
    let mut m2 = vec![E::ZERO; inner];
    for o in 0..outer {
        let base = o * len * inner;
        means.fill(E::ZERO);
        for l in 0..len {
            let row = &xs[base + l * inner..base + (l + 1) * inner];
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in means.iter_mut() {
            *m = *m * inv_len;
        }
        invs.fill(E::ZERO);
        for l in 0..len {
            let row = &xs[base + l * inner..base + (l + 1) * inner];
            for (acc, (&v, &m)) in invs.iter_mut().zip(row.iter().zip(&means)) {
                let d = v - m;
                *acc += d * d;
            }
        }
        for v in invs.iter_mut() {
            *v = E::ONE / (*v * inv_len + eps_e).sqrt();
        }

        if wants[1] || wants[2] {
            for l in 0..len {
                let s = base + l * inner;
                let mut ds = E::ZERO;
                let mut doff = E::ZERO;
                for i in 0..inner {
                    let xhat = (xs[s + i] - means[i]) * invs[i];
                    ds += g[s + i] * xhat;
                    doff += g[s + i];
                }
                dscale[l] += ds;
                doffset[l] += doff;
            }
        }
        if wants[0] {
            // dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
            m1.fill(E::ZERO);
            m2.fill(E::ZERO);
            for l in 0..len {
                let s = base + l * inner;
                let sc = scale.data()[l];
                for i in 0..inner {
                    let xhat = (xs[s + i] - means[i]) * invs[i];
                    let dxhat = g[s + i] * sc;
                    m1[i] += dxhat;
                    m2[i] += dxhat * xhat;
                }
            }
            for i in 0..inner {
                m1[i] = m1[i] * inv_len;
                m2[i] = m2[i] * inv_len;
            }
            for l in 0..len {
                let s = base + l * inner;
                let sc = scale.data()[l];
                for i in 0..inner {
                    let xhat = (xs[s + i] - means[i]) * invs[i];
                    let dxhat = g[s + i] * sc;
                    dx[s + i] = invs[i] * (dxhat - m1[i] - xhat * m2[i]);
                }
            }
        }
    }
    let mut out = vec![None, None, None];
    if wants[0] {
        out[0] = Some(Tensor::from_vec(x.shape(), dx)?);
    }
    if wants[1] {
        out[1] = Some(Tensor::from_vec(&[len], dscale)?);
    }
    if wants[2] {
        out[2] = Some(Tensor::from_vec(&[len], doffset)?);
    }
    Ok(out)
}

// ---- pooling / layout ------------------------------------------------------

fn mean_pool<E: Element>(x: &Tensor<E>, kh: usize, kw: usize) -> Result<Tensor<E>> {
    let nd = x.ndim();
    if nd < 2 || kh == 0 || kw == 0 {
        return Err(Error::BadShape {
            op: "mean-pool",
            shape: x.shape().to_vec(),
            reason: "needs at least 2 axes and a non-empty window".into(),
        });
    }
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    if h % kh != 0 || w % kw != 0 {
        return Err(Error::BadShape {
            op: "mean-pool",
            shape: x.shape().to_vec(),
            reason: format!("window {kh}x{kw} must divide the spatial extent"),
        });
    }
    let (ho, wo) = (h / kh, w / kw);
    let lead: usize = x.shape()[..nd - 2].iter().product();
    let norm = E::from_f64(1.0 / (kh * kw) as f64);
    let mut out = vec![E::ZERO; lead * ho * wo];
    for l in 0..lead {
        let src = &x.data()[l * h * w..(l + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = E::ZERO;
                for dy in 0..kh {
                    for dx in 0..kw {
                        acc += src[(oy * kh + dy) * w + ox * kw + dx];
                    }
                }
                out[(l * ho + oy) * wo + ox] = acc * norm;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = ho;
    shape[nd - 1] = wo;
    Tensor::from_vec(&shape, out)
}

fn mean_pool_vjp<E: Element>(
    in_shape: &[usize],
    grad_out: &Tensor<E>,
    kh: usize,
    kw: usize,
) -> Tensor<E> {
    let nd = in_shape.len();
    let (h, w) = (in_shape[nd - 2], in_shape[nd - 1]);
    let (ho, wo) = (h / kh, w / kw);
    let lead: usize = in_shape[..nd - 2].iter().product();
    let norm = E::from_f64(1.0 / (kh * kw) as f64);
    let mut dx = vec![E::ZERO; lead * h * w];
    for l in 0..lead {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = grad_out.data()[(l * ho + oy) * wo + ox] * norm;
                for dy in 0..kh {
                    for dxx in 0..kw {
                        dx[(l * h + oy * kh + dy) * w + ox * kw + dxx] = g;
                    }
                }
            }
        }
    }
    Tensor::from_vec(in_shape, dx).unwrap()
}

fn transpose<E: Element>(x: &Tensor<E>, a: usize, b: usize) -> Result<Tensor<E>> {
    let nd = x.ndim();
    if a >= nd || b >= nd {
        return Err(Error::BadShape {
            op: "transpose",
            shape: x.shape().to_vec(),
            reason: format!("axes ({a}, {b}) out of range"),
        });
    }
    if a == b {
        return Ok(x.clone());
    }
    let mut shape = x.shape().to_vec();
    shape.swap(a, b);
    let in_strides = row_major_strides(x.shape());
    let out_strides = row_major_strides(&shape);
    let mut out = vec![E::ZERO; x.numel()];
    // Walk the output in order; map each index back through the axis swap.
    let mut idx = vec![0usize; nd];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut rem = o;
        for d in 0..nd {
            idx[d] = rem / out_strides[d];
            rem %= out_strides[d];
        }
        idx.swap(a, b);
        let mut src = 0;
        for d in 0..nd {
            src += idx[d] * in_strides[d];
        }
        *slot = x.data()[src];
    }
    Tensor::from_vec(&shape, out)
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn concat<E: Element>(op: &Op, inputs: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
    if inputs.is_empty() {
        return Err(bad(op, inputs, "concat of zero tensors"));
    }
    let first = inputs[0].shape();
    if axis >= first.len() {
        return Err(bad(op, inputs, "axis out of range"));
    }
    let mut total = 0;
    for t in inputs {
        if t.ndim() != first.len() {
            return Err(bad(op, inputs, "rank mismatch"));
        }
        for (d, (&a, &b)) in first.iter().zip(t.shape()).enumerate() {
            if d != axis && a != b {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        total += t.shape()[axis];
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    let (outer, _, inner) = around_axis(&shape, axis).unwrap();
    let mut out = vec![E::ZERO; outer * total * inner];
    for o in 0..outer {
        let mut offset = 0;
        for t in inputs {
            let len = t.shape()[axis];
            let src = &t.data()[o * len * inner..(o + 1) * len * inner];
            let dst_start = (o * total + offset) * inner;
            out[dst_start..dst_start + len * inner].copy_from_slice(src);
            offset += len;
        }
    }
    Tensor::from_vec(&shape, out)
}

fn concat_vjp<E: Element>(
    inputs: &[&Tensor<E>],
    grad_out: &Tensor<E>,
    axis: usize,
    wants: &[bool],
) -> Result<Vec<Option<Tensor<E>>>> {
    let total = grad_out.shape()[axis];
    let (outer, _, inner) = around_axis(grad_out.shape(), axis).unwrap();
    let mut outs: Vec<Option<Tensor<E>>> = vec![None; inputs.len()];
    let mut offset = 0;
    for (i, t) in inputs.iter().enumerate() {
        let len = t.shape()[axis];
        if wants[i] {
            let mut d = vec![E::ZERO; t.numel()];
            for o in 0..outer {
                let src_start = (o * total + offset) * inner;
                d[o * len * inner..(o + 1) * len * inner]
                    .copy_from_slice(&grad_out.data()[src_start..src_start + len * inner]);
            }
            outs[i] = Some(Tensor::from_vec(t.shape(), d)?);
        }
        offset += len;
    }
    Ok(outs)
}

// ---- scaled dot-product attention ------------------------------------------

fn sdpa_dims<E: Element>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    v: &Tensor<E>,
    heads: usize,
) -> Result<(usize, usize, usize, usize)> {
    let mismatch = || Error::ShapeMismatch {
        op: "scaled-dot-product-attention",
        lhs: q.shape().to_vec(),
        rhs: k.shape().to_vec(),
    };
    if q.ndim() != 3 || q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(mismatch());
    }
    let (b, n, f) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    if heads == 0 || f % heads != 0 {
        return Err(Error::BadShape {
            op: "scaled-dot-product-attention",
            shape: q.shape().to_vec(),
            reason: format!("feature size {f} not divisible by {heads} heads"),
        });
    }
    Ok((b, n, f, f / heads))
}

/// Attention over `[batch, n, f]` with the feature axis split into heads.
/// Saves the attention probabilities `[batch, heads, n, n]` for backward.
fn sdpa<E: Element>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    v: &Tensor<E>,
    heads: usize,
) -> Result<(Tensor<E>, Option<Tensor<E>>)> {
    let (b, n, f, dh) = sdpa_dims(q, k, v, heads)?;
    let scale = E::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = vec![E::ZERO; b * n * f];
    let mut probs = vec![E::ZERO; b * heads * n * n];
    let mut scores = vec![E::ZERO; n * n];
    for i in 0..b {
        for h in 0..heads {
            let off = i * n * f + h * dh;
            unsafe {
                // scores = scale * Q_h x K_h^T
                E::gemm_strided(
                    n, dh, n, scale,
                    q.data().as_ptr().add(off), f as isize, 1,
                    k.data().as_ptr().add(off), 1, f as isize,
                    E::ZERO, scores.as_mut_ptr(), n as isize, 1,
                );
            }
            let p = &mut probs[(i * heads + h) * n * n..(i * heads + h + 1) * n * n];
            for r in 0..n {
                let row = &scores[r * n..(r + 1) * n];
                let mut max = row[0];
                for &s in row.iter().skip(1) {
                    if s > max {
                        max = s;
                    }
                }
                let mut denom = E::ZERO;
                for c in 0..n {
                    let e = (row[c] - max).exp();
                    p[r * n + c] = e;
                    denom += e;
                }
                for c in 0..n {
                    p[r * n + c] = p[r * n + c] / denom;
                }
            }
            unsafe {
                // out_h = P x V_h
                E::gemm_strided(
                    n, n, dh, E::ONE,
                    p.as_ptr(), n as isize, 1,
                    v.data().as_ptr().add(off), f as isize, 1,
                    E::ZERO, out.as_mut_ptr().add(off), f as isize, 1,
                );
            }
        }
    }
    Ok((
        Tensor::from_vec(q.shape(), out)?,
        Some(Tensor::from_vec(&[b, heads, n, n], probs)?),
    ))
}

#[allow(clippy::too_many_arguments)]
fn sdpa_vjp<E: Element>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    v: &Tensor<E>,
    probs: &Tensor<E>,
    grad_out: &Tensor<E>,
    heads: usize,
    wants: &[bool],
) -> Result<Vec<Option<Tensor<E>>>> {
    let (b, n, f, dh) = sdpa_dims(q, k, v, heads)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![E::ZERO; b * n * f];
    let mut dk = vec![E::ZERO; b * n * f];
    let mut dv = vec![E::ZERO; b * n * f];
    let mut da = vec![E::ZERO; n * n];
    let mut ds = vec![E::ZERO; n * n];
    for i in 0..b {
        for h in 0..heads {
            let off = i * n * f + h * dh;
            let p = &probs.data()[(i * heads + h) * n * n..(i * heads + h + 1) * n * n];
            unsafe {
                // dV_h = P^T x dOut_h
                E::gemm_strided(
                    n, n, dh, E::ONE,
                    p.as_ptr(), 1, n as isize,
                    grad_out.data().as_ptr().add(off), f as isize, 1,
                    E::ZERO, dv.as_mut_ptr().add(off), f as isize, 1,
                );
                // dA = dOut_h x V_h^T
                E::gemm_strided(
                    n, dh, n, E::ONE,
                    grad_out.data().as_ptr().add(off), f as isize, 1,
                    v.data().as_ptr().add(off), 1, f as isize,
                    E::ZERO, da.as_mut_ptr(), n as isize, 1,
                );
            }
            // softmax rows: dS = P . (dA - rowdot(dA, P))
            let scale_e = E::from_f64(scale);
            for r in 0..n {
                let mut dot = E::ZERO;
                for c in 0..n {
                    dot += da[r * n + c] * p[r * n + c];
                }
                for c in 0..n {
                    ds[r * n + c] = p[r * n + c] * (da[r * n + c] - dot) * scale_e;
                }
            }
            unsafe {
                // dQ_h = dS x K_h
                E::gemm_strided(
                    n, n, dh, E::ONE,
                    ds.as_ptr(), n as isize, 1,
                    k.data().as_ptr().add(off), f as isize, 1,
                    E::ZERO, dq.as_mut_ptr().add(off), f as isize, 1,
                );
                // dK_h = dS^T x Q_h
                E::gemm_strided(
                    n, n, dh, E::ONE,
                    ds.as_ptr(), 1, n as isize,
                    q.data().as_ptr().add(off), f as isize, 1,
                    E::ZERO, dk.as_mut_ptr().add(off), f as isize, 1,
                );
            }
        }
    }
    Ok(vec![
        wants[0].then(|| Tensor::from_vec(q.shape(), dq).unwrap()),
        wants[1].then(|| Tensor::from_vec(k.shape(), dk).unwrap()),
        wants[2].then(|| Tensor::from_vec(v.shape(), dv).unwrap()),
    ])
}
