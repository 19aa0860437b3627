//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records one forward pass as an append-only list of op nodes
//! (inputs always precede consumers), then replays it once in reverse to
//! accumulate gradients. A graph is single-writer: one forward/backward
//! sequence at a time.

use std::collections::HashMap;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::ops::{self, Op};
use crate::registry::ParameterRegistry;
use crate::tensor::Tensor;

pub type NodeId = usize;

struct Node<E: Element> {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor<E>,
    saved: Option<Tensor<E>>,
    needs_grad: bool,
    /// Registry name for parameter leaves.
    param: Option<String>,
}

/// Gradients keyed by parameter name, produced by [`Graph::backward`].
pub type GradMap<E> = HashMap<String, Tensor<E>>;

pub struct Graph<'r, E: Element> {
    nodes: Vec<Node<E>>,
    registry: &'r ParameterRegistry<E>,
    bound: HashMap<String, NodeId>,
    tracking: bool,
}

impl<'r, E: Element> Graph<'r, E> {
    /// A graph that records for backward.
    pub fn new(registry: &'r ParameterRegistry<E>) -> Self {
        Graph {
            nodes: Vec::new(),
            registry,
            bound: HashMap::new(),
            tracking: true,
        }
    }

    /// A forward-only graph; backward is refused.
    pub fn inference(registry: &'r ParameterRegistry<E>) -> Self {
        Graph {
            tracking: false,
            ..Graph::new(registry)
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id].value
    }

    /// Insert a constant leaf. Constants never receive gradients.
    pub fn input(&mut self, value: Tensor<E>) -> NodeId {
        self.push(Node {
            op: Op::Input,
            inputs: Vec::new(),
            value,
            saved: None,
            needs_grad: false,
            param: None,
        })
    }

    /// Bind a registry parameter as a leaf. Trainable parameters take part
    /// in gradient propagation; frozen ones behave like constants. Binding
    /// the same name twice returns the same node.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let p = self.registry.get(name)?;
        let id = self.push(Node {
            op: Op::Param,
            inputs: Vec::new(),
            value: p.value.clone(),
            saved: None,
            needs_grad: self.tracking && p.trainable,
            param: Some(name.to_string()),
        });
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Record one op application. This is the single entry point every
    /// typed helper goes through; shape errors name the op and shapes.
    pub fn forward_op(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<E>> = inputs.iter().map(|&i| &self.nodes[i].value).collect();
        let (value, saved) = ops::eval(&op, &tensors)?;
        debug_assert!(
            value.all_finite(),
            "{} produced a non-finite value",
            op.name()
        );
        let needs_grad = self.tracking && inputs.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(Node {
            op,
            inputs: inputs.to_vec(),
            value,
            saved,
            needs_grad,
            param: None,
        }))
    }

    fn push(&mut self, node: Node<E>) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// trainable parameter reachable from the loss; frozen parameters and
    /// constants receive none.
    pub fn backward(&self, loss: NodeId) -> Result<GradMap<E>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        if !self.tracking {
            return Err(Error::EmptyGraph);
        }
        let loss_node = &self.nodes[loss];
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }

        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::full(loss_node.value.shape(), E::ONE));

        for id in (0..=loss).rev() {
            let node = &self.nodes[id];
            if node.inputs.is_empty() || !node.needs_grad {
                continue;
            }
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let tensors: Vec<&Tensor<E>> =
                node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let wants: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| self.nodes[i].needs_grad)
                .collect();
            let input_grads = ops::vjp(
                &node.op,
                &tensors,
                &node.value,
                node.saved.as_ref(),
                &grad_out,
                &wants,
            )?;
            for (slot, grad) in node.inputs.iter().zip(input_grads) {
                if let Some(g) = grad {
                    grads[*slot] = Some(match grads[*slot].take() {
                        None => g,
                        Some(acc) => add_tensors(&acc, &g),
                    });
                }
            }
        }

        let mut out = GradMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let (Some(name), Some(g)) = (&node.param, grads[id].take()) {
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    // ---- typed helpers ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward_op(Op::MatMul, &[a, b])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let mut inputs = vec![x, kernel];
        if let Some(b) = bias {
            inputs.push(b);
        }
        self.forward_op(Op::Conv2d { stride, pad }, &inputs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward_op(Op::Add, &[a, b])
    }

    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.forward_op(Op::BiasAdd, &[x, bias])
    }

    pub fn scalar_mul(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.forward_op(Op::ScalarMul(c), &[x])
    }

    pub fn elem_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward_op(Op::ElemMul, &[a, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.forward_op(Op::Relu, &[x])
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.forward_op(Op::Gelu, &[x])
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.forward_op(Op::Log, &[x])
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.forward_op(Op::Softmax { axis }, &[x])
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        scale: NodeId,
        offset: NodeId,
        axis: usize,
    ) -> Result<NodeId> {
        self.forward_op(Op::LayerNorm { axis, eps: 1e-5 }, &[x, scale, offset])
    }

    pub fn mean_pool(&mut self, x: NodeId, kh: usize, kw: usize) -> Result<NodeId> {
        self.forward_op(Op::MeanPool { kh, kw }, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.forward_op(Op::Reshape { shape: shape.to_vec() }, &[x])
    }

    pub fn flatten(&mut self, x: NodeId, keep: usize) -> Result<NodeId> {
        self.forward_op(Op::Flatten { keep }, &[x])
    }

    pub fn transpose(&mut self, x: NodeId, a: usize, b: usize) -> Result<NodeId> {
        self.forward_op(Op::Transpose { a, b }, &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.forward_op(Op::Concat { axis }, xs)
    }

    pub fn sdpa(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
        self.forward_op(Op::Sdpa { heads }, &[q, k, v])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.forward_op(Op::Sum, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.forward_op(Op::Mean, &[x])
    }

    /// `a - b` composed from the primitive ops.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let neg = self.scalar_mul(b, -1.0)?;
        self.add(a, neg)
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(Error::ShapeMismatch {
                op: "mse",
                lhs: self.value(pred).shape().to_vec(),
                rhs: self.value(target).shape().to_vec(),
            });
        }
        let diff = self.sub(pred, target)?;
        let sq = self.elem_mul(diff, diff)?;
        self.mean(sq)
    }
}

fn add_tensors<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::from_vec(a.shape(), data).expect("accumulated gradients share a shape")
}
