//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation in creation order, which is also a
//! topological order. [`Graph::backward`] walks the tape once in reverse and
//! accumulates adjoints. Leaves are either trainable parameters or constants;
//! constants receive no gradient, which is how the teacher branch and
//! cross-entropy targets are kept outside differentiation.

mod ops;
pub mod gradcheck;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use ops::{GELU_C, L2_EPS, LAYER_NORM_EPS, LOG_CLAMP};
pub(crate) use ops::softmax_last;

/// Handle to a value slot on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var, tb: bool },
    BatchMatMul { a: Var, b: Var, tb: bool },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    AddBroadcast { x: Var, b: Var },
    Scale { x: Var, c: f64 },
    MulScalar { x: Var, s: Var },
    Exp { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Softmax { x: Var, axis: usize, temperature: f64 },
    LogSoftmax { x: Var, axis: usize, temperature: f64 },
    L2Normalize { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var },
    Gelu { x: Var },
    WeightNormLinear { x: Var, direction: Var, scale: Var },
    CrossEntropySoft { target: Var, pred: Var },
    Reshape { x: Var, shape: Vec<usize> },
    Permute { x: Var, axes: Vec<usize> },
    GatherRows { x: Var, indices: Vec<usize> },
    PickPerRow { x: Var, indices: Vec<usize> },
    PrependToken { x: Var, token: Var },
    SelectPosition { x: Var, pos: usize },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b, .. } | BatchMatMul { a, b, .. } | Add { a, b } => vec![*a, *b],
            AddBroadcast { x, b } => vec![*x, *b],
            MulScalar { x, s } => vec![*x, *s],
            LayerNorm { x, gain, bias } => vec![*x, *gain, *bias],
            WeightNormLinear {
                x,
                direction,
                scale,
            } => vec![*x, *direction, *scale],
            CrossEntropySoft { pred, .. } => vec![*pred],
            PrependToken { x, token } => vec![*x, *token],
            Transpose { x }
            | Scale { x, .. }
            | Exp { x }
            | Sum { x }
            | Mean { x }
            | Softmax { x, .. }
            | LogSoftmax { x, .. }
            | L2Normalize { x }
            | Gelu { x }
            | Reshape { x, .. }
            | Permute { x, .. }
            | GatherRows { x, .. }
            | PickPerRow { x, .. }
            | SelectPosition { x, .. } => vec![*x],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T> {
    op: Op,
    value: Tensor<T>,
    /// Forward-pass byproducts the adjoint needs (norms, statistics).
    aux: Vec<T>,
    trainable: bool,
    needs_grad: bool,
}

/// The computation tape.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints for every node reached by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, value: Tensor<T>, trainable: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            aux: Vec::new(),
            trainable,
            needs_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let (value, aux) = ops::forward(&op, &self.nodes)?;
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            aux,
            trainable: false,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Replaces a leaf's value. Call [`Graph::replay`] to propagate it.
    pub fn set_leaf(&mut self, v: Var, t: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Contract(format!("node {} is not a leaf", v.0)));
        }
        if node.value.shape() != t.shape() {
            return Err(Error::dim("set_leaf", node.value.shape(), t.shape()));
        }
        node.value = t;
        Ok(())
    }

    /// Re-executes every recorded operation from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (value, aux) = ops::forward(&self.nodes[i].op, &self.nodes[..i])?;
            self.nodes[i].value = value;
            self.nodes[i].aux = aux;
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            ops::backward(node, &self.nodes, &g, &mut grads)?;
        }
        // Only leaves keep their adjoint; intermediate slots were consumed.
        Ok(Gradients { grads })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul { a, b, tb: false })
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul { a, b, tb: true })
    }

    /// `[b,m,k] × [b,k,n]`, or `[b,m,k] × [b,n,k]ᵀ` with `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        self.push(Op::BatchMatMul {
            a,
            b,
            tb: transpose_b,
        })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Transpose { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add { a, b })
    }

    /// `x + b` where `b`'s shape equals the trailing dimensions of `x`.
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        self.push(Op::AddBroadcast { x, b })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale { x, c })
    }

    /// `x · s` for a one-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        self.push(Op::MulScalar { x, s })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp { x })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Mean { x })
    }

    /// `exp((x - max)/T)` normalized along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize, temperature: f64) -> Result<Var> {
        self.push(Op::Softmax {
            x,
            axis,
            temperature,
        })
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize, temperature: f64) -> Result<Var> {
        self.push(Op::LogSoftmax {
            x,
            axis,
            temperature,
        })
    }

    /// Normalizes each slice along the last axis to unit L2 norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.push(Op::L2Normalize { x })
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.push(Op::LayerNorm { x, gain, bias })
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Gelu { x })
    }

    /// `x · (scale ⊙ direction/‖direction‖)ᵀ`, one norm per output row.
    pub fn weight_norm_linear(&mut self, x: Var, direction: Var, scale: Var) -> Result<Var> {
        self.push(Op::WeightNormLinear {
            x,
            direction,
            scale,
        })
    }

    /// `-Σ target · ln(max(pred, 1e-12))` per distribution (last axis).
    /// No gradient flows into `target`.
    pub fn cross_entropy_soft(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.push(Op::CrossEntropySoft { target, pred })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.push(Op::Permute {
            x,
            axes: axes.to_vec(),
        })
    }

    /// Rows of `x` (viewed as `[rows, last_dim]`) picked by index; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.push(Op::GatherRows {
            x,
            indices: indices.to_vec(),
        })
    }

    /// `out[r] = x[r, indices[r]]` for a 2-D `x`.
    pub fn pick_per_row(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.push(Op::PickPerRow {
            x,
            indices: indices.to_vec(),
        })
    }

    /// `[B,P,W]` with a `[W]` token in front of every sequence → `[B,P+1,W]`.
    pub fn prepend_token(&mut self, x: Var, token: Var) -> Result<Var> {
        self.push(Op::PrependToken { x, token })
    }

    /// `[B,L,W]` → `[B,W]` at sequence position `pos`.
    pub fn select_position(&mut self, x: Var, pos: usize) -> Result<Var> {
        self.push(Op::SelectPosition { x, pos })
    }
}
