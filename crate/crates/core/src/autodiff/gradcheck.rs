//! Central finite-difference verification of reverse-mode gradients.
//!
//! Runs on `f64` graphs ("check mode"): each leaf entry is nudged by `±h`,
//! the tape is replayed, and the slope of the loss is compared with the
//! adjoint from [`Graph::backward`].

use super::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both are (numerically) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Numerical gradient of the scalar `loss` with respect to leaf `wrt`.
pub fn numerical_gradient(graph: &mut Graph<f64>, loss: Var, wrt: Var, h: f64) -> Result<Vec<f64>> {
    let base = graph.value(wrt).clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus.data_mut()[i] += h;
        graph.set_leaf(wrt, plus)?;
        graph.replay()?;
        let fp = graph.value(loss).item()?;

        let mut minus = base.clone();
        minus.data_mut()[i] -= h;
        graph.set_leaf(wrt, minus)?;
        graph.replay()?;
        let fm = graph.value(loss).item()?;

        out.push((fp - fm) / (2.0 * h));
    }
    graph.set_leaf(wrt, base)?;
    graph.replay()?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LeafCheck {
    pub leaf: Var,
    pub relative_error: f64,
}

/// Compares analytic and numerical gradients for every leaf in `leaves`.
pub fn check_leaves(graph: &mut Graph<f64>, loss: Var, leaves: &[Var], h: f64) -> Result<Vec<LeafCheck>> {
    let grads = graph.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .map(|&v| grads.get_or_zeros(v, graph.value(v)))
        .collect();
    let mut out = Vec::with_capacity(leaves.len());
    for (&leaf, a) in leaves.iter().zip(&analytic) {
        let n = numerical_gradient(graph, loss, leaf, h)?;
        out.push(LeafCheck {
            leaf,
            relative_error: relative_error(a.data(), &n),
        });
    }
    Ok(out)
}

/// Worst relative error over `leaves`.
pub fn max_relative_error(graph: &mut Graph<f64>, loss: Var, leaves: &[Var]) -> Result<f64> {
    Ok(check_leaves(graph, loss, leaves, DEFAULT_STEP)?
        .iter()
        .map(|c| c.relative_error)
        .fold(0.0, f64::max))
}
