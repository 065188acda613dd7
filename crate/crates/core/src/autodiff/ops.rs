use super::{Node, Op, Var};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{gemm, Scalar, Tensor};

pub const L2_EPS: f64 = 1e-12;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const LOG_CLAMP: f64 = 1e-12;
/// sqrt(2/pi), tanh approximation of gelu.
pub const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

type Forward<T> = (Tensor<T>, Vec<T>);

fn val<T>(nodes: &[Node<T>], v: Var) -> &Tensor<T> {
    &nodes[v.0].value
}

/// `(outer, len, inner)` for a reduction along `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::domain(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

fn check_temperature(op: &'static str, t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(op, format!("temperature must be > 0, got {t}")));
    }
    Ok(())
}

fn softmax_lanes<T: Scalar>(x: &Tensor<T>, axis: usize, temp: f64, log: bool) -> Vec<T> {
    let (outer, len, inner) = axis_layout(x.shape(), axis);
    let inv_t = T::from_f64(1.0 / temp);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(src[at(j)] * inv_t);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (src[at(j)] * inv_t - max).exp();
                out[at(j)] = e;
                total += e;
            }
            if log {
                let log_total = total.ln();
                for j in 0..len {
                    out[at(j)] = src[at(j)] * inv_t - max - log_total;
                }
            } else {
                for j in 0..len {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
    }
    out
}

fn permute_data<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let shape = x.shape();
    let r = shape.len();
    let mut seen = [false; 4];
    if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::domain(
            "permute",
            format!("axes {axes:?} are not a permutation of rank {r}"),
        ));
    }
    let mut in_strides = vec![1usize; r];
    for d in (0..r.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; r];
    for _ in 0..src.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..r).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

fn inverse_perm(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * a * x * x)
}

/// Batched `[bt,m,k] · op([bt,·,·])`; `bt == 1` covers plain matmul.
fn bmm<T: Scalar>(
    a: &[T],
    b: &[T],
    bt: usize,
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) -> Vec<T> {
    if bt == 1 {
        return gemm(a, b, m, k, n, ta, tb);
    }
    let mut out = vec![T::zero(); bt * m * n];
    if m * n == 0 {
        return out;
    }
    exec::for_each_chunk_mut(&mut out, m * n, |bi, chunk| {
        let c = exec::sequential(|| {
            gemm(
                &a[bi * m * k..(bi + 1) * m * k],
                &b[bi * k * n..(bi + 1) * k * n],
                m,
                k,
                n,
                ta,
                tb,
            )
        });
        chunk.copy_from_slice(&c);
    });
    out
}

fn matmul_dims(
    op: &'static str,
    a: &[usize],
    b: &[usize],
    tb: bool,
    batched: bool,
) -> Result<(usize, usize, usize, usize)> {
    let want = if batched { 3 } else { 2 };
    if a.len() != want || b.len() != want {
        return Err(Error::dim(op, a, b));
    }
    let (bt, a2, b2) = if batched {
        if a[0] != b[0] {
            return Err(Error::dim(op, a, b));
        }
        (a[0], &a[1..], &b[1..])
    } else {
        (1, a, b)
    };
    let (m, k) = (a2[0], a2[1]);
    let (kb, n) = if tb { (b2[1], b2[0]) } else { (b2[0], b2[1]) };
    if k != kb {
        return Err(Error::dim(op, a, b));
    }
    Ok((bt, m, k, n))
}

pub(super) fn forward<T: Scalar>(op: &Op, nodes: &[Node<T>]) -> Result<Forward<T>> {
    let none = Vec::new;
    Ok(match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatMul { a, b, tb } | Op::BatchMatMul { a, b, tb } => {
            let batched = matches!(op, Op::BatchMatMul { .. });
            let (av, bv) = (val(nodes, *a), val(nodes, *b));
            let name = if batched { "batch_matmul" } else { "matmul" };
            let (bt, m, k, n) = matmul_dims(name, av.shape(), bv.shape(), *tb, batched)?;
            let data = bmm(av.data(), bv.data(), bt, m, k, n, false, *tb);
            let shape = if batched { vec![bt, m, n] } else { vec![m, n] };
            (Tensor::new(&shape, data)?, none())
        }
        Op::Transpose { x } => {
            let xv = val(nodes, *x);
            if xv.rank() != 2 {
                return Err(Error::dim("transpose", xv.shape(), &[]));
            }
            (permute_data(xv, &[1, 0])?, none())
        }
        Op::Add { a, b } => {
            let (av, bv) = (val(nodes, *a), val(nodes, *b));
            if av.shape() != bv.shape() {
                return Err(Error::dim("add", av.shape(), bv.shape()));
            }
            let mut out = av.clone();
            out.add_assign(bv);
            (out, none())
        }
        Op::AddBroadcast { x, b } => {
            let (xv, bv) = (val(nodes, *x), val(nodes, *b));
            let (xs, bs) = (xv.shape(), bv.shape());
            if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs || bv.is_empty() {
                return Err(Error::dim("add_broadcast", xs, bs));
            }
            let mut out = xv.clone();
            let bd = bv.data();
            for chunk in out.data_mut().chunks_mut(bd.len()) {
                for (o, &v) in chunk.iter_mut().zip(bd) {
                    *o += v;
                }
            }
            (out, none())
        }
        Op::Scale { x, c } => {
            let c = T::from_f64(*c);
            (val(nodes, *x).map(|v| v * c), none())
        }
        Op::MulScalar { x, s } => {
            let sv = val(nodes, *s);
            if sv.len() != 1 {
                return Err(Error::dim("mul_scalar", val(nodes, *x).shape(), sv.shape()));
            }
            let s = sv.data()[0];
            (val(nodes, *x).map(|v| v * s), none())
        }
        Op::Exp { x } => (val(nodes, *x).map(|v| v.exp()), none()),
        Op::Sum { x } => (Tensor::scalar(val(nodes, *x).sum()), none()),
        Op::Mean { x } => {
            let xv = val(nodes, *x);
            if xv.is_empty() {
                return Err(Error::Contract("mean of an empty tensor".into()));
            }
            let n = T::from_f64(xv.len() as f64);
            (Tensor::scalar(xv.sum() / n), none())
        }
        Op::Softmax {
            x,
            axis,
            temperature,
        }
        | Op::LogSoftmax {
            x,
            axis,
            temperature,
        } => {
            let log = matches!(op, Op::LogSoftmax { .. });
            let name = if log { "log_softmax" } else { "softmax" };
            let xv = val(nodes, *x);
            check_axis(name, xv.shape(), *axis)?;
            check_temperature(name, *temperature)?;
            let data = softmax_lanes(xv, *axis, *temperature, log);
            (Tensor::new(xv.shape(), data)?, none())
        }
        Op::L2Normalize { x } => {
            let xv = val(nodes, *x);
            let c = xv.last_dim();
            let eps = T::from_f64(L2_EPS);
            let mut out = xv.clone();
            let mut norms = Vec::with_capacity(xv.rows());
            if c > 0 {
                for row in out.data_mut().chunks_mut(c) {
                    let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let d = norm.max(eps);
                    row.iter_mut().for_each(|v| *v = *v / d);
                    norms.push(norm);
                }
            }
            (out, norms)
        }
        Op::LayerNorm { x, gain, bias } => {
            let (xv, gv, bv) = (val(nodes, *x), val(nodes, *gain), val(nodes, *bias));
            let c = xv.last_dim();
            if gv.shape() != [c] || bv.shape() != [c] {
                return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
            }
            let eps = T::from_f64(LAYER_NORM_EPS);
            let cn = T::from_f64(c as f64);
            let rows = xv.rows();
            let mut out = vec![T::zero(); xv.len()];
            let mut aux = vec![T::zero(); xv.len() + rows];
            for r in 0..rows {
                let row = xv.row(r);
                let mean = row.iter().copied().sum::<T>() / cn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
                let rstd = T::one() / (var + eps).sqrt();
                for j in 0..c {
                    let xh = (row[j] - mean) * rstd;
                    aux[r * c + j] = xh;
                    out[r * c + j] = xh * gv.data()[j] + bv.data()[j];
                }
                aux[xv.len() + r] = rstd;
            }
            (Tensor::new(xv.shape(), out)?, aux)
        }
        Op::Gelu { x } => (val(nodes, *x).map(gelu_scalar), none()),
        Op::WeightNormLinear {
            x,
            direction,
            scale,
        } => {
            let (xv, dv, sv) = (val(nodes, *x), val(nodes, *direction), val(nodes, *scale));
            if dv.rank() != 2 || sv.shape() != [dv.shape()[0]] || xv.last_dim() != dv.shape()[1] {
                return Err(Error::dim("weight_norm_linear", xv.shape(), dv.shape()));
            }
            let (out_dim, in_dim) = (dv.shape()[0], dv.shape()[1]);
            let (w, norms) = effective_weight(dv, sv);
            let rows = xv.rows();
            let y = gemm(xv.data(), &w, rows, in_dim, out_dim, false, true);
            let mut shape = xv.shape().to_vec();
            *shape.last_mut().unwrap() = out_dim;
            (Tensor::new(&shape, y)?, norms)
        }
        Op::CrossEntropySoft { target, pred } => {
            let (tv, pv) = (val(nodes, *target), val(nodes, *pred));
            if tv.shape() != pv.shape() || pv.rank() == 0 {
                return Err(Error::dim("cross_entropy_soft", tv.shape(), pv.shape()));
            }
            let clamp = T::from_f64(LOG_CLAMP);
            let k = pv.last_dim();
            let out: Vec<T> = (0..pv.rows())
                .map(|r| {
                    let (t, p) = (&tv.data()[r * k..(r + 1) * k], &pv.data()[r * k..(r + 1) * k]);
                    -t.iter()
                        .zip(p)
                        .map(|(&t, &p)| t * p.max(clamp).ln())
                        .sum::<T>()
                })
                .collect();
            let shape = &pv.shape()[..pv.rank() - 1];
            (Tensor::new(shape, out)?, none())
        }
        Op::Reshape { x, shape } => (val(nodes, *x).reshape(shape)?, none()),
        Op::Permute { x, axes } => (permute_data(val(nodes, *x), axes)?, none()),
        Op::GatherRows { x, indices } => (val(nodes, *x).select_rows(indices)?, none()),
        Op::PickPerRow { x, indices } => {
            let xv = val(nodes, *x);
            if xv.rank() != 2 || xv.shape()[0] != indices.len() {
                return Err(Error::dim("pick_per_row", xv.shape(), &[indices.len()]));
            }
            let c = xv.shape()[1];
            let mut out = Vec::with_capacity(indices.len());
            for (r, &j) in indices.iter().enumerate() {
                if j >= c {
                    return Err(Error::dim("pick_per_row", xv.shape(), &[j]));
                }
                out.push(xv.data()[r * c + j]);
            }
            (Tensor::vector(out), none())
        }
        Op::PrependToken { x, token } => {
            let (xv, tv) = (val(nodes, *x), val(nodes, *token));
            let s = xv.shape();
            if s.len() != 3 || tv.shape() != [s[2]] {
                return Err(Error::dim("prepend_token", s, tv.shape()));
            }
            let (b, p, w) = (s[0], s[1], s[2]);
            let mut out = Vec::with_capacity(b * (p + 1) * w);
            for bi in 0..b {
                out.extend_from_slice(tv.data());
                out.extend_from_slice(&xv.data()[bi * p * w..(bi + 1) * p * w]);
            }
            (Tensor::new(&[b, p + 1, w], out)?, none())
        }
        Op::SelectPosition { x, pos } => {
            let xv = val(nodes, *x);
            let s = xv.shape();
            if s.len() != 3 || *pos >= s[1] {
                return Err(Error::dim("select_position", s, &[*pos]));
            }
            let (b, l, w) = (s[0], s[1], s[2]);
            let mut out = Vec::with_capacity(b * w);
            for bi in 0..b {
                let at = (bi * l + pos) * w;
                out.extend_from_slice(&xv.data()[at..at + w]);
            }
            (Tensor::new(&[b, w], out)?, none())
        }
    })
}

/// Per-row `scale · direction / ‖direction‖` and the raw row norms.
fn effective_weight<T: Scalar>(dir: &Tensor<T>, scale: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let in_dim = dir.shape()[1];
    let eps = T::from_f64(L2_EPS);
    let mut w = dir.data().to_vec();
    let mut norms = Vec::with_capacity(dir.shape()[0]);
    for (o, row) in w.chunks_mut(in_dim.max(1)).enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        let f = scale.data()[o] / norm.max(eps);
        row.iter_mut().for_each(|v| *v *= f);
        norms.push(norm);
    }
    (w, norms)
}

struct Acc<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
}

impl<T: Scalar> Acc<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn add(&mut self, v: Var, g: Tensor<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn add_data(&mut self, v: Var, data: Vec<T>) -> Result<()> {
        let shape = self.nodes[v.0].value.shape().to_vec();
        self.add(v, Tensor::new(&shape, data)?);
        Ok(())
    }
}

pub(super) fn backward<T: Scalar>(
    node: &Node<T>,
    nodes: &[Node<T>],
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let mut acc = Acc { nodes, grads };
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, tb } | Op::BatchMatMul { a, b, tb } => {
            let batched = matches!(node.op, Op::BatchMatMul { .. });
            let (av, bv) = (val(nodes, *a), val(nodes, *b));
            let (bt, m, k, n) = matmul_dims("matmul", av.shape(), bv.shape(), *tb, batched)?;
            if acc.wants(*a) {
                // dA = G · op(B)ᵀ
                let da = bmm(g.data(), bv.data(), bt, m, n, k, false, !*tb);
                acc.add_data(*a, da)?;
            }
            if acc.wants(*b) {
                let db = if *tb {
                    // B stored [n,k]: dB = Gᵀ · A
                    bmm(g.data(), av.data(), bt, n, m, k, true, false)
                } else {
                    bmm(av.data(), g.data(), bt, k, m, n, true, false)
                };
                acc.add_data(*b, db)?;
            }
        }
        Op::Transpose { x } => acc.add(*x, permute_data(g, &[1, 0])?),
        Op::Add { a, b } => {
            acc.add(*a, g.clone());
            acc.add(*b, g.clone());
        }
        Op::AddBroadcast { x, b } => {
            acc.add(*x, g.clone());
            if acc.wants(*b) {
                let bl = val(nodes, *b).len();
                let mut db = vec![T::zero(); bl];
                for chunk in g.data().chunks(bl) {
                    for (d, &v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                acc.add_data(*b, db)?;
            }
        }
        Op::Scale { x, c } => {
            let c = T::from_f64(*c);
            acc.add(*x, g.map(|v| v * c));
        }
        Op::MulScalar { x, s } => {
            let xv = val(nodes, *x);
            let sv = val(nodes, *s).data()[0];
            acc.add(*x, g.map(|v| v * sv));
            if acc.wants(*s) {
                let ds: T = g.data().iter().zip(xv.data()).map(|(&a, &b)| a * b).sum();
                acc.add_data(*s, vec![ds])?;
            }
        }
        Op::Exp { x } => {
            let d = g.data().iter().zip(y.data()).map(|(&a, &b)| a * b).collect();
            acc.add_data(*x, d)?;
        }
        Op::Sum { x } => {
            let gv = g.data()[0];
            let shape = val(nodes, *x).shape().to_vec();
            acc.add(*x, Tensor::full(&shape, gv));
        }
        Op::Mean { x } => {
            let xv = val(nodes, *x);
            let gv = g.data()[0] / T::from_f64(xv.len() as f64);
            acc.add(*x, Tensor::full(xv.shape(), gv));
        }
        Op::Softmax {
            x,
            axis,
            temperature,
        }
        | Op::LogSoftmax {
            x,
            axis,
            temperature,
        } => {
            let log = matches!(node.op, Op::LogSoftmax { .. });
            let (outer, len, inner) = axis_layout(y.shape(), *axis);
            let inv_t = T::from_f64(1.0 / temperature);
            let (gd, yd) = (g.data(), y.data());
            let mut dx = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    if log {
                        // dx = (g - softmax · Σg) / T
                        let gs: T = (0..len).map(|j| gd[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = (gd[at(j)] - yd[at(j)].exp() * gs) * inv_t;
                        }
                    } else {
                        // dx = y ⊙ (g - Σ g·y) / T
                        let dot: T = (0..len).map(|j| gd[at(j)] * yd[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = yd[at(j)] * (gd[at(j)] - dot) * inv_t;
                        }
                    }
                }
            }
            acc.add_data(*x, dx)?;
        }
        Op::L2Normalize { x } => {
            let c = y.last_dim();
            let eps = T::from_f64(L2_EPS);
            let mut dx = vec![T::zero(); y.len()];
            for (r, &norm) in node.aux.iter().enumerate() {
                let (yr, gr) = (&y.data()[r * c..(r + 1) * c], &g.data()[r * c..(r + 1) * c]);
                let out = &mut dx[r * c..(r + 1) * c];
                if norm > eps {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        out[j] = (gr[j] - yr[j] * dot) / norm;
                    }
                } else {
                    for j in 0..c {
                        out[j] = gr[j] / eps;
                    }
                }
            }
            acc.add_data(*x, dx)?;
        }
        Op::LayerNorm { x, gain, bias } => {
            let c = y.last_dim();
            let n = y.len();
            let rows = y.rows();
            let (xhat, rstd) = node.aux.split_at(n);
            let gv = val(nodes, *gain).data();
            let gd = g.data();
            if acc.wants(*gain) || acc.wants(*bias) {
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for r in 0..rows {
                    for j in 0..c {
                        dg[j] += gd[r * c + j] * xhat[r * c + j];
                        db[j] += gd[r * c + j];
                    }
                }
                acc.add_data(*gain, dg)?;
                acc.add_data(*bias, db)?;
            }
            if acc.wants(*x) {
                let cn = T::from_f64(c as f64);
                let mut dx = vec![T::zero(); n];
                for r in 0..rows {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..c {
                        let dxh = gd[r * c + j] * gv[j];
                        m1 += dxh;
                        m2 += dxh * xhat[r * c + j];
                    }
                    m1 = m1 / cn;
                    m2 = m2 / cn;
                    for j in 0..c {
                        let dxh = gd[r * c + j] * gv[j];
                        dx[r * c + j] = rstd[r] * (dxh - m1 - xhat[r * c + j] * m2);
                    }
                }
                acc.add_data(*x, dx)?;
            }
        }
        Op::Gelu { x } => {
            let xv = val(nodes, *x);
            let d = g
                .data()
                .iter()
                .zip(xv.data())
                .map(|(&gv, &xv)| gv * gelu_grad(xv))
                .collect();
            acc.add_data(*x, d)?;
        }
        Op::WeightNormLinear {
            x,
            direction,
            scale,
        } => {
            let (xv, dv, sv) = (val(nodes, *x), val(nodes, *direction), val(nodes, *scale));
            let (out_dim, in_dim) = (dv.shape()[0], dv.shape()[1]);
            let rows = xv.rows();
            let (w, _) = effective_weight(dv, sv);
            if acc.wants(*x) {
                let dx = gemm(g.data(), &w, rows, out_dim, in_dim, false, false);
                acc.add_data(*x, dx)?;
            }
            if acc.wants(*direction) || acc.wants(*scale) {
                let dw = gemm(g.data(), xv.data(), out_dim, rows, in_dim, true, false);
                let eps = T::from_f64(L2_EPS);
                let mut ddir = vec![T::zero(); dv.len()];
                let mut dscale = vec![T::zero(); out_dim];
                for o in 0..out_dim {
                    let v = &dv.data()[o * in_dim..(o + 1) * in_dim];
                    let dwo = &dw[o * in_dim..(o + 1) * in_dim];
                    let norm = node.aux[o].max(eps);
                    let proj: T = v.iter().zip(dwo).map(|(&a, &b)| a * b).sum::<T>() / norm;
                    dscale[o] = proj;
                    let f = sv.data()[o] / norm;
                    for j in 0..in_dim {
                        ddir[o * in_dim + j] = f * (dwo[j] - v[j] / norm * proj);
                    }
                }
                acc.add_data(*direction, ddir)?;
                acc.add_data(*scale, dscale)?;
            }
        }
        Op::CrossEntropySoft { target, pred } => {
            let (tv, pv) = (val(nodes, *target), val(nodes, *pred));
            let k = pv.last_dim();
            let clamp = T::from_f64(LOG_CLAMP);
            let mut dp = vec![T::zero(); pv.len()];
            for r in 0..pv.rows() {
                let gr = g.data()[r];
                for j in r * k..(r + 1) * k {
                    let p = pv.data()[j];
                    if p > clamp {
                        dp[j] = -gr * tv.data()[j] / p;
                    }
                }
            }
            acc.add_data(*pred, dp)?;
        }
        Op::Reshape { x, .. } => {
            let shape = val(nodes, *x).shape().to_vec();
            acc.add(*x, g.reshape(&shape)?);
        }
        Op::Permute { x, axes } => acc.add(*x, permute_data(g, &inverse_perm(axes))?),
        Op::GatherRows { x, indices } => {
            let xv = val(nodes, *x);
            let c = xv.last_dim();
            let mut dx = vec![T::zero(); xv.len()];
            for (r, &i) in indices.iter().enumerate() {
                for j in 0..c {
                    dx[i * c + j] += g.data()[r * c + j];
                }
            }
            acc.add_data(*x, dx)?;
        }
        Op::PickPerRow { x, indices } => {
            let xv = val(nodes, *x);
            let c = xv.shape()[1];
            let mut dx = vec![T::zero(); xv.len()];
            for (r, &j) in indices.iter().enumerate() {
                dx[r * c + j] = g.data()[r];
            }
            acc.add_data(*x, dx)?;
        }
        Op::PrependToken { x, token } => {
            let s = y.shape();
            let (b, l, w) = (s[0], s[1], s[2]);
            let gd = g.data();
            if acc.wants(*token) {
                let mut dt = vec![T::zero(); w];
                for bi in 0..b {
                    for j in 0..w {
                        dt[j] += gd[bi * l * w + j];
                    }
                }
                acc.add_data(*token, dt)?;
            }
            if acc.wants(*x) {
                let mut dx = Vec::with_capacity(b * (l - 1) * w);
                for bi in 0..b {
                    dx.extend_from_slice(&gd[(bi * l + 1) * w..(bi + 1) * l * w]);
                }
                acc.add_data(*x, dx)?;
            }
        }
        Op::SelectPosition { x, pos } => {
            let xv = val(nodes, *x);
            let s = xv.shape();
            let (b, l, w) = (s[0], s[1], s[2]);
            let mut dx = vec![T::zero(); xv.len()];
            for bi in 0..b {
                let at = (bi * l + pos) * w;
                dx[at..at + w].copy_from_slice(&g.data()[bi * w..(bi + 1) * w]);
            }
            acc.add_data(*x, dx)?;
        }
    }
    Ok(())
}

/// Plain (tape-free) softmax along the last axis.
pub(crate) fn softmax_last<T: Scalar>(x: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
    check_temperature("softmax", temperature)?;
    if x.rank() == 0 {
        return Err(Error::dim("softmax", x.shape(), &[]));
    }
    let data = softmax_lanes(x, x.rank() - 1, temperature, false);
    Tensor::new(x.shape(), data)
}

#[cfg(test)]
pub(crate) fn gelu_value(x: f64) -> f64 {
    gelu_scalar(x)
}
