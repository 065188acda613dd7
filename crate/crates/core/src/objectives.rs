//! Training objectives: symmetric InfoNCE over caption/image pairs,
//! multi-crop self-distillation against an EMA teacher, and the teacher's
//! centering and momentum updates.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_last, Graph, Var};
use crate::encoders::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_TAU_S: f64 = 0.1;
pub const DEFAULT_TAU_T: f64 = 0.04;
pub const DEFAULT_CENTER_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EMA_MOMENTUM: f64 = 0.996;

/// Cosine similarity with each norm floored at `1e-12`.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine_similarity", &[a.len()], &[b.len()]));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
    let na = a.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt().max(1e-12);
    let nb = b.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt().max(1e-12);
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Matched caption (`u`) and image (`v`) embeddings, row `i` of each forming
/// a positive pair.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<T> {
    pub u: Tensor<T>,
    pub v: Tensor<T>,
    pub tau: f64,
}

impl<T: Scalar> ContrastiveBatch<T> {
    pub fn new(u: Tensor<T>, v: Tensor<T>, tau: f64) -> Result<Self> {
        if u.rank() != 2 || u.shape() != v.shape() {
            return Err(Error::dim("contrastive_batch", u.shape(), v.shape()));
        }
        if u.shape()[0] == 0 {
            return Err(Error::domain("info_nce_loss", "empty batch"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::domain("info_nce_loss", format!("temperature must be positive, got {tau}")));
        }
        Ok(Self { u, v, tau })
    }
}

/// Symmetric InfoNCE on the tape. `u`, `v` are `[N, m]`; the logits are
/// `cos(u_i, v_j) · exp(-log_tau)`.
pub fn info_nce<T: Scalar>(g: &mut Graph<T>, u: Var, v: Var, log_tau: Var) -> Result<Var> {
    let n = g.value(u).shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::domain("info_nce_loss", "empty batch"));
    }
    let un = g.l2_normalize(u)?;
    let vn = g.l2_normalize(v)?;
    let sim = g.matmul_nt(un, vn)?;
    let neg = g.scale(log_tau, -1.0)?;
    let inv_tau = g.exp(neg)?;
    let logits = g.mul_scalar(sim, inv_tau)?;
    let diag: Vec<usize> = (0..n).collect();
    // Caption i against all images (rows), image j against all captions (columns).
    let t2i = g.log_softmax(logits, 1, 1.0)?;
    let t2i = g.pick_per_row(t2i, &diag)?;
    let t2i = g.mean(t2i)?;
    let i2t = g.log_softmax(logits, 0, 1.0)?;
    let i2t = g.pick_per_row(i2t, &diag)?;
    let i2t = g.mean(i2t)?;
    let total = g.add(t2i, i2t)?;
    g.scale(total, -0.5)
}

pub fn info_nce_loss<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<f64> {
    let mut g = Graph::new();
    let u = g.constant(batch.u.clone());
    let v = g.constant(batch.v.clone());
    let lt = g.constant(Tensor::vector(vec![T::from_f64(batch.tau.ln())]));
    let loss = info_nce(&mut g, u, v, lt)?;
    Ok(g.value(loss).item()?.as_f64())
}

/// `softmax((logits - center) / tau_t)` along the last axis.
pub fn teacher_distribution<T: Scalar>(logits: &Tensor<T>, center: &Tensor<T>, tau_t: f64) -> Result<Tensor<T>> {
    let k = center.len();
    if logits.rank() == 0 || logits.last_dim() != k {
        return Err(Error::dim("teacher_distribution", logits.shape(), center.shape()));
    }
    if !(tau_t > 0.0) {
        return Err(Error::domain("teacher_distribution", format!("tau_t must be positive, got {tau_t}")));
    }
    let c = center.data();
    let mut centered = logits.clone();
    for row in centered.data_mut().chunks_mut(k) {
        for (x, &ci) in row.iter_mut().zip(c) {
            *x -= ci;
        }
    }
    softmax_last(&centered, tau_t)
}

/// `softmax(logits / tau_s)` along the last axis.
pub fn student_distribution<T: Scalar>(logits: &Tensor<T>, tau_s: f64) -> Result<Tensor<T>> {
    if !(tau_s > 0.0) {
        return Err(Error::domain("student_distribution", format!("tau_s must be positive, got {tau_s}")));
    }
    softmax_last(logits, tau_s)
}

/// How the per-pair cross-entropies are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairReduction {
    #[default]
    Mean,
    Sum,
}

/// Ordered `(teacher_view, student_view)` pairs with distinct indices.
pub fn distillation_pairs(n_teacher: usize, n_student: usize) -> Vec<(usize, usize)> {
    (0..n_teacher)
        .flat_map(|t| (0..n_student).filter(move |&s| s != t).map(move |s| (t, s)))
        .collect()
}

/// Teacher (global views only) and student (all views) distributions for
/// one image. Teacher view `i` is the same crop as student view `i`.
#[derive(Debug, Clone)]
pub struct DistributionSet<T> {
    pub teacher: Vec<Tensor<T>>,
    pub student: Vec<Tensor<T>>,
}

impl<T: Scalar> DistributionSet<T> {
    fn check(&self) -> Result<usize> {
        if self.teacher.len() < 2 {
            return Err(Error::Contract(format!(
                "self-distillation needs at least 2 global views, got {}",
                self.teacher.len()
            )));
        }
        if self.student.len() < self.teacher.len() {
            return Err(Error::Contract(format!(
                "{} student views for {} teacher views",
                self.student.len(),
                self.teacher.len()
            )));
        }
        let k = self.teacher[0].len();
        for d in self.teacher.iter().chain(&self.student) {
            if d.len() != k {
                return Err(Error::dim("self_distillation_loss", d.shape(), &[k]));
            }
        }
        Ok(k)
    }
}

pub fn self_distillation_loss<T: Scalar>(dists: &DistributionSet<T>, reduction: PairReduction) -> Result<f64> {
    dists.check()?;
    let pairs = distillation_pairs(dists.teacher.len(), dists.student.len());
    let total: f64 = pairs
        .iter()
        .map(|&(t, s)| {
            let (pt, ps) = (dists.teacher[t].data(), dists.student[s].data());
            -pt.iter()
                .zip(ps)
                .map(|(&a, &b)| a.as_f64() * b.as_f64().max(1e-12).ln())
                .sum::<f64>()
        })
        .sum();
    Ok(match reduction {
        PairReduction::Mean => total / pairs.len() as f64,
        PairReduction::Sum => total,
    })
}

/// Self-distillation on the tape. `teacher` holds `[B, K]` teacher
/// probabilities per global view (constants); `student_logits` holds
/// `[B, K]` student logits per view. Each pair's cross-entropy is averaged
/// over the batch.
pub fn self_distillation<T: Scalar>(
    g: &mut Graph<T>,
    teacher: &[Var],
    student_logits: &[Var],
    tau_s: f64,
    reduction: PairReduction,
) -> Result<Var> {
    if teacher.len() < 2 {
        return Err(Error::Contract(format!(
            "self-distillation needs at least 2 global views, got {}",
            teacher.len()
        )));
    }
    if student_logits.len() < teacher.len() {
        return Err(Error::Contract("fewer student views than teacher views".into()));
    }
    if !(tau_s > 0.0) {
        return Err(Error::domain("student_distribution", format!("tau_s must be positive, got {tau_s}")));
    }
    let student: Vec<Var> = student_logits
        .iter()
        .map(|&s| g.softmax(s, 1, tau_s))
        .collect::<Result<_>>()?;
    let pairs = distillation_pairs(teacher.len(), student.len());
    let mut total: Option<Var> = None;
    for (t, s) in &pairs {
        let ce = g.cross_entropy_soft(teacher[*t], student[*s])?;
        let ce = g.mean(ce)?;
        total = Some(match total {
            Some(acc) => g.add(acc, ce)?,
            None => ce,
        });
    }
    let total = total.expect("at least two pairs");
    match reduction {
        PairReduction::Mean => g.scale(total, 1.0 / pairs.len() as f64),
        PairReduction::Sum => Ok(total),
    }
}

/// `(contrastive + distillation) / 2`.
pub fn combined_loss(contrastive: f64, distillation: f64) -> Result<f64> {
    if !contrastive.is_finite() || !distillation.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss component (contrastive {contrastive}, distillation {distillation})"
        )));
    }
    Ok((contrastive + distillation) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub ema_momentum: f64,
    pub tau_t: f64,
    pub center_momentum: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            ema_momentum: DEFAULT_EMA_MOMENTUM,
            tau_t: DEFAULT_TAU_T,
            center_momentum: DEFAULT_CENTER_MOMENTUM,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ema_momentum) || !(0.0..=1.0).contains(&self.center_momentum) {
            return Err(Error::Validation("teacher momenta must lie in [0, 1]".into()));
        }
        if !(self.tau_t > 0.0) {
            return Err(Error::Validation(format!("tau_t must be positive, got {}", self.tau_t)));
        }
        Ok(())
    }
}

/// EMA teacher: parameters, logit center and sharpening temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState<T> {
    pub params: ModelParams<T>,
    pub center: Tensor<T>,
    pub lambda: f64,
    pub tau_t: f64,
    pub center_momentum: f64,
}

impl<T: Scalar> TeacherState<T> {
    /// A teacher initialized as a copy of the student, with a zero center.
    pub fn new(student: &ModelParams<T>, k: usize, cfg: &TeacherConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            params: student.clone(),
            center: Tensor::zeros(&[k]),
            lambda: cfg.ema_momentum,
            tau_t: cfg.tau_t,
            center_momentum: cfg.center_momentum,
        })
    }

    pub fn distribution(&self, logits: &Tensor<T>) -> Result<Tensor<T>> {
        teacher_distribution(logits, &self.center, self.tau_t)
    }

    /// `θ_t ← λ θ_t + (1 - λ) θ_s`, tensor by tensor.
    pub fn ema_update(&mut self, student: &ModelParams<T>) -> Result<()> {
        self.params
            .check_same_structure(student)
            .map_err(|e| Error::Contract(format!("teacher/student mismatch: {e}")))?;
        let l = T::from_f64(self.lambda);
        let one_minus = T::from_f64(1.0 - self.lambda);
        for (t, s) in self.params.tensors_mut().iter_mut().zip(student.tensors()) {
            for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
                *a = l * *a + one_minus * b;
            }
        }
        Ok(())
    }

    /// `c ← m c + (1 - m) mean_b(logits[b])` for `[B, K]` teacher logits.
    pub fn update_center(&mut self, logits: &Tensor<T>) -> Result<()> {
        let k = self.center.len();
        if logits.rank() != 2 || logits.shape()[1] != k {
            return Err(Error::dim("update_center", logits.shape(), &[k]));
        }
        let b = logits.shape()[0];
        if b == 0 {
            return Err(Error::Contract("update_center on an empty batch".into()));
        }
        let m = self.center_momentum;
        for (j, c) in self.center.data_mut().iter_mut().enumerate() {
            let mean = (0..b).map(|r| logits.data()[r * k + j].as_f64()).sum::<f64>() / b as f64;
            *c = T::from_f64(m * c.as_f64() + (1.0 - m) * mean);
        }
        Ok(())
    }
}

/// Mean Shannon entropy (nats) of the rows of a `[.., K]` distribution tensor.
pub fn mean_entropy<T: Scalar>(probs: &Tensor<T>) -> f64 {
    let k = probs.last_dim();
    let rows = probs.len() / k.max(1);
    if rows == 0 {
        return 0.0;
    }
    probs
        .data()
        .chunks(k)
        .map(|r| {
            -r.iter()
                .map(|p| p.as_f64())
                .filter(|&p| p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / rows as f64
}

#[cfg(test)]
mod tests;
