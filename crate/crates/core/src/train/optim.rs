use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moments, one tensor per parameter, and the number of
/// updates taken so far.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(params: &[Tensor<f32>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
///
/// ```text
/// p ← p − lr·wd·p
/// m ← β1 m + (1 − β1) g,   v ← β2 v + (1 − β2) g²
/// p ← p − lr · m̂ / (√v̂ + ε)
/// ```
///
/// `decay[i]` selects which tensors receive weight decay and `frozen[i]`
/// skips a tensor entirely (its moments stay untouched).
pub fn adamw_step(
    params: &mut [Tensor<f32>],
    grads: &[Tensor<f32>],
    state: &mut AdamState,
    hp: &AdamWHyper,
    decay: &[bool],
    frozen: &[bool],
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n || decay.len() != n || frozen.len() != n {
        return Err(Error::Contract(format!(
            "AdamW over {n} parameters got {} gradients, {} moments",
            grads.len(),
            state.m.len()
        )));
    }
    for i in 0..n {
        let s = params[i].shape();
        if grads[i].shape() != s || state.m[i].shape() != s || state.v[i].shape() != s {
            return Err(Error::Contract(format!(
                "AdamW parameter {i}: shape {s:?} vs gradient {:?}",
                grads[i].shape()
            )));
        }
    }
    state.t += 1;
    let (b1, b2) = hp.betas;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..n {
        if frozen[i] {
            continue;
        }
        let wd = if decay[i] { hp.weight_decay } else { 0.0 };
        let p = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, &g) in grads[i].data().iter().enumerate() {
            let g = g as f64;
            let mut pj = p[j] as f64;
            pj -= hp.lr * wd * pj;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * g * g;
            m[j] = mj as f32;
            v[j] = vj as f32;
            pj -= hp.lr * (mj / bc1) / ((vj / bc2).sqrt() + hp.eps);
            p[j] = pj as f32;
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `base_lr` over `warmup_steps`, then cosine decay
/// to 0 at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, warmup_steps: u64, base_lr: f64) -> f64 {
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return base_lr;
    }
    let progress = ((step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64).min(1.0);
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hp(lr: f64, wd: f64) -> AdamWHyper {
        AdamWHyper {
            lr,
            betas: (0.9, 0.98),
            eps: 1e-6,
            weight_decay: wd,
        }
    }

    fn scalar(v: f32) -> Vec<Tensor<f32>> {
        vec![Tensor::vector(vec![v])]
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::vector(vec![1.5f32, -2.0])];
        let g = vec![Tensor::zeros(&[2])];
        let mut s = AdamState::zeros_like(&p);
        for _ in 0..3 {
            adamw_step(&mut p, &g, &mut s, &hp(0.1, 0.0), &[true], &[false]).unwrap();
        }
        assert_eq!(p[0].data(), &[1.5, -2.0]);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let (p0, g0, lr) = (0.5f64, 0.3f64, 0.01f64);
        let mut p = scalar(p0 as f32);
        let mut s = AdamState::zeros_like(&p);
        adamw_step(&mut p, &scalar(g0 as f32), &mut s, &hp(lr, 0.0), &[true], &[false]).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        let g = g0 as f32 as f64;
        let want = p0 as f32 as f64 - lr * g / (g.abs() + 1e-6);
        assert!((p[0].data()[0] as f64 - want).abs() < 1e-7);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut p = scalar(2.0);
        let mut s = AdamState::zeros_like(&p);
        adamw_step(&mut p, &scalar(0.0), &mut s, &hp(1.0, 0.1), &[true], &[false]).unwrap();
        assert!((p[0].data()[0] - 1.8).abs() < 1e-6);

        let mut p = scalar(2.0);
        adamw_step(&mut p, &scalar(0.0), &mut s, &hp(1.0, 0.1), &[false], &[false]).unwrap();
        assert_eq!(p[0].data()[0], 2.0);
    }

    #[test]
    fn frozen_tensors_are_untouched() {
        let mut p = scalar(1.0);
        let mut s = AdamState::zeros_like(&p);
        adamw_step(&mut p, &scalar(5.0), &mut s, &hp(1.0, 0.1), &[true], &[true]).unwrap();
        assert_eq!(p[0].data()[0], 1.0);
        assert_eq!(s.m[0].data()[0], 0.0);
    }

    #[test]
    fn structural_mismatch_is_a_contract_error() {
        let mut p = scalar(1.0);
        let mut s = AdamState::zeros_like(&p);
        let bad = vec![Tensor::zeros(&[2])];
        assert!(matches!(
            adamw_step(&mut p, &bad, &mut s, &hp(1.0, 0.0), &[true], &[false]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            adamw_step(&mut p, &[], &mut s, &hp(1.0, 0.0), &[true], &[false]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0, 100, 10, 0.1), 0.0);
        assert!((lr_schedule(10, 100, 10, 0.1) - 0.1).abs() < 1e-15);
        assert!(lr_schedule(100, 100, 10, 0.1).abs() < 1e-9);
        assert!((lr_schedule(5, 100, 10, 0.1) - 0.05).abs() < 1e-15);
        assert!((lr_schedule(55, 100, 10, 0.1) - 0.05).abs() < 1e-12);
        assert_eq!(lr_schedule(0, 100, 0, 0.1), 0.1);
    }

    proptest! {
        #[test]
        fn schedule_bounded_and_decreasing_after_warmup(total in 1u64..500, warm_frac in 0.0f64..1.0, s in 0u64..500) {
            let warm = (total as f64 * warm_frac) as u64;
            let s = s.min(total);
            let lr = lr_schedule(s, total, warm, 1.0);
            prop_assert!((0.0..=1.0).contains(&lr));
            if s >= warm && s < total {
                prop_assert!(lr_schedule(s + 1, total, warm, 1.0) <= lr + 1e-12);
            }
        }
    }
}
