use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{max_relative_error, DEFAULT_TOLERANCE};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn simplex(rng: &mut ChaCha8Rng, k: usize) -> Tensor<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    Tensor::vector(raw.into_iter().map(|x| x / s).collect())
}

/// Straight from the definition, one log-sum-exp per row and column.
fn info_nce_oracle(u: &Tensor<f64>, v: &Tensor<f64>, tau: f64) -> f64 {
    let n = u.rows();
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let s: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| cos(u.row(i), v.row(j)) / tau).collect())
        .collect();
    let mut t2i = 0.0;
    let mut i2t = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| s[i][j].exp()).sum();
        t2i -= s[i][i] - row.ln();
        let col: f64 = (0..n).map(|j| s[j][i].exp()).sum();
        i2t -= s[i][i] - col.ln();
    }
    (t2i / n as f64 + i2t / n as f64) / 2.0
}

#[test]
fn cosine_examples() {
    let a = [1.0, 2.0, -0.5];
    assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
    assert!((cosine_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
    assert!(matches!(cosine_similarity(&a, &[1.0]), Err(Error::Dimension { .. })));
}

#[test]
fn single_pair_batch_has_zero_loss() {
    let u = Tensor::new(&[1, 3], vec![0.3, -1.0, 2.0]).unwrap();
    let v = Tensor::new(&[1, 3], vec![1.0, 1.0, 0.0]).unwrap();
    assert_eq!(info_nce_loss(&ContrastiveBatch::new(u, v, 0.07).unwrap()).unwrap(), 0.0);
}

#[test]
fn separable_batch_loss_vanishes_at_low_temperature() {
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 4 + i] = 1.0;
    }
    let u = Tensor::new(&[4, 4], eye.clone()).unwrap();
    let v = Tensor::new(&[4, 4], eye).unwrap();
    let loss = info_nce_loss(&ContrastiveBatch::new(u, v, 0.01).unwrap()).unwrap();
    assert!((0.0..1e-3).contains(&loss), "{loss}");
}

#[test]
fn info_nce_matches_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..5 {
        let u = random(&mut rng, &[3, 5]);
        let v = random(&mut rng, &[3, 5]);
        let tau = rng.gen_range(0.05..1.0);
        let got = info_nce_loss(&ContrastiveBatch::new(u.clone(), v.clone(), tau).unwrap()).unwrap();
        let want = info_nce_oracle(&u, &v, tau);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!(got >= 0.0);
    }
}

#[test]
fn batch_preconditions() {
    let z = Tensor::<f64>::zeros(&[0, 3]);
    assert!(ContrastiveBatch::new(z.clone(), z, 0.1).is_err());
    let a = Tensor::<f64>::zeros(&[2, 3]);
    let b = Tensor::<f64>::zeros(&[2, 4]);
    assert!(matches!(ContrastiveBatch::new(a.clone(), b, 0.1), Err(Error::Dimension { .. })));
    assert!(ContrastiveBatch::new(a.clone(), a, 0.0).is_err());
}

#[test]
fn info_nce_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let u = g.param(random(&mut rng, &[4, 3]));
    let v = g.param(random(&mut rng, &[4, 3]));
    let lt = g.param(Tensor::vector(vec![(0.3f64).ln()]));
    let loss = info_nce(&mut g, u, v, lt).unwrap();
    let err = max_relative_error(&mut g, loss, &[u, v, lt]).unwrap();
    assert!(err <= DEFAULT_TOLERANCE, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn info_nce_is_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random(&mut rng, &[4, 6]);
        let v = random(&mut rng, &[4, 6]);
        let base = info_nce_loss(&ContrastiveBatch::new(u.clone(), v.clone(), 0.2).unwrap()).unwrap();
        let scaled_u = info_nce_loss(&ContrastiveBatch::new(u.map(|x| x * c), v.clone(), 0.2).unwrap()).unwrap();
        let scaled_v = info_nce_loss(&ContrastiveBatch::new(u, v.map(|x| x * c), 0.2).unwrap()).unwrap();
        prop_assert!((base - scaled_u).abs() < 1e-9);
        prop_assert!((base - scaled_v).abs() < 1e-9);
    }

    #[test]
    fn info_nce_is_pair_permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random(&mut rng, &[5, 4]);
        let v = random(&mut rng, &[5, 4]);
        let mut perm: Vec<usize> = (0..5).collect();
        for i in (1..5).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let base = info_nce_loss(&ContrastiveBatch::new(u.clone(), v.clone(), 0.5).unwrap()).unwrap();
        let pu = u.select_rows(&perm).unwrap();
        let pv = v.select_rows(&perm).unwrap();
        let shuffled = info_nce_loss(&ContrastiveBatch::new(pu, pv, 0.5).unwrap()).unwrap();
        prop_assert!((base - shuffled).abs() < 1e-9);
    }
}

#[test]
fn teacher_distribution_examples() {
    let c = Tensor::vector(vec![0.5f64, -1.0, 2.0, 0.0]);
    let p = teacher_distribution(&c, &c, 0.04).unwrap();
    for &x in p.data() {
        assert!((x - 0.25).abs() < 1e-12);
    }

    let logits = Tensor::vector(vec![1.0, 0.6, 0.2]);
    let zero = Tensor::zeros(&[3]);
    let p = teacher_distribution(&logits, &zero, 0.04).unwrap();
    assert!(0.4 / 0.04 >= 10.0);
    assert!(p.data()[0] > 0.99);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = teacher_distribution(&random(&mut rng, &[3, 16]), &random(&mut rng, &[16]), 0.04).unwrap();
    for r in 0..3 {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert!(teacher_distribution(&logits, &Tensor::zeros(&[4]), 0.04).is_err());
}

#[test]
fn student_distribution_examples() {
    let p = student_distribution(&Tensor::<f64>::zeros(&[5]), 0.1).unwrap();
    assert!(p.data().iter().all(|&x| (x - 0.2).abs() < 1e-12));

    let logits = Tensor::vector(vec![0.1f64, 2.0, -1.0]);
    let p = student_distribution(&logits, 1.0).unwrap();
    let z: f64 = logits.data().iter().map(|x| x.exp()).sum();
    for (a, l) in p.data().iter().zip(logits.data()) {
        assert!((a - l.exp() / z).abs() < 1e-12);
    }
    let p = student_distribution(&logits, 0.1).unwrap();
    assert!(p.data()[1] > p.data()[0] && p.data()[0] > p.data()[2]);
    assert!(matches!(student_distribution(&logits, 0.0), Err(Error::Domain { .. })));
    assert!(matches!(student_distribution(&logits, -1.0), Err(Error::Domain { .. })));
}

#[test]
fn pair_count_for_two_global_and_eight_local_views() {
    let pairs = distillation_pairs(2, 10);
    assert_eq!(pairs.len(), 18);
    assert!(pairs.iter().all(|(t, s)| t != s));
    let k = 6;
    let uniform = Tensor::full(&[k], 1.0 / k as f64);
    let set = DistributionSet {
        teacher: vec![uniform.clone(); 2],
        student: vec![uniform; 10],
    };
    let l = self_distillation_loss(&set, PairReduction::Mean).unwrap();
    assert!((l - (k as f64).ln()).abs() < 1e-12);
    let raw = self_distillation_loss(&set, PairReduction::Sum).unwrap();
    assert!((raw - 18.0 * (k as f64).ln()).abs() < 1e-9);
}

#[test]
fn distillation_matches_brute_force_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let k = 7;
    let set = DistributionSet {
        teacher: (0..2).map(|_| simplex(&mut rng, k)).collect(),
        student: (0..5).map(|_| simplex(&mut rng, k)).collect(),
    };
    let mut total = 0.0;
    let mut count = 0;
    for t in 0..2 {
        for s in 0..5 {
            if t == s {
                continue;
            }
            for j in 0..k {
                total -= set.teacher[t].data()[j] * set.student[s].data()[j].ln();
            }
            count += 1;
        }
    }
    let got = self_distillation_loss(&set, PairReduction::Mean).unwrap();
    assert!((got - total / count as f64).abs() < 1e-6);
}

#[test]
fn distillation_needs_two_global_views() {
    let u = Tensor::full(&[3], 1.0 / 3.0);
    let set = DistributionSet {
        teacher: vec![u.clone()],
        student: vec![u.clone(), u],
    };
    assert!(matches!(
        self_distillation_loss(&set, PairReduction::Mean),
        Err(Error::Contract(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distillation_bounded_below_by_teacher_entropy(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 5;
        let set = DistributionSet {
            teacher: (0..2).map(|_| simplex(&mut rng, k)).collect(),
            student: (0..4).map(|_| simplex(&mut rng, k)).collect(),
        };
        let min_h = set.teacher.iter().map(mean_entropy).fold(f64::INFINITY, f64::min);
        prop_assert!(self_distillation_loss(&set, PairReduction::Mean).unwrap() >= min_h - 1e-12);

        let p = set.teacher[0].clone();
        let matched = DistributionSet { teacher: vec![p.clone(); 2], student: vec![p.clone(); 4] };
        let l = self_distillation_loss(&matched, PairReduction::Mean).unwrap();
        prop_assert!((l - mean_entropy(&p)).abs() < 1e-12);
    }
}

#[test]
fn graph_distillation_agrees_with_plain_and_has_exact_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, k, views) = (3, 5, 4);
    let center = random(&mut rng, &[k]);
    let t_logits: Vec<Tensor<f64>> = (0..2).map(|_| random(&mut rng, &[b, k])).collect();
    let s_logits: Vec<Tensor<f64>> = (0..views).map(|_| random(&mut rng, &[b, k])).collect();

    let mut g = Graph::new();
    let teacher: Vec<Var> = t_logits
        .iter()
        .map(|t| g.constant(teacher_distribution(t, &center, 0.04).unwrap()))
        .collect();
    let student: Vec<Var> = s_logits.iter().map(|s| g.param(s.clone())).collect();
    let loss = self_distillation(&mut g, &teacher, &student, 0.1, PairReduction::Mean).unwrap();

    // Plain evaluation, one image at a time, then averaged over the batch.
    let mut want = 0.0;
    for r in 0..b {
        let row = |t: &Tensor<f64>| Tensor::vector(t.row(r).to_vec());
        let set = DistributionSet {
            teacher: t_logits.iter().map(|t| teacher_distribution(&row(t), &center, 0.04).unwrap()).collect(),
            student: s_logits.iter().map(|s| student_distribution(&row(s), 0.1).unwrap()).collect(),
        };
        want += self_distillation_loss(&set, PairReduction::Mean).unwrap() / b as f64;
    }
    assert!((g.value(loss).item().unwrap() - want).abs() < 1e-9);

    let grads = g.backward(loss).unwrap();
    for t in &teacher {
        assert!(grads.get(*t).is_none());
    }
    let err = max_relative_error(&mut g, loss, &student).unwrap();
    assert!(err <= DEFAULT_TOLERANCE, "{err}");
}

fn params(values: &[f64]) -> ModelParams<f64> {
    ModelParams::from_parts(
        (0..values.len()).map(|i| format!("p{i}")).collect(),
        values.iter().map(|&v| Tensor::vector(vec![v])).collect(),
    )
    .unwrap()
}

fn teacher(p: ModelParams<f64>, lambda: f64) -> TeacherState<f64> {
    let cfg = TeacherConfig {
        ema_momentum: lambda,
        ..Default::default()
    };
    TeacherState::new(&p, 3, &cfg).unwrap()
}

#[test]
fn ema_examples() {
    let student = params(&[0.0, 5.0]);
    let mut t = teacher(params(&[1.0, -2.0]), 1.0);
    let before = t.params.clone();
    t.ema_update(&student).unwrap();
    assert_eq!(t.params, before);

    let mut t = teacher(params(&[1.0, -2.0]), 0.0);
    t.ema_update(&student).unwrap();
    assert_eq!(t.params, student);

    let mut t = teacher(params(&[1.0]), 0.996);
    t.ema_update(&params(&[0.0])).unwrap();
    assert_eq!(t.params.tensors()[0].data()[0], 0.996);

    let mut t = teacher(params(&[1.0]), 0.5);
    assert!(matches!(t.ema_update(&student), Err(Error::Contract(_))));
}

#[test]
fn two_ema_steps_compose_for_fixed_student() {
    let s = params(&[0.25, -3.0]);
    let (l1, l2) = (0.9, 0.7);
    let mut t = teacher(params(&[1.0, 4.0]), l1);
    t.ema_update(&s).unwrap();
    t.lambda = l2;
    t.ema_update(&s).unwrap();
    for (i, (&th, &st)) in [1.0, 4.0].iter().zip(&[0.25, -3.0]).enumerate() {
        let want = l1 * l2 * th + (1.0 - l1 * l2) * st;
        assert!((t.params.tensors()[i].data()[0] - want).abs() < 1e-12);
    }
}

#[test]
fn center_update_examples() {
    let mut t = teacher(params(&[0.0]), 0.996);
    let batch = Tensor::new(&[2, 3], vec![0.0, 2.0, 1.0, 2.0, 0.0, 1.0]).unwrap();
    t.update_center(&batch).unwrap();
    for &c in t.center.data() {
        assert!((c - 0.1).abs() < 1e-12);
    }

    t.center_momentum = 1.0;
    let before = t.center.clone();
    t.update_center(&batch).unwrap();
    assert_eq!(t.center, before);

    t.center_momentum = 0.0;
    t.update_center(&batch).unwrap();
    assert_eq!(t.center.data(), &[1.0, 1.0, 1.0]);

    assert!(matches!(t.update_center(&Tensor::zeros(&[0, 3])), Err(Error::Contract(_))));
    assert!(t.update_center(&Tensor::zeros(&[2, 4])).is_err());
}

#[test]
fn combined_loss_examples() {
    assert_eq!(combined_loss(0.0, 0.0).unwrap(), 0.0);
    assert_eq!(combined_loss(2.0, 4.0).unwrap(), 3.0);
    assert!(matches!(combined_loss(f64::NAN, 1.0), Err(Error::Numeric(_))));
    assert!(matches!(combined_loss(1.0, f64::INFINITY), Err(Error::Numeric(_))));
}

#[test]
fn teacher_config_validation() {
    assert!(TeacherConfig { ema_momentum: 1.5, ..Default::default() }.validate().is_err());
    assert!(TeacherConfig { tau_t: 0.0, ..Default::default() }.validate().is_err());
    assert!(TeacherConfig::default().validate().is_ok());
}
