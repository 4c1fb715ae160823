//! Monte-Carlo and summation oracles for the noise schedules and data streams.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{direct_local_grad, fd_grad};
use ldp_gradtrack::linalg::{dist2, norm2};
use ldp_gradtrack::noise::{LearnerNoise, NoisePlan, NoiseSchedule, NoiseTag};
use ldp_gradtrack::problem::{global_grad, grad_empirical, DataPoint, LossModel, SampleBuffer, StreamProblem};

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn unit_schedule_has_zero_mean_unit_variance() {
    let s = NoiseSchedule::new(1.0, 0.55);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs = s.sample(0, 1_000_000, &mut rng);
    let (mean, var) = moments(&xs);
    assert!(mean.abs() < 0.005, "{mean}");
    assert!(var > 0.99 && var < 1.01, "{var}");
}

#[test]
fn variance_follows_schedule() {
    let s = NoiseSchedule::new(0.7, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in [3, 40, 900] {
        let (_, var) = moments(&s.sample(t, 100_000, &mut rng));
        let want = s.std_at(t).powi(2);
        assert!((var / want - 1.0).abs() < 0.03, "t={t}: {var} vs {want}");
    }
}

#[test]
fn std_is_strictly_decreasing() {
    let s = NoiseSchedule::new(1.0, 0.51);
    let v: Vec<f64> = (0..10_000).map(|t| s.std_at(t)).collect();
    assert!(v.windows(2).all(|w| w[1] < w[0]));
    assert!(v[9_999] < 0.01);
}

#[test]
fn plan_draws_do_not_depend_on_evaluation_order() {
    let sched = LearnerNoise { zeta: NoiseSchedule::new(1.0, 0.55), theta: NoiseSchedule::new(0.5, 0.58) };
    let plan = NoisePlan::uniform(4, sched, 77);
    let keys: Vec<(usize, NoiseTag, usize)> =
        (0..4).flat_map(|i| (0..20).flat_map(move |t| [(i, NoiseTag::Zeta, t), (i, NoiseTag::Theta, t)])).collect();
    let forward: Vec<Vec<f64>> = keys.iter().map(|&(i, g, t)| plan.draw(i, g, t, 3)).collect();
    let backward: Vec<Vec<f64>> = keys.iter().rev().map(|&(i, g, t)| plan.draw(i, g, t, 3)).collect();
    assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
    assert_ne!(plan.draw(0, NoiseTag::Zeta, 0, 3), plan.draw(0, NoiseTag::Theta, 0, 3));
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    let model = LossModel::LogisticL2 { reg: 0.1 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = DataPoint {
            x: (0..4).map(|_| rng.random_range(-1.5..1.5)).collect(),
            y: if rng.random::<bool>() { 1.0 } else { -1.0 },
        };
        let (_, g) = ldp_gradtrack::problem::loss_grad(&model, &theta, &p).unwrap();
        let fd = fd_grad(&model, &theta, &p, 1e-6);
        let err = dist2(&g, &fd) / norm2(&g).max(1.0);
        assert!(err < 1e-6, "{err}");
    }
}

#[test]
fn logistic_empirical_gradient_matches_direct_sum() {
    let p = StreamProblem::logistic_synthetic(3, 4, 0.05, 1.0, 8);
    let mut buf = SampleBuffer::new(3, 4);
    for _ in 0..10 {
        buf.append_round(&p);
    }
    let theta = vec![0.3, -0.2, 0.1, 0.5];
    for i in 0..3 {
        let got = grad_empirical(&p, &buf, i, &theta, 9).unwrap().grad;
        let want = direct_local_grad(&p, i, &theta, 9);
        assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12), "{got:?} vs {want:?}");
    }
}

#[test]
fn quadratic_gradient_noise_variance_is_data_variance() {
    let std = 1.3;
    let p = StreamProblem::quadratic(2, 3, std, 1.0, 5);
    let theta = vec![0.2, 0.4, -0.1];
    let mean_grad = direct_local_grad(&p, 0, &theta, 9_999);
    let mut buf = SampleBuffer::new(2, 3);
    for _ in 0..10_000 {
        buf.append_round(&p);
    }
    let exact = grad_empirical(&p, &buf, 0, &theta, 9_999).unwrap().grad;
    assert!(dist2(&exact, &mean_grad) < 1e-10);
    let sq: f64 = buf
        .points(0)
        .iter()
        .map(|pt| {
            let (g, _) = p.sample_grad(&theta, pt).unwrap();
            let means = match &p.source {
                ldp_gradtrack::problem::StreamSource::Gaussian { means, .. } => means[0].clone(),
                _ => unreachable!(),
            };
            let pop: Vec<f64> = theta.iter().zip(&means).map(|(a, b)| a - b).collect();
            dist2(&g, &pop).powi(2)
        })
        .sum::<f64>()
        / 10_000.0;
    let want = 3.0 * std * std;
    assert!((sq / want - 1.0).abs() < 0.05, "{sq} vs {want}");
    let kappa = p.constants().kappa.unwrap();
    assert!((kappa * kappa - want).abs() < 1e-12);
}

#[test]
fn logistic_global_gradient_is_monte_carlo_consistent() {
    let p = StreamProblem::logistic_synthetic(4, 3, 0.01, 1.0, 12);
    let theta = vec![0.5, -0.5, 0.2];
    let a = global_grad(&p, &theta, 100_000, 1).unwrap();
    let b = global_grad(&p, &theta, 1_000_000, 2).unwrap();
    for k in 0..3 {
        let se = (a.std_err[k].powi(2) + b.std_err[k].powi(2)).sqrt();
        assert!((a.mean[k] - b.mean[k]).abs() < 3.0 * se, "coord {k}: {} vs {} (se {se})", a.mean[k], b.mean[k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn empirical_gradient_is_a_convex_combination(seed in any::<u64>(), t in 0usize..30, th in proptest::collection::vec(-3.0f64..3.0, 3)) {
        let p = StreamProblem::logistic_synthetic(2, 3, 0.0, 1.0, seed);
        let mut buf = SampleBuffer::new(2, 3);
        for _ in 0..=t {
            buf.append_round(&p);
        }
        let g = grad_empirical(&p, &buf, 1, &th, t).unwrap().grad;
        let bound = buf.points(1).iter().map(|pt| norm2(&p.sample_grad(&th, pt).unwrap().0)).fold(0.0, f64::max);
        prop_assert!(norm2(&g) <= bound + 1e-12);
    }

    #[test]
    fn streams_replay_identically(seed in any::<u64>(), i in 0usize..3, k in 0usize..500) {
        let p = StreamProblem::quadratic(3, 2, 1.0, 1.0, seed);
        prop_assert_eq!(p.sample(i, k), p.sample(i, k));
        let q = StreamProblem::quadratic(3, 2, 1.0, 1.0, seed);
        prop_assert_eq!(p.sample(i, k), q.sample(i, k));
    }
}
