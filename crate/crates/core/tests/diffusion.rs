use ndarray::{array, Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use skelforge::diffusion::*;

const DRAWS: usize = 10_000;

fn x0() -> Array1<f64> {
    array![1.5, -0.7, 0.0, 2.2, -3.0, 0.4]
}

/// Per-channel sample mean and population variance of `rows`.
fn moments(rows: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = rows.mean_axis(ndarray::Axis(0)).unwrap();
    let var = rows.var_axis(ndarray::Axis(0), 0.0);
    (mean, var)
}

fn check_moments(rows: &Array2<f64>, mean: &Array1<f64>, var: f64) {
    let (m, v) = moments(rows);
    let tol = 4.0 * (var / DRAWS as f64).sqrt();
    for c in 0..mean.len() {
        assert!((m[c] - mean[c]).abs() < tol, "channel {c}: mean {} vs {}", m[c], mean[c]);
        assert!((v[c] / var - 1.0).abs() < 0.05, "channel {c}: var {} vs {var}", v[c]);
    }
}

#[test]
fn thousand_step_schedule_decays_below_1e_4() {
    let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
    for t in 1..1000 {
        assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        assert!((s.alpha_bar[t] - s.alpha_bar[t - 1] * s.alpha[t]).abs() < 1e-12);
    }
    // Oracle: the same product accumulated in log space.
    let log_sum: f64 = (0..1000)
        .map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln())
        .sum();
    assert!((s.alpha_bar[999] - log_sum.exp()).abs() < 1e-12);
    assert!(s.alpha_bar[999] < 1e-4);
}

#[test]
fn q_sample_endpoints() {
    let x = x0();
    let eps = array![0.3, 0.1, -2.0, 0.5, 0.0, 1.0];
    let s = NoiseSchedule::from_betas(array![0.0, 0.1]);
    assert_eq!(q_sample(&x, 0, &eps, &s), x);
    let s = make_linear_schedule(10, 0.01, 0.2).unwrap();
    let zero = Array1::zeros(6);
    let got = q_sample(&zero, 4, &eps, &s);
    let expected = &eps * (1.0 - s.alpha_bar[4]).sqrt();
    assert!((got - expected).iter().all(|d| d.abs() < 1e-15));
}

#[test]
fn q_sample_superposition() {
    let s = make_linear_schedule(10, 0.01, 0.2).unwrap();
    let zero = Array1::zeros(6);
    let a = 2.5;
    let lhs = q_sample(&(x0() * a), 6, &zero, &s);
    let rhs = q_sample(&x0(), 6, &zero, &s) * a;
    assert!((lhs - rhs).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn q_sample_monte_carlo_moments() {
    let s = make_linear_schedule(100, 1e-3, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = x0();
    for t in [0, 10, 50, 99] {
        let mut rows = Array2::zeros((DRAWS, x.len()));
        for mut row in rows.outer_iter_mut() {
            let eps = Array1::from_shape_simple_fn(x.len(), || StandardNormal.sample(&mut rng));
            row.assign(&q_sample(&x, t, &eps, &s));
        }
        check_moments(&rows, &(&x * s.alpha_bar[t].sqrt()), 1.0 - s.alpha_bar[t]);
    }
}

#[test]
fn last_reverse_step_is_deterministic() {
    let s = make_linear_schedule(20, 1e-3, 0.2).unwrap();
    let xt = array![0.3, -1.0, 2.0];
    let x0h = array![1.0, 0.0, -1.0];
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(2);
    let a = posterior_step(&xt, &x0h, 0, &s, &mut r1);
    let b = posterior_step(&xt, &x0h, 0, &s, &mut r2);
    assert_eq!(a, b);
    assert_eq!(a, posterior_mean(&xt, &x0h, 0, &s));
    // With ᾱ_{-1} = 1 the mean is x0_hat itself.
    assert!((a - &x0h).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn coefficients_sum_to_one_in_the_zero_beta_limit() {
    let s = NoiseSchedule::from_betas(array![0.5, 1e-12]);
    let (c0, ct) = s.posterior_coefficients(1);
    assert!((c0 + ct - 1.0).abs() < 1e-9);
    let xt = array![0.7, -0.2];
    let m = posterior_mean(&xt, &xt, 1, &s);
    assert!((m - &xt).iter().all(|d| d.abs() < 1e-9));
}

#[test]
fn posterior_step_matches_forward_marginal() {
    let s = make_linear_schedule(100, 1e-3, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = x0();
    for t in [1, 30, 99] {
        let mut rows = Array2::zeros((DRAWS, x.len()));
        for mut row in rows.outer_iter_mut() {
            let eps = Array1::from_shape_simple_fn(x.len(), || StandardNormal.sample(&mut rng));
            let xt = q_sample(&x, t, &eps, &s);
            row.assign(&posterior_step(&xt, &x, t, &s, &mut rng));
        }
        let ab = s.alpha_bar[t - 1];
        check_moments(&rows, &(&x * ab.sqrt()), 1.0 - ab);
    }
}

fn batch(x0: Array3<f64>, labels: Vec<usize>) -> TrainingBatch {
    let eps = Array3::zeros(x0.dim());
    TrainingBatch {
        t: vec![0; labels.len()],
        x0,
        labels,
        epsilon: eps,
    }
}

#[test]
fn loss_examples() {
    let x = Array3::from_shape_fn((2, 3, 4), |(a, b, c)| (a + 2 * b) as f64 - c as f64 * 0.5);
    let b = batch(x.clone(), vec![1, 2]);
    let mut perfect = Array2::from_elem((2, 3), -50.0);
    perfect[[0, 1]] = 50.0;
    perfect[[1, 2]] = 50.0;
    let l = training_loss(&x, &perfect, &b, 0.1).unwrap();
    assert_eq!(l.rec, 0.0);
    assert!(l.cls < 1e-30 && l.total < 1e-30);

    let shifted = &x + 1.0;
    let l = training_loss(&shifted, &Array2::zeros((2, 3)), &b, 0.0).unwrap();
    assert_eq!(l.rec, 1.0);
    assert!((l.cls - 3f64.ln()).abs() < 1e-12);
    assert_eq!(l.total, l.rec);

    let l = training_loss(&shifted, &Array2::zeros((2, 3)), &b, 0.5).unwrap();
    assert!((l.total - (1.0 + 0.5 * 3f64.ln())).abs() < 1e-12);
    assert!(training_loss(&x, &Array2::zeros((3, 3)), &b, 0.1).is_err());
}

#[test]
fn sampled_steps_cover_the_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = TrainingBatch::sample(Array3::zeros((4000, 1, 1)), vec![0; 4000], 10, &mut rng);
    let mut seen = [0usize; 10];
    for &t in &b.t {
        seen[t] += 1;
    }
    assert!(seen.iter().all(|&c| c > 300));
    assert!(b.epsilon.iter().all(|v| v.is_finite()));
}
