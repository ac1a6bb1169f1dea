use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use skelforge::metrics::*;

fn gaussian(n: usize, d: usize, mean: f64, std: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(mean, std).unwrap();
    Array2::from_shape_simple_fn((n, d), || dist.sample(&mut rng))
}

fn uniform(n: usize, hi: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, 2), || rng.random_range(0.0..hi))
}

#[test]
fn fid_of_a_set_with_itself_vanishes() {
    let a = gaussian(200, 6, 0.3, 1.5, 1);
    assert!(fid(&a, &a).unwrap() < 1e-8);
}

#[test]
fn fid_matches_one_dimensional_closed_form() {
    // (μ1 − μ2)² + (σ1 − σ2)²
    let a = gaussian(200_000, 1, 0.0, 1.0, 2);
    let b = gaussian(200_000, 1, 1.0, 2.0, 3);
    let v = fid(&a, &b).unwrap();
    assert!((v - 2.0).abs() / 2.0 < 0.02, "fid {v}");
}

#[test]
fn fid_is_symmetric_and_handles_few_points() {
    let a = gaussian(40, 5, 0.0, 1.0, 4);
    let b = gaussian(30, 5, 0.5, 0.7, 5);
    assert_eq!(fid(&a, &b).unwrap(), fid(&b, &a).unwrap());
    // Fewer points than dimensions: regularized, still finite.
    let c = gaussian(4, 10, 0.0, 1.0, 6);
    let d = gaussian(5, 10, 0.0, 1.0, 7);
    assert!(fid(&c, &d).unwrap().is_finite());
    assert!(fid(&c, &gaussian(5, 9, 0.0, 1.0, 8)).is_err());
    assert!(fid(&array![[1.0]], &array![[1.0], [2.0]]).is_err());
}

#[test]
fn kid_is_symmetric_and_unbiased_on_identical_distributions() {
    let a = gaussian(400, 8, 0.0, 1.0, 9);
    let b = gaussian(300, 8, 0.0, 1.0, 10);
    let k = kid(&a, &b).unwrap();
    let r = kid(&b, &a).unwrap();
    assert_eq!(k.value, r.value);
    assert!(k.se > 0.0);
    assert!(k.value.abs() < 3.0 * k.se, "kid {} se {}", k.value, k.se);
    let far = gaussian(300, 8, 1.0, 1.0, 11);
    let kf = kid(&a, &far).unwrap();
    assert!(kf.value > 3.0 * kf.se);
}

#[test]
fn kid_mean_over_resamples_tracks_population_mmd() {
    // Population MMD² for the cubic kernel between N(0, I) and itself is 0;
    // the unbiased estimator averages to it.
    let mut total = 0.0;
    let reps = 40;
    for r in 0..reps {
        let a = gaussian(60, 3, 0.0, 1.0, 100 + r);
        let b = gaussian(60, 3, 0.0, 1.0, 200 + r);
        total += kid(&a, &b).unwrap().value;
    }
    let mean = total / reps as f64;
    let a = gaussian(60, 3, 0.0, 1.0, 1);
    let b = gaussian(60, 3, 0.0, 1.0, 2);
    let se = kid(&a, &b).unwrap().se;
    assert!(mean.abs() < 3.0 * se / (reps as f64).sqrt(), "mean {mean} se {se}");
}

#[test]
fn precision_recall_on_identical_and_nested_sets() {
    let a = uniform(300, 1.0, 12);
    assert_eq!(precision_recall(&a, &a, 3).unwrap(), (1.0, 1.0));
    let real = uniform(1500, 1.0, 13);
    let fake = uniform(1500, 0.5, 14);
    let (p, r) = precision_recall(&real, &fake, 3).unwrap();
    assert!((r - 0.25).abs() < 0.05, "recall {r}");
    assert!(p > 0.95, "precision {p}");
    assert!(precision_recall(&a, &a, 0).is_err());
}

#[test]
fn diversity_grows_with_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let tight = gaussian(100, 4, 0.0, 0.5, 16);
    let wide = gaussian(100, 4, 0.0, 2.0, 17);
    let dt = diversity(&tight, 500, &mut rng).unwrap();
    let dw = diversity(&wide, 500, &mut rng).unwrap();
    assert!(dw > 3.0 * dt);
    // E‖x − y‖ for 4-D N(0, σ²I) pairs is σ·√2·E[χ₄] ≈ σ · 2.659.
    assert!((dw / 2.0 - 2.659).abs() < 0.15, "{dw}");
}

#[test]
fn isotropic_noise_adds_d_sigma_squared_to_within_class_spread() {
    let x = gaussian(400, 5, 0.0, 1.0, 18);
    let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
    let base = within_class_covariance(&x, &labels).unwrap().value;
    let sigma: f64 = 0.3;
    let reps = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut total = 0.0;
    for _ in 0..reps {
        let noisy = x.mapv(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
        total += within_class_covariance(&noisy, &labels).unwrap().value;
    }
    let mean = total / reps as f64;
    // Population trace of a class of n points: expected increase is
    // D σ² (n − 1) / n, plus a cross term with zero mean.
    let expected = base + 5.0 * sigma * sigma * (99.0 / 100.0);
    assert!((mean - expected).abs() < 0.01, "mean {mean} expected {expected}");
}

#[test]
fn pca_recovers_dominant_axis_with_fixed_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = Array2::from_shape_fn((500, 3), |(_, j)| {
        let s = [5.0, 1.0, 0.2][j];
        s * rng.sample::<f64, _>(StandardNormal)
    });
    let p = Pca::fit(&x, 2).unwrap();
    assert!(p.components[[0, 0]] > 0.99);
    assert!(p.components[[1, 1]].abs() > 0.99);
    assert!(p.explained_variance[0] > p.explained_variance[1]);
    let neg = x.mapv(|v| -v);
    let q = Pca::fit(&neg, 2).unwrap();
    assert!((&q.components - &p.components).iter().all(|v| v.abs() < 1e-9));
    let proj = p.project(&x);
    assert_eq!(proj.dim(), (500, 2));
}

#[test]
fn embedding_sets_validate_and_union() {
    let a = EmbeddingSet::new(array![[0.0, 1.0], [2.0, 3.0]], vec![0, 1], Source::Real).unwrap();
    let b = EmbeddingSet::new(array![[4.0, 5.0]], vec![1], Source::Synthetic).unwrap();
    let u = a.union(&b).unwrap();
    assert_eq!(u.len(), 3);
    assert_eq!(u.labels, vec![0, 1, 1]);
    assert!(EmbeddingSet::new(array![[0.0]], vec![], Source::Real).is_err());
    assert!(EmbeddingSet::new(array![[f64::NAN]], vec![0], Source::Real).is_err());
}

#[test]
fn metrics_report_serializes() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let real = EmbeddingSet::new(gaussian(30, 4, 0.0, 1.0, 22), (0..30).map(|i| i % 3).collect(), Source::Real).unwrap();
    let fake = EmbeddingSet::new(gaussian(30, 4, 0.2, 1.0, 23), (0..30).map(|i| i % 3).collect(), Source::Synthetic).unwrap();
    let r = metrics_report(&real, &fake, 100, 3, &mut rng).unwrap();
    let json = serde_json::to_value(&r).unwrap();
    for key in ["fid", "kid", "kid_se", "diversity", "precision", "recall", "within_class_cov_real", "within_class_cov_union"] {
        assert!(json[key].is_number(), "{key}");
    }
}
