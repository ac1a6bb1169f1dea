//! Noise schedule, closed-form forward corruption, the reverse posterior step
//! and the combined reconstruction + classification loss.

use ndarray::{Array, Array1, Array2, Array3, Axis, Dimension, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a linear schedule, as stored in configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    /// 1000 steps over `[1e-4, 0.02]`.
    pub fn standard() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }

    /// 100 steps. The betas are widened so the chain still ends near pure
    /// noise (ᾱ at the last step is about 2e-5).
    pub fn desk() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_linear_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta: Array1<f64>,
    pub alpha: Array1<f64>,
    pub alpha_bar: Array1<f64>,
    pub posterior_variance: Array1<f64>,
}

/// Linear betas from `beta_start` to `beta_end`, both inclusive.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("diffusion needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let beta = if steps == 1 {
        Array1::from_elem(1, beta_start)
    } else {
        Array1::linspace(beta_start, beta_end, steps)
    };
    Ok(NoiseSchedule::from_betas(beta))
}

impl NoiseSchedule {
    pub fn from_betas(beta: Array1<f64>) -> Self {
        let alpha = beta.mapv(|b| 1.0 - b);
        let mut alpha_bar = Array1::zeros(beta.len());
        let mut acc = 1.0;
        for (t, a) in alpha.iter().enumerate() {
            acc *= a;
            alpha_bar[t] = acc;
        }
        let posterior_variance = Array1::from_shape_fn(beta.len(), |t| {
            let prev = if t == 0 { 1.0 } else { alpha_bar[t - 1] };
            beta[t] * (1.0 - prev) / (1.0 - alpha_bar[t])
        });
        Self {
            beta,
            alpha,
            alpha_bar,
            posterior_variance,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// ᾱ at `t - 1`, with the empty product (1) before the first step.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Posterior mean weights `(on x0_hat, on x_t)`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar_prev(t);
        let c0 = ab_prev.sqrt() * self.beta[t] / (1.0 - ab);
        let ct = self.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct)
    }

    fn check_step(&self, t: usize) {
        assert!(t < self.steps(), "step {t} outside schedule of {} steps", self.steps());
    }
}

/// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) ε`.
pub fn q_sample<D: Dimension>(
    x0: &Array<f64, D>,
    t: usize,
    epsilon: &Array<f64, D>,
    schedule: &NoiseSchedule,
) -> Array<f64, D> {
    schedule.check_step(t);
    let ab = schedule.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = x0.clone();
    Zip::from(&mut out)
        .and(epsilon)
        .for_each(|o, &e| *o = a * *o + b * e);
    out
}

/// Mean of `q(x_{t-1} | x_t, x0_hat)`.
pub fn posterior_mean<D: Dimension>(
    x_t: &Array<f64, D>,
    x0_hat: &Array<f64, D>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Array<f64, D> {
    schedule.check_step(t);
    let (c0, ct) = schedule.posterior_coefficients(t);
    let mut out = x_t.clone();
    Zip::from(&mut out)
        .and(x0_hat)
        .for_each(|o, &x0| *o = c0 * x0 + ct * *o);
    out
}

/// One reverse step. The last step (`t = 0`) returns the mean unchanged.
pub fn posterior_step<D: Dimension, R: Rng + ?Sized>(
    x_t: &Array<f64, D>,
    x0_hat: &Array<f64, D>,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Array<f64, D> {
    let mut out = posterior_mean(x_t, x0_hat, t, schedule);
    if t > 0 {
        let sigma = schedule.posterior_variance[t].sqrt();
        out.mapv_inplace(|m| m + sigma * rng.sample::<f64, _>(StandardNormal));
    }
    out
}

/// One minibatch of the x0-prediction objective.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    /// `B × T × 263`, normalized.
    pub x0: Array3<f64>,
    pub t: Vec<usize>,
    pub labels: Vec<usize>,
    pub epsilon: Array3<f64>,
}

impl TrainingBatch {
    /// Draws steps uniformly from `[0, steps)` and standard-normal noise.
    pub fn sample<R: Rng + ?Sized>(
        x0: Array3<f64>,
        labels: Vec<usize>,
        steps: usize,
        rng: &mut R,
    ) -> Self {
        let b = x0.dim().0;
        assert_eq!(labels.len(), b, "one label per example");
        let t = (0..b).map(|_| rng.random_range(0..steps)).collect();
        let epsilon = Array3::from_shape_simple_fn(x0.dim(), || rng.sample(StandardNormal));
        Self {
            x0,
            t,
            labels,
            epsilon,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.x0.dim().0
    }

    /// Noisy inputs, one step per example.
    pub fn noised(&self, schedule: &NoiseSchedule) -> Array3<f64> {
        let mut out = Array3::zeros(self.x0.dim());
        for (i, mut slot) in out.outer_iter_mut().enumerate() {
            let x0 = self.x0.index_axis(Axis(0), i).to_owned();
            let eps = self.epsilon.index_axis(Axis(0), i).to_owned();
            slot.assign(&q_sample(&x0, self.t[i], &eps, schedule));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub rec: f64,
    pub cls: f64,
}

/// Numerically stable mean cross-entropy of `logits` rows against `labels`.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), labels.len());
    let mut sum = 0.0;
    for (row, &y) in logits.outer_iter().zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        sum += lse - row[y];
    }
    sum / labels.len() as f64
}

/// `rec + lambda_cls · cls` with rec the element-mean squared error.
pub fn training_loss(
    x0_hat: &Array3<f64>,
    logits: &Array2<f64>,
    batch: &TrainingBatch,
    lambda_cls: f64,
) -> Result<LossParts> {
    if x0_hat.dim() != batch.x0.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            x0_hat.dim(),
            batch.x0.dim()
        )));
    }
    if logits.nrows() != batch.labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            batch.labels.len()
        )));
    }
    let rec = (x0_hat - &batch.x0).mapv(|d| d * d).mean().unwrap_or(0.0);
    let cls = cross_entropy(logits, &batch.labels);
    Ok(LossParts {
        total: rec + lambda_cls * cls,
        rec,
        cls,
    })
}
