//! Label-conditioned ancestral sampling with sampling-time dropout, and the
//! refinement filter that discards candidates far from every same-class
//! reference.

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{posterior_step, NoiseSchedule};
use crate::error::{Error, Result};
use crate::model::{Denoiser, DiffusionModel, Mode};
use crate::motion::clip::RootPose;
use crate::motion::dataset::write_bytes;
use crate::motion::{decode_features, leading_window, Dataset, MotionFeatures, NormalizationStats};

/// Anything that maps `(x_t, t, labels)` to a clean-sample estimate.
pub trait X0Predictor {
    fn feature_width(&self) -> usize;

    fn predict(
        &self,
        x_t: &Array3<f64>,
        t: usize,
        labels: &[usize],
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array3<f64>>;

    /// Gradient of the summed true-class log-probability with respect to
    /// `x_t`, when the predictor has a classifier.
    fn class_log_prob_gradient(
        &self,
        _x_t: &Array3<f64>,
        _t: usize,
        _labels: &[usize],
    ) -> Result<Option<Array3<f64>>> {
        Ok(None)
    }
}

impl X0Predictor for Denoiser {
    fn feature_width(&self) -> usize {
        self.config().feature_width
    }

    fn predict(
        &self,
        x_t: &Array3<f64>,
        t: usize,
        labels: &[usize],
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array3<f64>> {
        let steps = vec![t; labels.len()];
        let rate = (dropout > 0.0).then_some(dropout);
        self.forward(x_t, &steps, labels, Mode::Eval, rate, rng)
            .map(|(x0, _)| x0)
    }

    fn class_log_prob_gradient(
        &self,
        x_t: &Array3<f64>,
        t: usize,
        labels: &[usize],
    ) -> Result<Option<Array3<f64>>> {
        let steps = vec![t; labels.len()];
        Denoiser::class_log_prob_gradient(self, x_t, &steps, labels).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub num_samples: usize,
    pub label: usize,
    pub frames: usize,
    pub dropout_rate: f64,
    /// Refinement threshold τ; `f64::INFINITY` keeps everything.
    pub grm_threshold: f64,
    pub max_oversample_rounds: usize,
    /// Zero disables classifier guidance.
    pub guidance_scale: f64,
    pub seed: u64,
    /// Chains denoised together in one forward pass.
    pub chain_batch: usize,
}

impl SamplingConfig {
    pub fn new(label: usize, num_samples: usize, seed: u64) -> Self {
        Self {
            num_samples,
            label,
            frames: 48,
            dropout_rate: 0.0,
            grm_threshold: f64::INFINITY,
            max_oversample_rounds: 10,
            guidance_scale: 0.0,
            seed,
            chain_batch: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        // τ = 0 is allowed: it keeps only exact matches.
        if self.grm_threshold.is_nan() || self.grm_threshold < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "threshold {} must be non-negative",
                self.grm_threshold
            )));
        }
        if self.frames == 0 || self.chain_batch == 0 || self.max_oversample_rounds == 0 {
            return Err(Error::InvalidArgument(
                "frames, chain_batch and max_oversample_rounds must be positive".into(),
            ));
        }
        if !self.guidance_scale.is_finite() {
            return Err(Error::InvalidArgument("guidance scale must be finite".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Runs `count` reverse chains from pure noise for one label.
#[allow(clippy::too_many_arguments)]
pub fn sample_loop<P: X0Predictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    count: usize,
    label: usize,
    frames: usize,
    dropout: f64,
    guidance_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Array3<f64>> {
    let width = model.feature_width();
    let labels = vec![label; count];
    let mut x = Array3::from_shape_simple_fn((count, frames, width), || StandardNormal.sample(rng));
    for t in (0..schedule.steps()).rev() {
        let mut x0_hat = model.predict(&x, t, &labels, dropout, rng)?;
        if guidance_scale != 0.0 {
            if let Some(grad) = model.class_log_prob_gradient(&x, t, &labels)? {
                x0_hat.scaled_add(guidance_scale, &grad);
            }
        }
        if x0_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("denoiser output at step {t}")));
        }
        x = posterior_step(&x, &x0_hat, t, schedule, rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample state at step {t}")));
        }
    }
    Ok(x)
}

/// Frame-averaged ℓ2 distance between a candidate and a reference aligned
/// from frame 0 (cropped or padded to the candidate length).
pub fn frame_distance(candidate: &Array2<f64>, reference: &Array2<f64>) -> f64 {
    let r = leading_window(reference, candidate.nrows());
    let total: f64 = candidate
        .outer_iter()
        .zip(r.outer_iter())
        .map(|(a, b)| (&a - &b).mapv(|d| d * d).sum().sqrt())
        .sum();
    total / candidate.nrows() as f64
}

/// Distance to the nearest reference, and the retained indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrmResult {
    pub distances: Vec<f64>,
    pub retained: Vec<usize>,
}

pub fn grm_filter(candidates: &[Array2<f64>], references: &[&Array2<f64>], tau: f64) -> Result<GrmResult> {
    if references.is_empty() {
        return Err(Error::Data("no same-class reference clips for the refinement filter".into()));
    }
    let distances: Vec<f64> = candidates
        .iter()
        .map(|c| {
            references
                .iter()
                .map(|r| frame_distance(c, r))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let retained = distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= tau)
        .map(|(i, _)| i)
        .collect();
    Ok(GrmResult {
        distances,
        retained,
    })
}

/// Normalized reference sequences with labels.
#[derive(Debug, Clone, Copy)]
pub struct References<'a> {
    pub sequences: &'a [Array2<f64>],
    pub labels: &'a [usize],
}

impl<'a> References<'a> {
    pub fn of_label(&self, label: usize) -> Vec<&'a Array2<f64>> {
        self.sequences
            .iter()
            .zip(self.labels)
            .filter(|(_, &l)| l == label)
            .map(|(s, _)| s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GeneratedBatch {
    /// Normalized features, one `frames × 263` matrix per retained sample.
    pub features: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub grm_distances: Vec<f64>,
    /// Distances of every candidate drawn, retained or not.
    pub candidate_distances: Vec<f64>,
    pub candidates: usize,
    pub rounds: usize,
    pub shortfall: bool,
    pub provenance: Provenance,
}

impl GeneratedBatch {
    pub fn rejection_rate(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            1.0 - self.features.len() as f64 / self.candidates as f64
        }
    }
}

/// Draws chains in rounds until `num_samples` pass the filter. The first
/// round draws exactly the quota; later rounds draw twice what is missing.
pub fn generate<P: X0Predictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    config: &SamplingConfig,
    references: References<'_>,
) -> Result<GeneratedBatch> {
    config.validate()?;
    let refs = references.of_label(config.label);
    if refs.is_empty() {
        return Err(Error::Data(format!(
            "no reference clips of label {} for the refinement filter",
            config.label
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut features = Vec::new();
    let mut distances = Vec::new();
    let mut all = Vec::new();
    let mut candidates = 0;
    let mut rounds = 0;
    while features.len() < config.num_samples && rounds < config.max_oversample_rounds {
        let missing = config.num_samples - features.len();
        let draw = if rounds == 0 { missing } else { 2 * missing };
        rounds += 1;
        let mut drawn = Vec::with_capacity(draw);
        let mut left = draw;
        while left > 0 {
            let n = left.min(config.chain_batch);
            let x = sample_loop(
                model,
                schedule,
                n,
                config.label,
                config.frames,
                config.dropout_rate,
                config.guidance_scale,
                &mut rng,
            )?;
            drawn.extend(x.axis_iter(Axis(0)).map(|v| v.to_owned()));
            left -= n;
        }
        candidates += draw;
        let grm = grm_filter(&drawn, &refs, config.grm_threshold)?;
        all.extend_from_slice(&grm.distances);
        for i in grm.retained {
            if features.len() == config.num_samples {
                break;
            }
            distances.push(grm.distances[i]);
            features.push(drawn[i].clone());
        }
    }
    let shortfall = features.len() < config.num_samples;
    if shortfall {
        log::warn!(
            "label {}: kept {} of {} requested after {rounds} rounds",
            config.label,
            features.len(),
            config.num_samples
        );
    }
    Ok(GeneratedBatch {
        labels: vec![config.label; features.len()],
        features,
        grm_distances: distances,
        candidate_distances: all,
        candidates,
        rounds,
        shortfall,
        provenance: Provenance {
            config_digest: config.digest(),
            seed: config.seed,
        },
    })
}

/// Generates for a trained diffusion model. A stride of the seed keeps
/// per-label streams apart.
pub fn generate_labels(
    model: &DiffusionModel,
    base: &SamplingConfig,
    counts: &[(usize, usize)],
    references: References<'_>,
) -> Result<Vec<GeneratedBatch>> {
    let schedule = model.noise_schedule()?;
    counts
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|&(label, n)| {
            let cfg = SamplingConfig {
                label,
                num_samples: n,
                seed: base.seed.wrapping_add(1_000_003 * label as u64),
                ..base.clone()
            };
            generate(&model.denoiser, &schedule, &cfg, references)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `bins` equal-width bins over the finite values.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Histogram {
            edges: vec![],
            counts: vec![],
        };
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for v in finite {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: usize,
    pub requested: usize,
    pub retained: usize,
    pub candidates: usize,
    pub rounds: usize,
    pub rejection_rate: f64,
    pub shortfall: bool,
    pub config_digest: String,
    pub seed: u64,
    pub distance_histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub dropout_rate: f64,
    /// `null` when filtering is off.
    pub grm_threshold: Option<f64>,
    pub guidance_scale: f64,
    pub frames: usize,
    pub rejection_rate: f64,
    pub labels: Vec<LabelReport>,
}

impl GenerationReport {
    /// `requested` holds `(label, count)` in the order the batches were drawn.
    pub fn new(base: &SamplingConfig, batches: &[GeneratedBatch], requested: &[(usize, usize)]) -> Self {
        let labels: Vec<LabelReport> = batches
            .iter()
            .zip(requested)
            .map(|(b, &(label, req))| LabelReport {
                label,
                requested: req,
                retained: b.features.len(),
                candidates: b.candidates,
                rounds: b.rounds,
                rejection_rate: b.rejection_rate(),
                shortfall: b.shortfall,
                config_digest: b.provenance.config_digest.clone(),
                seed: b.provenance.seed,
                distance_histogram: histogram(&b.candidate_distances, 10),
            })
            .collect();
        let drawn: usize = labels.iter().map(|l| l.candidates).sum();
        let kept: usize = labels.iter().map(|l| l.retained).sum();
        Self {
            dropout_rate: base.dropout_rate,
            grm_threshold: base.grm_threshold.is_finite().then_some(base.grm_threshold),
            guidance_scale: base.guidance_scale,
            frames: base.frames,
            rejection_rate: if drawn == 0 { 0.0 } else { 1.0 - kept as f64 / drawn as f64 },
            labels,
        }
    }
}

/// Denormalizes and decodes generated features into a dataset whose clips
/// start at the origin facing +x.
pub fn to_dataset(
    batches: &[GeneratedBatch],
    stats: &NormalizationStats,
    num_classes: usize,
    class_names: Vec<String>,
    id_prefix: &str,
) -> Result<Dataset> {
    let mut clips = Vec::new();
    for b in batches {
        for (i, (f, &label)) in b.features.iter().zip(&b.labels).enumerate() {
            let raw = MotionFeatures::new(stats.denormalize(f))?;
            let id = format!("{id_prefix}c{label:02}_{i:04}");
            clips.push(decode_features(&raw, RootPose::default(), id, label)?);
        }
    }
    Dataset::from_clips(num_classes, class_names, clips)
}

pub fn write_report(path: &Path, report: &GenerationReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json("generation report", e))?;
    write_bytes(path, json.as_bytes())
}
