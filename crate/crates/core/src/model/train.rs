use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skelforge_autograd::{Adam, Graph};

use super::config::ModelConfig;
use super::denoiser::{Denoiser, Mode};
use crate::diffusion::{LossParts, NoiseSchedule, TrainingBatch};
use crate::error::{Error, Result};
use crate::motion::dataset::FeatureCache;
use crate::motion::{crop_window, Dataset, NormalizationStats, Skeleton};

/// Normalized feature sequences with their labels.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub sequences: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub stats: NormalizationStats,
}

impl FeatureSet {
    /// Encodes every clip and fits normalization statistics on the result.
    pub fn fit(dataset: &Dataset, cache: &FeatureCache) -> Result<Self> {
        let raw = encode_all(dataset, cache)?;
        let mut stats = NormalizationStats::fit(raw.iter())?;
        // Stored as f32 in checkpoints; round now so reloads are exact.
        stats.mean.mapv_inplace(|v| v as f32 as f64);
        stats.std.mapv_inplace(|v| v as f32 as f64);
        Ok(Self::assemble(dataset, raw, stats))
    }

    pub fn with_stats(dataset: &Dataset, cache: &FeatureCache, stats: NormalizationStats) -> Result<Self> {
        let raw = encode_all(dataset, cache)?;
        Ok(Self::assemble(dataset, raw, stats))
    }

    fn assemble(dataset: &Dataset, raw: Vec<Array2<f64>>, stats: NormalizationStats) -> Self {
        Self {
            sequences: raw.iter().map(|f| stats.normalize(f)).collect(),
            labels: dataset.labels(),
            num_classes: dataset.num_classes(),
            stats,
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

fn encode_all(dataset: &Dataset, cache: &FeatureCache) -> Result<Vec<Array2<f64>>> {
    let skeleton = Skeleton::smpl22();
    dataset
        .clips
        .iter()
        .map(|c| cache.features(c, &skeleton).map(|f| f.into_values()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_cls: f64,
    /// Frames per training window.
    pub window: usize,
    /// Fractions of `epochs` at which the learning rate is multiplied by 0.1.
    pub milestones: Vec<f64>,
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            epochs: 60,
            batch_size: 16,
            seed: 0,
            lambda_cls: 0.1,
            window: 48,
            milestones: vec![0.6, 0.85],
            clip_norm: Some(1.0),
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f64).floor() as usize)
            .count();
        self.lr * 0.1f64.powi(passed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: format!("train.{key}"),
                message: message.into(),
            })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.window == 0 {
            return bad("window", "must be at least 1");
        }
        if !(self.lambda_cls >= 0.0 && self.lambda_cls.is_finite()) {
            return Err(Error::Config {
                key: "loss.lambda_cls".into(),
                message: "must be a non-negative number".into(),
            });
        }
        Ok(())
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub rec: f64,
    pub cls: f64,
}

/// Loss of one batch on a fresh graph, plus the graph for backprop.
pub struct BatchLoss {
    pub graph: Graph,
    pub total: skelforge_autograd::Var,
    pub parts: LossParts,
}

/// Builds `rec + lambda · cls` for one batch.
pub fn batch_loss<R: rand::Rng + ?Sized>(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    batch: &TrainingBatch,
    lambda_cls: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<BatchLoss> {
    let (b, f, w) = batch.x0.dim();
    let x_t = batch.noised(schedule);
    let mut g = Graph::new();
    let flat = x_t
        .into_shape_with_order((b * f, w))
        .map_err(|e| Error::Shape(e.to_string()))?;
    let x = g.constant(flat);
    let out = model.forward_graph(&mut g, x, b, &batch.t, &batch.labels, mode, None, rng)?;
    let target = batch
        .x0
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * f, w))
        .map_err(|e| Error::Shape(e.to_string()))?;
    let rec = g.mse(out.x0_hat, target);
    let cls = g.softmax_cross_entropy(out.logits, &batch.labels);
    let weighted = g.scale(cls, lambda_cls);
    let total = g.add(rec, weighted);
    let parts = LossParts {
        total: g.scalar(total),
        rec: g.scalar(rec),
        cls: g.scalar(cls),
    };
    Ok(BatchLoss {
        graph: g,
        total,
        parts,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Denoiser,
    pub history: Vec<LossRecord>,
    pub steps: usize,
}

/// Adam with step decay. Parameters are rounded to `f32` at the end so a
/// checkpoint reload is exact.
pub fn train_denoiser(
    data: &FeatureSet,
    model_config: ModelConfig,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&LossRecord, &Denoiser) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if config.window > model_config.max_frames {
        return Err(Error::Config {
            key: "train.window".into(),
            message: format!("exceeds model.max_frames = {}", model_config.max_frames),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Denoiser::init(model_config, &mut rng)?;
    let mut adam = Adam::new(config.lr);
    if let Some(c) = config.clip_norm {
        adam = adam.with_clip_norm(c);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        adam.lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut x0 = Array3::zeros((chunk.len(), config.window, data.stats.mean.len()));
            for (slot, &i) in chunk.iter().enumerate() {
                x0.index_axis_mut(ndarray::Axis(0), slot)
                    .assign(&crop_window(&data.sequences[i], config.window, &mut rng));
            }
            let labels = chunk.iter().map(|&i| data.labels[i]).collect();
            let batch = TrainingBatch::sample(x0, labels, schedule.steps(), &mut rng);
            let loss = batch_loss(&model, schedule, &batch, config.lambda_cls, Mode::Train, &mut rng)?;
            let p = loss.parts;
            if !(p.total.is_finite() && p.rec.is_finite() && p.cls.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "training loss at step {step} (lr {}): total {}, rec {}, cls {}",
                    adam.lr, p.total, p.rec, p.cls
                )));
            }
            let grads = loss.graph.backward(loss.total);
            adam.step(model.params_mut(), &grads.params());
            step += 1;
            sums[0] += p.total;
            sums[1] += p.rec;
            sums[2] += p.cls;
            batches += 1;
        }
        if !model.params().all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after step {step} (lr {})",
                adam.lr
            )));
        }
        let n = batches as f64;
        let record = LossRecord {
            epoch,
            step,
            lr: adam.lr,
            total: sums[0] / n,
            rec: sums[1] / n,
            cls: sums[2] / n,
        };
        log::debug!(
            "epoch {epoch}: total {:.5} rec {:.5} cls {:.5}",
            record.total,
            record.rec,
            record.cls
        );
        history.push(record);
        on_epoch(&record, &model)?;
    }
    model.params_mut().round_to_f32();
    Ok(TrainOutcome {
        model,
        history,
        steps: step,
    })
}
