//! The conditional denoiser, its training loop and its checkpoint format.

pub mod config;
pub mod denoiser;
pub mod train;

use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use skelforge_autograd::ParamStore;

pub use config::ModelConfig;
pub use denoiser::{Denoiser, ForwardVars, Mode};
pub use train::{batch_loss, train_denoiser, FeatureSet, LossRecord, TrainConfig, TrainOutcome};

use crate::checkpoint::Checkpoint;
use crate::diffusion::{NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::motion::dataset::FeatureCache;
use crate::motion::{Dataset, NormalizationStats};

/// Everything needed to sample: weights, schedule and normalization.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub denoiser: Denoiser,
    pub stats: NormalizationStats,
    pub schedule: ScheduleConfig,
    pub window: usize,
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    kind: String,
    model: ModelConfig,
    schedule: ScheduleConfig,
    window: usize,
}

const KIND: &str = "diffusion";

impl DiffusionModel {
    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let stored = StoredConfig {
            kind: KIND.into(),
            model: self.denoiser.config().clone(),
            schedule: self.schedule,
            window: self.window,
        };
        let json = serde_json::to_string(&stored).map_err(|e| Error::json("model config", e))?;
        let mut c = Checkpoint::new(json);
        for (_, name, value) in self.denoiser.params().iter() {
            c.push_matrix(name, value);
        }
        c.push("norm.mean", self.stats.mean.clone().into_dyn());
        c.push("norm.std", self.stats.std.clone().into_dyn());
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let stored: StoredConfig =
            serde_json::from_str(&c.config_json).map_err(|e| Error::json("checkpoint config", e))?;
        if stored.kind != KIND {
            return Err(Error::Data(format!(
                "checkpoint holds a `{}` model, expected `{KIND}`",
                stored.kind
            )));
        }
        stored.model.validate()?;
        let mut params = ParamStore::new();
        let mut mean = None;
        let mut std = None;
        for (name, array) in &c.arrays {
            match name.as_str() {
                "norm.mean" => mean = Some(vector(name, array)?),
                "norm.std" => std = Some(vector(name, array)?),
                _ => {
                    params.insert(name.clone(), c.matrix(name)?);
                }
            }
        }
        let (Some(mean), Some(std)) = (mean, std) else {
            return Err(Error::Data("checkpoint lacks normalization statistics".into()));
        };
        // Check the stored arrays against a freshly initialized layout.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let reference = Denoiser::init(stored.model.clone(), &mut rng)?;
        if reference.params().len() != params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} parameter arrays, config implies {}",
                params.len(),
                reference.params().len()
            )));
        }
        for (_, name, value) in reference.params().iter() {
            match params.by_name(name) {
                Some(v) if v.dim() == value.dim() => {}
                _ => return Err(Error::Data(format!("parameter `{name}` missing or misshapen"))),
            }
        }
        Ok(Self {
            denoiser: Denoiser::from_parts(stored.model, params),
            stats: NormalizationStats { mean, std },
            schedule: stored.schedule,
            window: stored.window,
        })
    }

    /// Encodes `dataset`, fits normalization and trains a denoiser on it.
    pub fn train(
        dataset: &Dataset,
        model: ModelConfig,
        schedule: ScheduleConfig,
        train: &TrainConfig,
        cache: &FeatureCache,
        on_epoch: impl FnMut(&LossRecord, &Denoiser) -> Result<()>,
    ) -> Result<(Self, Vec<LossRecord>)> {
        let data = FeatureSet::fit(dataset, cache)?;
        let out = train_denoiser(&data, model, &schedule.build()?, train, on_epoch)?;
        Ok((
            Self {
                denoiser: out.model,
                stats: data.stats,
                schedule,
                window: train.window,
            },
            out.history,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?).map_err(|e| match e {
            Error::Checkpoint { .. } => e,
            other => Error::Checkpoint {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
    }
}

fn vector(name: &str, a: &ndarray::ArrayD<f64>) -> Result<Array1<f64>> {
    a.clone()
        .into_dimensionality()
        .map_err(|_| Error::Shape(format!("`{name}` is not a vector")))
}
