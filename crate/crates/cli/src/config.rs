//! Experiment configuration: a sectioned TOML file merged with `--set`
//! overrides and dedicated flags.
//!
//! Precedence, lowest first: built-in desk defaults, the `--config` file,
//! `--set section.key=value` pairs in order, then dedicated subcommand flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use skelforge::diffusion::ScheduleConfig;
use skelforge::model::{ModelConfig, TrainConfig};
use skelforge::recognizer::{AugPolicy, RecognizerConfig};
use skelforge::sampler::SamplingConfig;
use skelforge::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub classes: usize,
    pub clips_per_class: usize,
    pub test_clips_per_class: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            classes: 3,
            clips_per_class: 40,
            test_clips_per_class: 20,
            frames: 64,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let s = ScheduleConfig::desk();
        Self {
            steps: s.steps,
            beta_start: s.beta_start,
            beta_end: s.beta_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub feed_forward_dim: usize,
    pub max_frames: usize,
    pub internal_dropout: f64,
    pub classifier_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::desk(2);
        Self {
            d_model: m.d_model,
            layers: m.layers,
            heads: m.heads,
            feed_forward_dim: m.feed_forward_dim,
            max_frames: m.max_frames,
            internal_dropout: m.internal_dropout,
            classifier_hidden: m.classifier_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_cls: f64,
    pub window: usize,
    pub milestones: Vec<f64>,
    /// Zero disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::desk();
        Self {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            lambda_cls: t.lambda_cls,
            window: t.window,
            milestones: t.milestones,
            clip_norm: t.clip_norm.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub per_class: usize,
    pub frames: usize,
    pub dropout: f64,
    /// Negative disables the refinement filter.
    pub threshold: f64,
    pub guidance_scale: f64,
    pub max_oversample_rounds: usize,
    pub chain_batch: usize,
    pub seed: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let s = SamplingConfig::new(0, 1, 0);
        Self {
            per_class: 10,
            frames: s.frames,
            dropout: 0.2,
            threshold: -1.0,
            guidance_scale: s.guidance_scale,
            max_oversample_rounds: s.max_oversample_rounds,
            chain_batch: s.chain_batch,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerSection {
    pub channels: Vec<usize>,
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub policy: String,
}

impl Default for RecognizerSection {
    fn default() -> Self {
        let r = RecognizerConfig::desk(2);
        Self {
            channels: r.channels,
            temporal_kernel: r.temporal_kernel,
            temporal_stride: r.temporal_stride,
            window: r.window,
            epochs: r.epochs,
            lr: r.lr,
            batch_size: r.batch_size,
            seed: r.seed,
            policy: "none".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub fractions: Vec<f64>,
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub multiplier: usize,
    pub noise_sigma: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_yaw: f64,
    pub jobs: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            fractions: vec![0.75, 0.9, 0.95, 1.0],
            policies: vec!["none".into(), "synthetic".into()],
            seeds: (0..5).collect(),
            split_seed: 1,
            multiplier: 5,
            noise_sigma: 0.01,
            scale_min: 0.9,
            scale_max: 1.1,
            max_yaw: std::f64::consts::PI,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub diversity_pairs: usize,
    pub k: usize,
    pub seed: u64,
    /// Largest class-centroid shift the PCA scatter summary accepts, as a
    /// fraction of that class's real spread.
    pub centroid_shift_max: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            diversity_pairs: 300,
            k: 3,
            seed: 0,
            centroid_shift_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub diffusion: DiffusionSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sampling: SamplingSection,
    pub recognizer: RecognizerSection,
    pub protocol: ProtocolSection,
    pub metrics: MetricsSection,
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_literal(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Sets `section.key` in a raw table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, value) = assignment.split_once('=').ok_or_else(|| {
        Error::InvalidArgument(format!("override `{assignment}` is not of the form section.key=value"))
    })?;
    let path = path.trim();
    let (section, key) = path.split_once('.').ok_or_else(|| {
        Error::InvalidArgument(format!("override key `{path}` needs a section, as in train.lr"))
    })?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(inner) = entry else {
        return Err(Error::config(section, "is not a section"));
    };
    inner.insert(key.to_string(), parse_literal(value.trim()));
    Ok(())
}

/// Pulls the first backquoted dotted key out of a deserializer message.
fn key_from_message(message: &str) -> Option<String> {
    message
        .split('`')
        .skip(1)
        .step_by(2)
        .find(|s| !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.'))
        .map(str::to_string)
}

impl ExperimentConfig {
    /// Reads an optional file and applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::io(format!("reading config {}", p.display()), e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| {
                    Error::config(
                        key_from_message(e.message()).unwrap_or_else(|| p.display().to_string()),
                        e.message().to_string(),
                    )
                })?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        // Deserialize section by section so errors can name the section.
        let mut merged = toml::Table::new();
        for (section, value) in table {
            let toml::Value::Table(inner) = value else {
                return Err(Error::config(section, "expected a [section] table"));
            };
            merged.insert(section, toml::Value::Table(inner));
        }
        let config: ExperimentConfig = toml::Value::Table(merged.clone()).try_into().map_err(
            |e: toml::de::Error| {
                let message = e.message().to_string();
                let key = locate_key(&merged, &message).unwrap_or_else(|| "config".into());
                Error::config(key, message)
            },
        )?;
        config.validate()?;
        Ok(config)
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.diffusion.steps,
            beta_start: self.diffusion.beta_start,
            beta_end: self.diffusion.beta_end,
        }
    }

    pub fn model(&self, num_classes: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            d_model: m.d_model,
            layers: m.layers,
            heads: m.heads,
            feed_forward_dim: m.feed_forward_dim,
            max_frames: m.max_frames,
            internal_dropout: m.internal_dropout,
            classifier_hidden: m.classifier_hidden,
            num_classes,
            ..ModelConfig::desk(num_classes)
        }
    }

    pub fn train(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            lambda_cls: t.lambda_cls,
            window: t.window,
            milestones: t.milestones.clone(),
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
        }
    }

    /// Sampling template; label and count are filled in per class.
    pub fn sampling(&self) -> SamplingConfig {
        let s = &self.sampling;
        SamplingConfig {
            num_samples: s.per_class.max(1),
            label: 0,
            frames: s.frames,
            dropout_rate: s.dropout,
            grm_threshold: if s.threshold < 0.0 { f64::INFINITY } else { s.threshold },
            max_oversample_rounds: s.max_oversample_rounds,
            guidance_scale: s.guidance_scale,
            seed: s.seed,
            chain_batch: s.chain_batch,
        }
    }

    pub fn recognizer(&self, num_classes: usize) -> RecognizerConfig {
        let r = &self.recognizer;
        RecognizerConfig {
            channels: r.channels.clone(),
            temporal_kernel: r.temporal_kernel,
            temporal_stride: r.temporal_stride,
            num_classes,
            window: r.window,
            epochs: r.epochs,
            lr: r.lr,
            batch_size: r.batch_size,
            seed: r.seed,
        }
    }

    /// Resolves a policy name with the parameters from `[protocol]`.
    pub fn policy(&self, name: &str) -> Result<AugPolicy> {
        let p = &self.protocol;
        let policy = match AugPolicy::from_name(name)? {
            AugPolicy::GaussianNoise { .. } => AugPolicy::GaussianNoise { sigma: p.noise_sigma },
            AugPolicy::Scaling { .. } => AugPolicy::Scaling {
                min: p.scale_min,
                max: p.scale_max,
            },
            AugPolicy::Rotating { .. } => AugPolicy::Rotating { max_yaw: p.max_yaw },
            AugPolicy::Synthetic { .. } => AugPolicy::Synthetic {
                multiplier: p.multiplier,
            },
            AugPolicy::None => AugPolicy::None,
        };
        policy
            .validate()
            .map_err(|e| Error::config("protocol", e.to_string()))?;
        Ok(policy)
    }

    /// Range and consistency checks, each naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes < 2 {
            return Err(Error::config("data.classes", "need at least 2 classes"));
        }
        if d.clips_per_class == 0 {
            return Err(Error::config("data.clips_per_class", "must be at least 1"));
        }
        if d.frames < skelforge::motion::toy::MIN_RAW_FRAMES {
            return Err(Error::config(
                "data.frames",
                format!("must be at least {}", skelforge::motion::toy::MIN_RAW_FRAMES),
            ));
        }
        self.schedule()
            .build()
            .map_err(|e| Error::config("diffusion", e.to_string()))?;
        rename(self.model(d.classes).validate(), "model")?;
        rename(self.train().validate(), "train")?;
        if self.train.window > self.model.max_frames {
            return Err(Error::config("train.window", "exceeds model.max_frames"));
        }
        let s = &self.sampling;
        if !(0.0..1.0).contains(&s.dropout) {
            return Err(Error::config("sampling.dropout", "must lie in [0, 1)"));
        }
        if s.threshold.is_nan() {
            return Err(Error::config("sampling.threshold", "must be a number"));
        }
        if s.frames == 0 || s.frames > self.model.max_frames {
            return Err(Error::config("sampling.frames", "must lie in 1..=model.max_frames"));
        }
        if s.chain_batch == 0 {
            return Err(Error::config("sampling.chain_batch", "must be at least 1"));
        }
        if s.max_oversample_rounds == 0 {
            return Err(Error::config("sampling.max_oversample_rounds", "must be at least 1"));
        }
        if !s.guidance_scale.is_finite() {
            return Err(Error::config("sampling.guidance_scale", "must be finite"));
        }
        rename(self.recognizer(d.classes).validate(), "recognizer")?;
        AugPolicy::from_name(&self.recognizer.policy)
            .map_err(|e| Error::config("recognizer.policy", e.to_string()))?;
        let p = &self.protocol;
        for &f in &p.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("protocol.fractions", format!("{f} outside (0, 1]")));
            }
        }
        if p.fractions.is_empty() {
            return Err(Error::config("protocol.fractions", "must not be empty"));
        }
        if p.seeds.is_empty() {
            return Err(Error::config("protocol.seeds", "must not be empty"));
        }
        for name in &p.policies {
            self.policy(name)
                .map_err(|e| Error::config("protocol.policies", e.to_string()))?;
        }
        if p.jobs == 0 {
            return Err(Error::config("protocol.jobs", "must be at least 1"));
        }
        if self.metrics.k == 0 {
            return Err(Error::config("metrics.k", "must be at least 1"));
        }
        if !(self.metrics.centroid_shift_max >= 0.0) {
            return Err(Error::config("metrics.centroid_shift_max", "must be non-negative"));
        }
        Ok(())
    }
}

fn rename(r: Result<()>, section: &str) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { key, message } => {
            let leaf = key.rsplit('.').next().unwrap_or(&key).to_string();
            Error::config(format!("{section}.{leaf}"), message)
        }
        other => Error::config(section, other.to_string()),
    })
}

/// Finds the `section.key` a deserializer message refers to.
fn locate_key(table: &toml::Table, message: &str) -> Option<String> {
    if let Some(k) = key_from_message(message) {
        for (section, value) in table {
            if let toml::Value::Table(inner) = value {
                if inner.contains_key(&k) {
                    return Some(format!("{section}.{k}"));
                }
            }
            if *section == k {
                return Some(k);
            }
        }
        return Some(k);
    }
    // Type errors name no key; try each section alone to find the culprit.
    for (section, value) in table {
        let toml::Value::Table(inner) = value else { continue };
        for (key, v) in inner {
            let mut probe = toml::Table::new();
            let mut sec = toml::Table::new();
            sec.insert(key.clone(), v.clone());
            probe.insert(section.clone(), toml::Value::Table(sec));
            if toml::Value::Table(probe).try_into::<ExperimentConfig>().is_err() {
                return Some(format!("{section}.{key}"));
            }
        }
    }
    None
}
