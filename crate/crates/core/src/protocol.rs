//! Augmentation study: stratified real-data fractions crossed with
//! augmentation policies, one recognizer per seed, summarized as a table.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::diffusion::ScheduleConfig;
use crate::model::{DiffusionModel, FeatureSet, ModelConfig, TrainConfig};
use crate::motion::dataset::{write_bytes, FeatureCache};
use crate::motion::{split_fraction, Dataset, MotionClip};
use crate::recognizer::{evaluate, train_recognizer, AugPolicy, RecognizerConfig};
use crate::sampler::{generate_labels, to_dataset, References, SamplingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub fractions: Vec<f64>,
    pub policies: Vec<AugPolicy>,
    pub seeds: Vec<u64>,
    /// Seed of the stratified split, shared by every cell of a fraction.
    pub split_seed: u64,
    pub recognizer: RecognizerConfig,
    /// Template for synthetic generation; label, count and seed are filled
    /// in per class.
    pub sampling: SamplingConfig,
    /// Recognizers trained concurrently within a cell.
    pub jobs: usize,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.policies.is_empty() || self.seeds.is_empty() {
            return Err(Error::config(
                "protocol",
                "fractions, policies and seeds must all be non-empty",
            ));
        }
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("protocol.fractions", format!("{f} outside (0, 1]")));
            }
        }
        for p in &self.policies {
            p.validate()?;
        }
        self.recognizer.validate()?;
        self.sampling.validate()
    }
}

/// Diffusion models keyed by the fraction they were trained on.
#[derive(Debug, Default)]
pub struct DiffusionArtifacts {
    models: Vec<(f64, DiffusionModel)>,
}

impl DiffusionArtifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fraction: f64, model: DiffusionModel) {
        self.models.retain(|(f, _)| (f - fraction).abs() > 1e-9);
        self.models.push((fraction, model));
    }

    pub fn get(&self, fraction: f64) -> Option<&DiffusionModel> {
        self.models
            .iter()
            .find(|(f, _)| (f - fraction).abs() <= 1e-9)
            .map(|(_, m)| m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fraction: f64,
    pub policy: AugPolicy,
    pub seed: u64,
    pub real_clips: usize,
    pub synthetic_clips: usize,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub fraction: f64,
    pub policy: String,
    pub accuracies: Vec<f64>,
    pub mean_acc: f64,
    pub std_acc: f64,
    /// Mean accuracy minus the `none` cell at the same fraction.
    pub delta_vs_none: Option<f64>,
    /// Share of drawn candidates the refinement filter kept.
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub cells: Vec<Cell>,
    pub runs: Vec<RunRecord>,
    pub warnings: Vec<String>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One-sided lower confidence bound on the mean of `values` from a
/// percentile bootstrap.
pub fn bootstrap_mean_lower_bound<R: Rng + ?Sized>(
    values: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<f64> {
    if values.is_empty() || resamples == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidArgument(
            "bootstrap needs values, resamples and a level in [0, 1)".into(),
        ));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let idx = (((1.0 - level) * resamples as f64).floor() as usize).min(resamples - 1);
    Ok(means[idx])
}

/// Generated clips for one training subset, with filter statistics.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Retained over drawn candidates.
    pub acceptance_rate: f64,
    pub shortfall: bool,
}

/// Synthetic clips for one training subset: `multiplier` per real clip of
/// each class, filtered against that subset.
pub fn synthesize(
    model: &DiffusionModel,
    subset: &Dataset,
    multiplier: usize,
    sampling: &SamplingConfig,
    cache: &FeatureCache,
) -> Result<Synthetic> {
    let refs = FeatureSet::with_stats(subset, cache, model.stats.clone())?;
    let mut counts = BTreeMap::new();
    for c in &subset.clips {
        *counts.entry(c.label).or_insert(0) += multiplier;
    }
    let counts: Vec<(usize, usize)> = counts.into_iter().collect();
    let batches = generate_labels(
        model,
        sampling,
        &counts,
        References {
            sequences: &refs.sequences,
            labels: &refs.labels,
        },
    )?;
    let drawn: usize = batches.iter().map(|b| b.candidates).sum();
    let kept: usize = batches.iter().map(|b| b.features.len()).sum();
    let dataset = to_dataset(
        &batches,
        &model.stats,
        subset.num_classes(),
        subset.manifest.class_names.clone(),
        "syn_",
    )?;
    Ok(Synthetic {
        dataset,
        acceptance_rate: if drawn == 0 { 1.0 } else { kept as f64 / drawn as f64 },
        shortfall: batches.iter().any(|b| b.shortfall),
    })
}

/// Trains and scores one recognizer on `real` plus `synthetic`.
pub fn run_cell(
    real: &Dataset,
    synthetic: Option<&Dataset>,
    test: &Dataset,
    recognizer: &RecognizerConfig,
    policy: &AugPolicy,
    seed: u64,
) -> Result<(f64, Vec<Vec<usize>>)> {
    let mut clips: Vec<MotionClip> = real.clips.clone();
    if let Some(s) = synthetic {
        clips.extend(s.clips.iter().cloned());
    }
    let cfg = RecognizerConfig {
        seed,
        ..recognizer.clone()
    };
    let model = train_recognizer(&clips, cfg, policy, |_| {})?;
    let eval = evaluate(&model, &test.clips)?;
    Ok((eval.accuracy, eval.confusion))
}

/// Runs the seeds of one cell on up to `jobs` threads, in seed order.
fn run_seeds(
    real: &Dataset,
    extra: Option<&Dataset>,
    test: &Dataset,
    config: &ProtocolConfig,
    policy: &AugPolicy,
) -> Result<Vec<(f64, Vec<Vec<usize>>)>> {
    let jobs = config.jobs.max(1);
    let mut out = Vec::with_capacity(config.seeds.len());
    for group in config.seeds.chunks(jobs) {
        let results: Vec<Result<(f64, Vec<Vec<usize>>)>> = if jobs == 1 {
            group
                .iter()
                .map(|&seed| run_cell(real, extra, test, &config.recognizer, policy, seed))
                .collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|&seed| scope.spawn(move || run_cell(real, extra, test, &config.recognizer, policy, seed)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Data("protocol job panicked".into()))))
                    .collect()
            })
        };
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

/// Runs every (fraction, policy, seed) combination. Synthetic data is drawn
/// once per fraction from the model trained on that fraction and shared by
/// all seeds.
pub fn run_protocol(
    train: &Dataset,
    test: &Dataset,
    config: &ProtocolConfig,
    diffusion: &DiffusionArtifacts,
    cache: &FeatureCache,
) -> Result<ProtocolReport> {
    config.validate()?;
    if test.is_empty() {
        return Err(Error::Data("protocol test set is empty".into()));
    }
    let mut runs = Vec::new();
    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    for &fraction in &config.fractions {
        let split = split_fraction(&train.manifest, fraction, config.split_seed)?;
        warnings.extend(split.warnings.iter().map(|w| format!("fraction {fraction}: {w}")));
        let real = train.subset(&split.subset);
        let mut synthetic: Option<(usize, Synthetic)> = None;
        let mut none_mean = None;
        let mut fraction_cells = Vec::new();
        for policy in &config.policies {
            let mut acceptance_rate = None;
            let extra = match policy {
                AugPolicy::Synthetic { multiplier } => {
                    let reuse = matches!(&synthetic, Some((m, _)) if m == multiplier);
                    if !reuse {
                        let model = diffusion.get(fraction).ok_or_else(|| {
                            Error::Data(format!(
                                "no diffusion checkpoint for fraction {fraction}, required by the synthetic policy"
                            ))
                        })?;
                        let syn = synthesize(model, &real, *multiplier, &config.sampling, cache)?;
                        if syn.shortfall {
                            warnings.push(format!(
                                "fraction {fraction}: refinement filter left fewer synthetic clips than requested"
                            ));
                        }
                        synthetic = Some((*multiplier, syn));
                    }
                    synthetic.as_ref().map(|(_, s)| {
                        acceptance_rate = Some(s.acceptance_rate);
                        &s.dataset
                    })
                }
                _ => None,
            };
            let results = run_seeds(&real, extra, test, config, policy)?;
            let mut accuracies = Vec::with_capacity(results.len());
            for (&seed, (acc, confusion)) in config.seeds.iter().zip(results) {
                log::info!("fraction {fraction} policy {} seed {seed}: {acc:.4}", policy.name());
                accuracies.push(acc);
                runs.push(RunRecord {
                    fraction,
                    policy: policy.clone(),
                    seed,
                    real_clips: real.len(),
                    synthetic_clips: extra.map_or(0, |d| d.len()),
                    accuracy: acc,
                    confusion,
                });
            }
            let (mean_acc, std_acc) = mean_std(&accuracies);
            if matches!(policy, AugPolicy::None) {
                none_mean = Some(mean_acc);
            }
            fraction_cells.push(Cell {
                fraction,
                policy: policy.name().to_string(),
                accuracies,
                mean_acc,
                std_acc,
                delta_vs_none: None,
                acceptance_rate,
            });
        }
        for c in &mut fraction_cells {
            c.delta_vs_none = none_mean.map(|n| c.mean_acc - n);
        }
        cells.extend(fraction_cells);
    }
    Ok(ProtocolReport {
        cells,
        runs,
        warnings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl ProtocolReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,policy,mean_acc,std_acc,delta_vs_none\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                c.fraction,
                c.policy,
                c.mean_acc,
                c.std_acc,
                fmt_opt(c.delta_vs_none)
            ));
        }
        out
    }

    /// `protocol_results.csv`, `protocol_report.json` and one JSON file per
    /// run under `runs/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join("protocol_results.csv"), self.to_csv().as_bytes())?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json("protocol report", e))?;
        write_bytes(&dir.join("protocol_report.json"), json.as_bytes())?;
        for r in &self.runs {
            let name = format!("{}_{}_seed{}.json", r.fraction, r.policy.name(), r.seed);
            let json = serde_json::to_string_pretty(r).map_err(|e| Error::json("run record", e))?;
            write_bytes(&dir.join("runs").join(name), json.as_bytes())?;
        }
        Ok(())
    }
}

/// Knob swept by [`run_ablation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "knob", content = "values", rename_all = "snake_case")]
pub enum Knob {
    Dropout(Vec<f64>),
    Tau(Vec<f64>),
    /// Retrains the diffusion model for every value.
    LambdaCls(Vec<f64>),
}

impl Knob {
    pub fn parse(name: &str, values: Vec<f64>) -> Result<Self> {
        match name {
            "dropout" => Ok(Knob::Dropout(values)),
            "tau" | "threshold" => Ok(Knob::Tau(values)),
            "lambda_cls" => Ok(Knob::LambdaCls(values)),
            other => Err(Error::InvalidArgument(format!(
                "unknown knob `{other}`; expected dropout, tau or lambda_cls"
            ))),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Knob::Dropout(v) | Knob::Tau(v) | Knob::LambdaCls(v) => v,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Knob::Dropout(_) => "dropout",
            Knob::Tau(_) => "tau",
            Knob::LambdaCls(_) => "lambda_cls",
        }
    }
}

/// How to train a diffusion model on a fraction when the knob needs one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionRecipe {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
}

impl DiffusionRecipe {
    /// One model per fraction, trained on that fraction's split.
    pub fn train_fractions(
        &self,
        train: &Dataset,
        fractions: &[f64],
        split_seed: u64,
        cache: &FeatureCache,
    ) -> Result<DiffusionArtifacts> {
        let mut out = DiffusionArtifacts::new();
        for &f in fractions {
            let split = split_fraction(&train.manifest, f, split_seed)?;
            let subset = train.subset(&split.subset);
            let (model, _) =
                DiffusionModel::train(&subset, self.model.clone(), self.schedule, &self.train, cache, |_, _| Ok(()))?;
            out.insert(f, model);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub knob: String,
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
    /// `mean_acc[value][fraction]` with the synthetic policy.
    pub mean_acc: Vec<Vec<f64>>,
    /// `acceptance_rate[value][fraction]` of the refinement filter.
    pub acceptance_rate: Vec<Vec<f64>>,
    pub cells: Vec<Cell>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(self.knob.as_str());
        for f in &self.fractions {
            out.push_str(&format!(",{f}"));
        }
        out.push('\n');
        for (v, row) in self.values.iter().zip(&self.mean_acc) {
            out.push_str(&v.to_string());
            for a in row {
                out.push_str(&format!(",{a:.6}"));
            }
            out.push('\n');
        }
        out
    }

    /// True when acceptance never drops as the knob value grows. Only
    /// meaningful for the `tau` knob.
    pub fn acceptance_monotone(&self) -> bool {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        order.windows(2).all(|w| {
            self.acceptance_rate[w[0]]
                .iter()
                .zip(&self.acceptance_rate[w[1]])
                .all(|(lo, hi)| lo <= hi)
        })
    }
}

/// Reruns the synthetic cell of the protocol for each knob value. The
/// `lambda_cls` knob needs `recipe` to retrain per value.
pub fn run_ablation(
    train: &Dataset,
    test: &Dataset,
    config: &ProtocolConfig,
    knob: &Knob,
    diffusion: &DiffusionArtifacts,
    recipe: Option<&DiffusionRecipe>,
    cache: &FeatureCache,
) -> Result<AblationReport> {
    if knob.values().is_empty() {
        return Err(Error::InvalidArgument(format!("no {} values to sweep", knob.name())));
    }
    let multiplier = config
        .policies
        .iter()
        .find_map(|p| match p {
            AugPolicy::Synthetic { multiplier } => Some(*multiplier),
            _ => None,
        })
        .unwrap_or(5);
    let mut mean_acc = Vec::new();
    let mut acceptance_rate = Vec::new();
    let mut cells = Vec::new();
    for &value in knob.values() {
        let mut sampling = config.sampling.clone();
        let retrained;
        let models = match knob {
            Knob::Dropout(_) => {
                sampling.dropout_rate = value;
                diffusion
            }
            Knob::Tau(_) => {
                sampling.grm_threshold = value;
                diffusion
            }
            Knob::LambdaCls(_) => {
                let recipe = recipe.ok_or_else(|| {
                    Error::InvalidArgument("the lambda_cls knob needs diffusion training settings".into())
                })?;
                let mut r = recipe.clone();
                r.train.lambda_cls = value;
                retrained = r.train_fractions(train, &config.fractions, config.split_seed, cache)?;
                &retrained
            }
        };
        let cfg = ProtocolConfig {
            policies: vec![AugPolicy::Synthetic { multiplier }],
            sampling,
            ..config.clone()
        };
        let report = run_protocol(train, test, &cfg, models, cache)?;
        mean_acc.push(report.cells.iter().map(|c| c.mean_acc).collect());
        acceptance_rate.push(report.cells.iter().map(|c| c.acceptance_rate.unwrap_or(1.0)).collect());
        cells.extend(report.cells);
    }
    Ok(AblationReport {
        knob: knob.name().to_string(),
        values: knob.values().to_vec(),
        fractions: config.fractions.clone(),
        mean_acc,
        acceptance_rate,
        cells,
    })
}
