//! Command-line driver: one subcommand per pipeline stage, each writing a
//! run directory with `manifest.json`, results and checkpoints.

pub mod config;
pub mod manifest;
pub mod plot;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skelforge::metrics::{metrics_report, EmbeddingSet, Source};
use skelforge::model::DiffusionModel;
use skelforge::motion::dataset::{write_bytes, FeatureCache};
use skelforge::motion::{generate_toy_dataset, split_fraction, Dataset, MotionClip};
use skelforge::protocol::{
    run_ablation, run_protocol, DiffusionArtifacts, DiffusionRecipe, Knob, ProtocolConfig,
};
use skelforge::recognizer::{evaluate, train_recognizer, AugPolicy, Recognizer};
use skelforge::sampler::{generate_labels, to_dataset, write_report, GenerationReport, References};
use skelforge::{Error, Result};

use config::ExperimentConfig;
use manifest::Run;

#[derive(Debug, Parser)]
#[command(name = "skelforge", version, about = "Skeleton motion diffusion for recognition data augmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Sectioned TOML config; built-in desk defaults fill missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=1e-4`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Run directory for the manifest and outputs.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for this subcommand's random stream.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write procedural train and test datasets.
    GenToyData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, alias = "per-class")]
        clips_per_class: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train the conditional denoiser on a dataset (or a stratified fraction).
    TrainDiffusion {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate clips per class with dropout and the refinement filter.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, alias = "ckpt")]
        checkpoint: PathBuf,
        /// Real clips used as refinement references.
        #[arg(long)]
        references: PathBuf,
        /// Generate only this class (default: every class).
        #[arg(long)]
        label: Option<usize>,
        #[arg(long, alias = "count")]
        per_class: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        /// Refinement threshold τ; negative disables the filter.
        #[arg(long, alias = "tau")]
        threshold: Option<f64>,
        #[arg(long)]
        guidance: Option<f64>,
    },
    /// Train the recognizer, optionally with an augmentation policy.
    TrainRecognizer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Generated dataset directory, required by the synthetic policy.
        #[arg(long)]
        synthetic: Option<PathBuf>,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Accuracy and confusion matrix of a trained recognizer.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// FID, KID, diversity, precision/recall and within-class spread.
    EvaluateMetrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recognizer: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long, alias = "fake")]
        synthetic: PathBuf,
    },
    /// Fractions × policies × seeds accuracy table.
    RunProtocol {
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Sweep one knob over the synthetic protocol cell.
    RunAblation {
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long)]
        knob: String,
        /// Comma-separated values, e.g. 0,0.1,0.2,0.5.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Render an SVG figure.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Args, Clone)]
pub struct ProtocolArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated real-data fractions.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    /// A single integer n means seeds 0..n; otherwise a comma-separated list.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Diffusion checkpoint per fraction, as FRACTION=PATH. Repeatable.
    #[arg(long = "diffusion", value_name = "FRACTION=PATH")]
    pub diffusion: Vec<String>,
    /// Train a diffusion model for every fraction lacking a checkpoint.
    #[arg(long)]
    pub train_missing: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Loss,
    Protocol,
    PcaScatter,
}

fn seed_list(text: &str) -> Result<Vec<u64>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let parse = |s: &str| {
        s.parse::<u64>()
            .map_err(|_| Error::InvalidArgument(format!("`{s}` is not a seed")))
    };
    match parts.as_slice() {
        [one] => Ok((0..parse(one)?).collect()),
        many => many.iter().map(|s| parse(s)).collect(),
    }
}

fn load_config(common: &Common, extra: Vec<String>) -> Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend(extra);
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn config_json(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn write_json<T: serde::Serialize>(run: &mut Run, rel: &str, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(rel, e))?;
    write_bytes(&run.path(rel), json.as_bytes())?;
    run.output(rel);
    Ok(())
}

fn write_text(run: &mut Run, rel: &str, text: &str) -> Result<()> {
    write_bytes(&run.path(rel), text.as_bytes())?;
    run.output(rel);
    Ok(())
}

/// Starts the run, executes `body`, and records the outcome either way.
fn with_run(
    argv: &[String],
    command: &str,
    common: &Common,
    cfg: &ExperimentConfig,
    seeds: BTreeMap<String, u64>,
    inputs: &[(&str, &Path)],
    body: impl FnOnce(&mut Run) -> Result<()>,
) -> Result<()> {
    let mut run = Run::start(&common.out, command, argv.to_vec(), config_json(cfg), seeds, inputs)?;
    let outcome = body(&mut run);
    run.finish(&outcome)?;
    outcome
}

fn load_fraction(path: &Path, fraction: f64, seed: u64) -> Result<Dataset> {
    let data = Dataset::load(path)?;
    if fraction >= 1.0 {
        return Ok(data);
    }
    let split = split_fraction(&data.manifest, fraction, seed)?;
    for w in &split.warnings {
        log::warn!("{w}");
    }
    Ok(data.subset(&split.subset))
}

fn protocol_setup(
    args: &ProtocolArgs,
    mut extra: Vec<String>,
) -> Result<(ExperimentConfig, ProtocolConfig, Dataset, Dataset)> {
    if let Some(f) = &args.fractions {
        extra.push(format!(
            "protocol.fractions=[{}]",
            f.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
        ));
    }
    if let Some(p) = &args.policies {
        extra.push(format!(
            "protocol.policies=[{}]",
            p.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
        ));
    }
    if let Some(s) = &args.seeds {
        let list = seed_list(s)?;
        extra.push(format!(
            "protocol.seeds=[{}]",
            list.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        ));
    }
    if let Some(j) = args.jobs {
        extra.push(format!("protocol.jobs={j}"));
    }
    if let Some(s) = args.common.seed {
        extra.push(format!("protocol.split_seed={s}"));
    }
    let cfg = load_config(&args.common, extra)?;
    let train = Dataset::load(&args.data)?;
    let test = Dataset::load(&args.test)?;
    if train.num_classes() != test.num_classes() {
        return Err(Error::Data(format!(
            "train set has {} classes, test set {}",
            train.num_classes(),
            test.num_classes()
        )));
    }
    let policies = cfg
        .protocol
        .policies
        .iter()
        .map(|p| cfg.policy(p))
        .collect::<Result<Vec<_>>>()?;
    let protocol = ProtocolConfig {
        fractions: cfg.protocol.fractions.clone(),
        policies,
        seeds: cfg.protocol.seeds.clone(),
        split_seed: cfg.protocol.split_seed,
        recognizer: cfg.recognizer(train.num_classes()),
        sampling: cfg.sampling(),
        jobs: cfg.protocol.jobs,
    };
    Ok((cfg, protocol, train, test))
}

fn recipe(cfg: &ExperimentConfig, num_classes: usize) -> DiffusionRecipe {
    DiffusionRecipe {
        model: cfg.model(num_classes),
        schedule: cfg.schedule(),
        train: cfg.train(),
    }
}

fn diffusion_artifacts(
    args: &ProtocolArgs,
    cfg: &ExperimentConfig,
    protocol: &ProtocolConfig,
    train: &Dataset,
    cache: &FeatureCache,
    run: &mut Run,
) -> Result<DiffusionArtifacts> {
    let mut artifacts = DiffusionArtifacts::new();
    for spec in &args.diffusion {
        let (f, path) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("--diffusion expects FRACTION=PATH, got `{spec}`"))
        })?;
        let f: f64 = f
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("`{f}` is not a fraction")))?;
        artifacts.insert(f, DiffusionModel::load(Path::new(path.trim()))?);
    }
    if args.train_missing {
        let needs_synthetic = protocol
            .policies
            .iter()
            .any(|p| matches!(p, AugPolicy::Synthetic { .. }));
        let missing: Vec<f64> = protocol
            .fractions
            .iter()
            .copied()
            .filter(|&f| artifacts.get(f).is_none())
            .collect();
        if needs_synthetic && !missing.is_empty() {
            let trained = recipe(cfg, train.num_classes()).train_fractions(
                train,
                &missing,
                protocol.split_seed,
                cache,
            )?;
            for f in missing {
                if let Some(m) = trained.get(f) {
                    let rel = format!("checkpoints/diffusion_{f}.skdf");
                    m.save(&run.path(&rel))?;
                    run.checkpoint(&rel)?;
                    artifacts.insert(f, m.clone());
                }
            }
        }
    }
    Ok(artifacts)
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<()> {
    let cache = FeatureCache::from_env();
    match cli.command {
        Command::GenToyData {
            common,
            classes,
            clips_per_class,
            frames,
        } => {
            let mut extra = Vec::new();
            if let Some(c) = classes {
                extra.push(format!("data.classes={c}"));
            }
            if let Some(c) = clips_per_class {
                extra.push(format!("data.clips_per_class={c}"));
            }
            if let Some(f) = frames {
                extra.push(format!("data.frames={f}"));
            }
            if let Some(s) = common.seed {
                extra.push(format!("data.seed={s}"));
            }
            let cfg = load_config(&common, extra)?;
            let d = cfg.data.clone();
            with_run(argv, "gen-toy-data", &common, &cfg, seeds(&[("data", d.seed)]), &[], |run| {
                let train = generate_toy_dataset(d.classes, d.clips_per_class, d.frames, d.seed)?;
                train.save(&run.path("train"))?;
                run.output("train");
                if d.test_clips_per_class > 0 {
                    // Offset seed keeps the test clips disjoint from the training stream.
                    let test = generate_toy_dataset(
                        d.classes,
                        d.test_clips_per_class,
                        d.frames,
                        d.seed.wrapping_add(0x5eed),
                    )?;
                    test.save(&run.path("test"))?;
                    run.output("test");
                }
                Ok(())
            })
        }
        Command::TrainDiffusion {
            common,
            data,
            fraction,
            epochs,
        } => {
            let mut extra = Vec::new();
            if let Some(s) = common.seed {
                extra.push(format!("train.seed={s}"));
            }
            if let Some(e) = epochs {
                extra.push(format!("train.epochs={e}"));
            }
            let cfg = load_config(&common, extra)?;
            let train_cfg = cfg.train();
            with_run(
                argv,
                "train-diffusion",
                &common,
                &cfg,
                seeds(&[("train", train_cfg.seed), ("split", cfg.protocol.split_seed)]),
                &[("data", &data)],
                |run| {
                    let ds = load_fraction(&data, fraction, cfg.protocol.split_seed)?;
                    let mut csv = String::from("epoch,step,lr,total,rec,cls\n");
                    let (model, history) = DiffusionModel::train(
                        &ds,
                        cfg.model(ds.num_classes()),
                        cfg.schedule(),
                        &train_cfg,
                        &cache,
                        |r, _| {
                            log::info!("epoch {} rec {:.5} cls {:.5}", r.epoch, r.rec, r.cls);
                            Ok(())
                        },
                    )?;
                    for r in &history {
                        csv.push_str(&format!(
                            "{},{},{},{},{},{}\n",
                            r.epoch, r.step, r.lr, r.total, r.rec, r.cls
                        ));
                    }
                    write_text(run, "results.csv", &csv)?;
                    model.save(&run.path("checkpoints/diffusion.skdf"))?;
                    run.checkpoint("checkpoints/diffusion.skdf")
                },
            )
        }
        Command::Sample {
            common,
            checkpoint,
            references,
            label,
            per_class,
            dropout,
            threshold,
            guidance,
        } => {
            let mut extra = Vec::new();
            if let Some(s) = common.seed {
                extra.push(format!("sampling.seed={s}"));
            }
            if let Some(n) = per_class {
                extra.push(format!("sampling.per_class={n}"));
            }
            if let Some(d) = dropout {
                extra.push(format!("sampling.dropout={d:?}"));
            }
            if let Some(t) = threshold {
                extra.push(format!("sampling.threshold={t:?}"));
            }
            if let Some(g) = guidance {
                extra.push(format!("sampling.guidance_scale={g:?}"));
            }
            let cfg = load_config(&common, extra)?;
            let base = cfg.sampling();
            with_run(
                argv,
                "sample",
                &common,
                &cfg,
                seeds(&[("sampling", base.seed)]),
                &[("checkpoint", &checkpoint), ("references", &references)],
                |run| {
                    let model = DiffusionModel::load(&checkpoint)?;
                    let refs_ds = Dataset::load(&references)?;
                    let refs = skelforge::model::FeatureSet::with_stats(&refs_ds, &cache, model.stats.clone())?;
                    let k = model.denoiser.config().num_classes;
                    if refs_ds.num_classes() != k {
                        return Err(Error::Data(format!(
                            "references have {} classes, model {k}",
                            refs_ds.num_classes()
                        )));
                    }
                    if let Some(l) = label.filter(|&l| l >= k) {
                        return Err(Error::LabelOutOfRange { label: l, num_classes: k });
                    }
                    let counts: Vec<(usize, usize)> = (0..k)
                        .filter(|l| label.is_none_or(|only| only == *l))
                        .map(|l| (l, cfg.sampling.per_class))
                        .collect();
                    let batches = generate_labels(
                        &model,
                        &base,
                        &counts,
                        References {
                            sequences: &refs.sequences,
                            labels: &refs.labels,
                        },
                    )?;
                    let report = GenerationReport::new(&base, &batches, &counts);
                    write_report(&run.path("generation_report.json"), &report)?;
                    run.output("generation_report.json");
                    let ds = to_dataset(&batches, &model.stats, k, refs_ds.manifest.class_names.clone(), "syn_")?;
                    ds.save(&run.path("generated"))?;
                    run.output("generated");
                    Ok(())
                },
            )
        }
        Command::TrainRecognizer {
            common,
            data,
            synthetic,
            policy,
            fraction,
            epochs,
        } => {
            let mut extra = Vec::new();
            if let Some(s) = common.seed {
                extra.push(format!("recognizer.seed={s}"));
            }
            if let Some(e) = epochs {
                extra.push(format!("recognizer.epochs={e}"));
            }
            if let Some(p) = &policy {
                extra.push(format!("recognizer.policy={p:?}"));
            }
            let cfg = load_config(&common, extra)?;
            let policy = cfg.policy(&cfg.recognizer.policy)?;
            let mut inputs: Vec<(&str, &Path)> = vec![("data", &data)];
            if let Some(s) = &synthetic {
                inputs.push(("synthetic", s));
            }
            with_run(
                argv,
                "train-recognizer",
                &common,
                &cfg,
                seeds(&[("recognizer", cfg.recognizer.seed), ("split", cfg.protocol.split_seed)]),
                &inputs,
                |run| {
                    let ds = load_fraction(&data, fraction, cfg.protocol.split_seed)?;
                    let mut clips: Vec<MotionClip> = ds.clips.clone();
                    if let AugPolicy::Synthetic { multiplier } = policy {
                        let dir = synthetic.as_ref().ok_or_else(|| {
                            Error::InvalidArgument("the synthetic policy needs --synthetic DIR".into())
                        })?;
                        let syn = Dataset::load(dir)?;
                        // Keep `multiplier` generated clips per real clip of each class.
                        let mut budget = vec![0usize; ds.num_classes()];
                        for c in &ds.clips {
                            budget[c.label] += multiplier;
                        }
                        for c in syn.clips {
                            if c.label < budget.len() && budget[c.label] > 0 {
                                budget[c.label] -= 1;
                                clips.push(c);
                            }
                        }
                        if budget.iter().any(|&b| b > 0) {
                            log::warn!("synthetic set is smaller than {multiplier}x the real set");
                        }
                    }
                    let mut csv = String::from("epoch,loss,accuracy\n");
                    let model = train_recognizer(&clips, cfg.recognizer(ds.num_classes()), &policy, |r| {
                        csv.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.accuracy));
                    })?;
                    write_text(run, "results.csv", &csv)?;
                    model.save(&run.path("checkpoints/recognizer.skdf"))?;
                    run.checkpoint("checkpoints/recognizer.skdf")
                },
            )
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
        } => {
            let cfg = load_config(&common, vec![])?;
            with_run(
                argv,
                "evaluate",
                &common,
                &cfg,
                BTreeMap::new(),
                &[("checkpoint", &checkpoint), ("data", &data)],
                |run| {
                    let model = Recognizer::load(&checkpoint)?;
                    let ds = Dataset::load(&data)?;
                    let eval = evaluate(&model, &ds.clips)?;
                    println!("accuracy {:.4}", eval.accuracy);
                    write_json(run, "evaluation.json", &eval)?;
                    write_text(run, "results.csv", &format!("accuracy\n{}\n", eval.accuracy))
                },
            )
        }
        Command::EvaluateMetrics {
            common,
            recognizer,
            real,
            synthetic,
        } => {
            let mut extra = Vec::new();
            if let Some(s) = common.seed {
                extra.push(format!("metrics.seed={s}"));
            }
            let cfg = load_config(&common, extra)?;
            // `--out report.json` names the report; the run directory is its parent.
            let (common, report_name) = match common.out.extension() {
                Some(ext) if ext == "json" => {
                    let name = common.out.file_name().map(|n| n.to_string_lossy().into_owned());
                    let parent = common.out.parent().map(Path::to_path_buf).unwrap_or_default();
                    let dir = if parent.as_os_str().is_empty() { PathBuf::from(".") } else { parent };
                    (Common { out: dir, ..common }, name.unwrap_or_else(|| "metrics.json".into()))
                }
                _ => (common, "metrics.json".to_string()),
            };
            with_run(
                argv,
                "evaluate-metrics",
                &common,
                &cfg,
                seeds(&[("metrics", cfg.metrics.seed)]),
                &[("recognizer", &recognizer), ("real", &real), ("synthetic", &synthetic)],
                |run| {
                    let model = Recognizer::load(&recognizer)?;
                    let real_ds = Dataset::load(&real)?;
                    let syn_ds = Dataset::load(&synthetic)?;
                    let embed = |ds: &Dataset, source| {
                        let refs: Vec<&MotionClip> = ds.clips.iter().collect();
                        EmbeddingSet::new(model.embed(&refs)?, ds.labels(), source)
                    };
                    let r = embed(&real_ds, Source::Real)?;
                    let s = embed(&syn_ds, Source::Synthetic)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.metrics.seed);
                    let report = metrics_report(&r, &s, cfg.metrics.diversity_pairs, cfg.metrics.k, &mut rng)?;
                    write_json(run, &report_name, &report)?;
                    let mut csv = String::from("source,label");
                    for j in 0..r.dim() {
                        csv.push_str(&format!(",e{j}"));
                    }
                    csv.push('\n');
                    for (set, name) in [(&r, "real"), (&s, "synthetic")] {
                        for (row, label) in set.vectors.outer_iter().zip(&set.labels) {
                            csv.push_str(&format!("{name},{label}"));
                            for v in row {
                                csv.push_str(&format!(",{v}"));
                            }
                            csv.push('\n');
                        }
                    }
                    write_text(run, "embeddings.csv", &csv)
                },
            )
        }
        Command::RunProtocol { protocol: args } => {
            let (cfg, protocol, train, test) = protocol_setup(&args, vec![])?;
            with_run(
                argv,
                "run-protocol",
                &args.common,
                &cfg,
                seeds(&[("split", protocol.split_seed), ("sampling", protocol.sampling.seed)]),
                &[("data", &args.data), ("test", &args.test)],
                |run| {
                    let artifacts = diffusion_artifacts(&args, &cfg, &protocol, &train, &cache, run)?;
                    let report = run_protocol(&train, &test, &protocol, &artifacts, &cache)?;
                    report.write(&run.dir)?;
                    run.output("protocol_results.csv");
                    run.output("protocol_report.json");
                    write_text(run, "results.csv", &report.to_csv())
                },
            )
        }
        Command::RunAblation {
            protocol: args,
            knob,
            values,
        } => {
            let knob = Knob::parse(&knob, values)?;
            let (cfg, protocol, train, test) = protocol_setup(&args, vec![])?;
            with_run(
                argv,
                "run-ablation",
                &args.common,
                &cfg,
                seeds(&[("split", protocol.split_seed), ("sampling", protocol.sampling.seed)]),
                &[("data", &args.data), ("test", &args.test)],
                |run| {
                    let artifacts = match knob {
                        Knob::LambdaCls(_) => DiffusionArtifacts::new(),
                        _ => diffusion_artifacts(&args, &cfg, &protocol, &train, &cache, run)?,
                    };
                    let r = recipe(&cfg, train.num_classes());
                    let report = run_ablation(&train, &test, &protocol, &knob, &artifacts, Some(&r), &cache)?;
                    if matches!(knob, Knob::Tau(_)) && !report.acceptance_monotone() {
                        log::warn!("acceptance rate decreased as tau grew");
                    }
                    write_json(run, "ablation_report.json", &report)?;
                    write_text(run, "results.csv", &report.to_csv())
                },
            )
        }
        Command::Plot { common, kind, input } => {
            let cfg = load_config(&common, vec![])?;
            with_run(argv, "plot", &common, &cfg, BTreeMap::new(), &[("input", &input)], |run| {
                let svg = match kind {
                    PlotKind::Loss => plot::loss_plot(&input)?,
                    PlotKind::Protocol => plot::protocol_plot(&input)?,
                    PlotKind::PcaScatter => {
                        let data = plot::read_embeddings(&input)?;
                        let summary = plot::pca_summary(&data, cfg.metrics.centroid_shift_max)?;
                        if !summary.centroids_stable {
                            log::warn!(
                                "synthetic points move a class centroid by {:.2} of its spread",
                                summary.max_relative_shift
                            );
                        }
                        write_json(run, "figures/pca_summary.json", &summary)?;
                        plot::pca_scatter(&data)?
                    }
                };
                let name = match kind {
                    PlotKind::Loss => "figures/loss.svg",
                    PlotKind::Protocol => "figures/protocol.svg",
                    PlotKind::PcaScatter => "figures/pca_scatter.svg",
                };
                write_text(run, name, &svg)
            })
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 success, 2 usage, 3 config, 4 runtime or data, 5
/// numeric failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
