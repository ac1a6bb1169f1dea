//! Skeleton action recognizer: training, evaluation and embeddings.

pub mod augment;
pub mod network;

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skelforge_autograd::{Adam, Graph, ParamStore};

pub use augment::{classical_augment, rotate_clip, scale_clip, AugPolicy};
pub use network::{batch_input, canonicalize, normalized_adjacency, Recognizer, RecognizerConfig};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::motion::{MotionClip, Skeleton};

/// Anything that labels clips. Lets evaluation run against stubs.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn predict(&self, clips: &[&MotionClip]) -> Result<Vec<usize>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn random_crop<R: Rng + ?Sized>(clip: &MotionClip, window: usize, rng: &mut R) -> Result<MotionClip> {
    let f = clip.num_frames();
    if f <= window {
        return Ok(clip.leading_window(window));
    }
    let start = rng.random_range(0..=f - window);
    clip.slice_frames(start, start + window)
}

/// Trains from scratch on `clips`. Classical policies redraw their
/// transform for every clip in every epoch; the other policies leave the
/// clips untouched (synthetic clips are expected to be in `clips` already).
pub fn train_recognizer(
    clips: &[MotionClip],
    config: RecognizerConfig,
    policy: &AugPolicy,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Recognizer> {
    config.validate()?;
    policy.validate()?;
    let mut present = vec![false; config.num_classes];
    for c in clips {
        if c.label >= config.num_classes {
            return Err(Error::LabelOutOfRange {
                label: c.label,
                num_classes: config.num_classes,
            });
        }
        present[c.label] = true;
    }
    let missing: Vec<usize> = (0..config.num_classes).filter(|&c| !present[c]).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "recognizer training set has no clips of classes {missing:?}"
        )));
    }
    let skeleton = Skeleton::smpl22();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Recognizer::init(config.clone(), &mut rng)?;
    let mut adam = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let crop = random_crop(&clips[i], config.window, &mut rng)?;
                batch.push(classical_augment(&crop, policy, &mut rng));
            }
            let refs: Vec<&MotionClip> = batch.iter().collect();
            let labels: Vec<usize> = batch.iter().map(|c| c.label).collect();
            let input = batch_input(&refs, config.window, &skeleton)?;
            let mut g = Graph::new();
            let x = g.constant(input);
            let vars = model.forward_graph(&mut g, x, chunk.len())?;
            let loss = g.softmax_cross_entropy(vars.logits, &labels);
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("recognizer loss at epoch {epoch}")));
            }
            correct += argmax_rows(g.value(vars.logits))
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            loss_sum += value * chunk.len() as f64;
            let grads = g.backward(loss);
            adam.step(model.params_mut(), &grads.params());
        }
        on_epoch(&EpochRecord {
            epoch,
            loss: loss_sum / clips.len() as f64,
            accuracy: correct as f64 / clips.len() as f64,
        });
    }
    // Checkpoints hold f32, so round now to make a reload exact.
    model.params_mut().round_to_f32();
    model.mark_trained();
    Ok(model)
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

const EVAL_CHUNK: usize = 32;

impl Recognizer {
    fn require_trained(&self) -> Result<()> {
        if self.is_trained() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "recognizer has not been trained; embeddings would be meaningless".into(),
            ))
        }
    }

    fn run_clips(&self, clips: &[&MotionClip]) -> Result<(Array2<f64>, Array2<f64>)> {
        let skeleton = Skeleton::smpl22();
        let width = self.config().embedding_width();
        let k = self.config().num_classes;
        let mut emb = Array2::zeros((0, width));
        let mut logits = Array2::zeros((0, k));
        for chunk in clips.chunks(EVAL_CHUNK) {
            let input = batch_input(chunk, self.config().window, &skeleton)?;
            let (e, l) = self.run(input, chunk.len())?;
            emb.append(ndarray::Axis(0), e.view()).map_err(|e| Error::Shape(e.to_string()))?;
            logits.append(ndarray::Axis(0), l.view()).map_err(|e| Error::Shape(e.to_string()))?;
        }
        Ok((emb, logits))
    }

    /// Pooled penultimate features, one row per clip.
    pub fn embed(&self, clips: &[&MotionClip]) -> Result<Array2<f64>> {
        self.require_trained()?;
        Ok(self.run_clips(clips)?.0)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let stored = StoredRecognizer {
            kind: KIND.into(),
            config: self.config().clone(),
            trained: self.is_trained(),
        };
        let json = serde_json::to_string(&stored).map_err(|e| Error::json("recognizer config", e))?;
        let mut c = Checkpoint::new(json);
        for (_, name, value) in self.params().iter() {
            c.push_matrix(name, value);
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let stored: StoredRecognizer =
            serde_json::from_str(&c.config_json).map_err(|e| Error::json("checkpoint config", e))?;
        if stored.kind != KIND {
            return Err(Error::Data(format!(
                "checkpoint holds a `{}` model, expected `{KIND}`",
                stored.kind
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let reference = Recognizer::init(stored.config.clone(), &mut rng)?;
        let mut params = ParamStore::new();
        for (_, name, value) in reference.params().iter() {
            let m = c.matrix(name)?;
            if m.dim() != value.dim() {
                return Err(Error::Data(format!("parameter `{name}` misshapen")));
            }
            params.insert(name.to_string(), m);
        }
        if c.arrays.len() != params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} arrays, config implies {}",
                c.arrays.len(),
                params.len()
            )));
        }
        Ok(Recognizer::from_parts(stored.config, params, stored.trained))
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

const KIND: &str = "recognizer";

#[derive(Serialize, Deserialize)]
struct StoredRecognizer {
    kind: String,
    config: RecognizerConfig,
    trained: bool,
}

impl Classifier for Recognizer {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn predict(&self, clips: &[&MotionClip]) -> Result<Vec<usize>> {
        self.require_trained()?;
        Ok(argmax_rows(&self.run_clips(clips)?.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_accuracy: Vec<Option<f64>>,
}

pub fn evaluate<C: Classifier + ?Sized>(model: &C, clips: &[MotionClip]) -> Result<Evaluation> {
    if clips.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let k = model.num_classes();
    let refs: Vec<&MotionClip> = clips.iter().collect();
    let predicted = model.predict(&refs)?;
    let mut confusion = vec![vec![0; k]; k];
    for (c, &p) in clips.iter().zip(&predicted) {
        if c.label >= k || p >= k {
            return Err(Error::LabelOutOfRange {
                label: c.label.max(p),
                num_classes: k,
            });
        }
        confusion[c.label][p] += 1;
    }
    let hits: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    Ok(Evaluation {
        accuracy: hits as f64 / clips.len() as f64,
        confusion,
        per_class_accuracy,
    })
}
