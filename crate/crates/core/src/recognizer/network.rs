//! Compact spatio-temporal graph convolution network.
//!
//! Each stage mixes joints over the normalized skeleton graph, projects
//! channels, then convolves over time (kernel 9, stride 2). Global average
//! pooling over frames and joints gives the embedding; one linear layer maps
//! it to logits.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use skelforge_autograd::{xavier_uniform, Graph, Matrix, ParamStore, Var};

use crate::error::{Error, Result};
use crate::motion::features::{facing_yaw, yaw_rotation};
use crate::motion::{MotionClip, Skeleton, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    pub channels: Vec<usize>,
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
    pub num_classes: usize,
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl RecognizerConfig {
    pub fn desk(num_classes: usize) -> Self {
        Self {
            channels: vec![32, 64, 128],
            temporal_kernel: 9,
            temporal_stride: 2,
            num_classes,
            window: 48,
            epochs: 40,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
        }
    }

    pub fn embedding_width(&self) -> usize {
        *self.channels.last().expect("validated: at least one stage")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: format!("recognizer.{key}"),
                message: message.into(),
            })
        };
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels", "need at least one stage of positive width");
        }
        if self.temporal_kernel == 0 || self.temporal_stride == 0 {
            return bad("temporal_kernel", "kernel and stride must be positive");
        }
        if self.num_classes < 2 {
            return bad("num_classes", "need at least two classes");
        }
        if self.window == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("window", "window, epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        Ok(())
    }
}

/// `D^{-1} (A + I)` for the undirected bone graph: rows sum to one and the
/// sparsity pattern is symmetric.
pub fn normalized_adjacency(skeleton: &Skeleton) -> Matrix {
    let mut a = Array2::<f64>::eye(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        if let Some(p) = skeleton.parent(j) {
            a[[j, p]] = 1.0;
            a[[p, j]] = 1.0;
        }
    }
    let deg = a.sum_axis(Axis(1));
    for (mut row, d) in a.outer_iter_mut().zip(deg.iter()) {
        row /= *d;
    }
    a
}

/// Window of `frames` frames, translated so the first frame's root sits at
/// the ground origin, and rotated so that frame faces +x.
pub fn canonicalize(clip: &MotionClip, skeleton: &Skeleton) -> Result<Array2<f64>> {
    let root = clip.joint(0, 0);
    let yaw = facing_yaw(clip, 0, skeleton)?;
    let to_local = yaw_rotation(yaw).transpose();
    let f = clip.num_frames();
    let mut out = Array2::zeros((f * NUM_JOINTS, 3));
    for t in 0..f {
        for j in 0..NUM_JOINTS {
            let mut p = clip.joint(t, j);
            p.x -= root.x;
            p.z -= root.z;
            let q = to_local * p;
            let r = t * NUM_JOINTS + j;
            out[[r, 0]] = q.x;
            out[[r, 1]] = q.y;
            out[[r, 2]] = q.z;
        }
    }
    Ok(out)
}

/// Canonicalized input rows for a batch of clips, each cut to `window`
/// frames from frame 0.
pub fn batch_input(clips: &[&MotionClip], window: usize, skeleton: &Skeleton) -> Result<Array2<f64>> {
    let mut parts = Vec::with_capacity(clips.len());
    for c in clips {
        parts.push(canonicalize(&c.leading_window(window), skeleton)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct Recognizer {
    config: RecognizerConfig,
    params: ParamStore,
    adjacency: Matrix,
    trained: bool,
}

/// Graph handles from [`Recognizer::forward_graph`].
#[derive(Debug, Clone, Copy)]
pub struct RecognizerVars {
    pub embedding: Var,
    pub logits: Var,
}

impl Recognizer {
    pub fn init<R: Rng + ?Sized>(config: RecognizerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut c_in = 3;
        for (s, &c) in config.channels.iter().enumerate() {
            params.insert(format!("stage{s}.spatial.w"), xavier_uniform(c_in, c, rng));
            params.insert(format!("stage{s}.spatial.b"), Array2::zeros((1, c)));
            params.insert(
                format!("stage{s}.temporal.w"),
                xavier_uniform(config.temporal_kernel * c, c, rng),
            );
            params.insert(format!("stage{s}.temporal.b"), Array2::zeros((1, c)));
            c_in = c;
        }
        params.insert("fc.w", xavier_uniform(c_in, config.num_classes, rng));
        params.insert("fc.b", Array2::zeros((1, config.num_classes)));
        Ok(Self::from_parts(config, params, false))
    }

    pub fn from_parts(config: RecognizerConfig, params: ParamStore, trained: bool) -> Self {
        Self {
            config,
            params,
            adjacency: normalized_adjacency(&Skeleton::smpl22()),
            trained,
        }
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn linear(&self, g: &mut Graph, x: Var, name: &str) -> Var {
        let w = g.param(&self.params, self.params.id(&format!("{name}.w")).expect("param"));
        let b = g.param(&self.params, self.params.id(&format!("{name}.b")).expect("param"));
        g.linear(x, w, b)
    }

    /// `input` holds `batch · frames · 22` rows of 3 coordinates.
    pub fn forward_graph(&self, g: &mut Graph, input: Var, batch: usize) -> Result<RecognizerVars> {
        let rows = g.value(input).nrows();
        if batch == 0 || rows % (batch * NUM_JOINTS) != 0 {
            return Err(Error::Shape(format!(
                "{rows} input rows do not split into {batch} sequences of {NUM_JOINTS} joints"
            )));
        }
        let mut frames = rows / (batch * NUM_JOINTS);
        let mut x = input;
        for s in 0..self.config.channels.len() {
            x = g.joint_mix(x, &self.adjacency);
            x = self.linear(g, x, &format!("stage{s}.spatial"));
            x = g.silu(x);
            x = g.temporal_unfold(
                x,
                batch,
                frames,
                NUM_JOINTS,
                self.config.temporal_kernel,
                self.config.temporal_stride,
            );
            frames = frames.div_ceil(self.config.temporal_stride);
            x = self.linear(g, x, &format!("stage{s}.temporal"));
            x = g.silu(x);
        }
        let embedding = g.group_mean(x, frames * NUM_JOINTS);
        let logits = self.linear(g, embedding, "fc");
        Ok(RecognizerVars { embedding, logits })
    }

    /// `(embeddings, logits)` for canonicalized input rows.
    pub fn run(&self, input: Array2<f64>, batch: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut g = Graph::new();
        let x = g.constant(input);
        let out = self.forward_graph(&mut g, x, batch)?;
        Ok((g.value(out.embedding).clone(), g.value(out.logits).clone()))
    }
}
