//! Conditional transformer encoder–decoder.
//!
//! ```text
//! z    = W_p [ MLP_t(sin(t)) ; MLP_c(onehot(c)) ]            prefix token
//! h    = W_in x_t + pos
//! enc  = Encoder([z ; h])
//! dec  = Decoder([enc_0 ; h])
//! x0   = W_out LN(dec)[frames]
//! cls  = MLP(mean(dec[frames]))
//! ```
//!
//! Blocks are pre-norm. Dropout sites are the attention output projection
//! and the feed-forward activation.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use skelforge_autograd::{xavier_uniform, Graph, Matrix, ParamStore, Var};

use super::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph handles produced by [`Denoiser::forward_graph`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `B·T × 263`, batch-major rows.
    pub x0_hat: Var,
    /// `B × num_classes`.
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: ModelConfig,
    params: ParamStore,
    positions: Matrix,
}

/// `rows × width` sinusoidal table: sines in the first half, cosines after.
pub fn sinusoidal_table(values: &[f64], width: usize) -> Matrix {
    let half = width / 2;
    Array2::from_shape_fn((values.len(), width), |(r, c)| {
        let i = if c < half { c } else { c - half };
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = values[r] * freq;
        if c < half {
            a.sin()
        } else {
            a.cos()
        }
    })
}

fn add_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    cols: usize,
    rng: &mut R,
) {
    store.insert(format!("{name}.w"), xavier_uniform(rows, cols, rng));
    store.insert(format!("{name}.b"), Array2::zeros((1, cols)));
}

fn add_norm(store: &mut ParamStore, name: &str, width: usize) {
    store.insert(format!("{name}.g"), Array2::ones((1, width)));
    store.insert(format!("{name}.b"), Array2::zeros((1, width)));
}

impl Denoiser {
    /// Xavier-uniform projections, zero biases, unit norm gains, and a zero
    /// output projection so the untrained model predicts `x0_hat = 0`.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ff = config.feed_forward_dim;
        let mut s = ParamStore::new();
        add_linear(&mut s, "in_proj", config.feature_width, d, rng);
        add_linear(&mut s, "time.fc1", d, d, rng);
        add_linear(&mut s, "time.fc2", d, d, rng);
        add_linear(&mut s, "label.fc1", config.num_classes, d, rng);
        add_linear(&mut s, "label.fc2", d, d, rng);
        add_linear(&mut s, "prefix", 2 * d, d, rng);
        for stack in ["enc", "dec"] {
            for l in 0..config.layers {
                let p = format!("{stack}.{l}");
                add_norm(&mut s, &format!("{p}.ln1"), d);
                add_linear(&mut s, &format!("{p}.qkv"), d, 3 * d, rng);
                add_linear(&mut s, &format!("{p}.attn_out"), d, d, rng);
                add_norm(&mut s, &format!("{p}.ln2"), d);
                add_linear(&mut s, &format!("{p}.ff1"), d, ff, rng);
                add_linear(&mut s, &format!("{p}.ff2"), ff, d, rng);
            }
            add_norm(&mut s, &format!("{stack}.ln_f"), d);
        }
        s.insert("out_proj.w", Array2::zeros((d, config.feature_width)));
        s.insert("out_proj.b", Array2::zeros((1, config.feature_width)));
        add_linear(&mut s, "cls.fc1", d, config.classifier_hidden, rng);
        add_linear(&mut s, "cls.fc2", config.classifier_hidden, config.num_classes, rng);
        Ok(Self::from_parts(config, s))
    }

    /// Wraps an existing parameter store, e.g. one read from a checkpoint.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Self {
        let frames: Vec<f64> = (0..config.max_frames).map(|f| f as f64).collect();
        let positions = sinusoidal_table(&frames, config.d_model);
        Self {
            config,
            params,
            positions,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn p(&self, g: &mut Graph, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        g.param(&self.params, id)
    }

    fn linear(&self, g: &mut Graph, x: Var, name: &str) -> Var {
        let w = self.p(g, &format!("{name}.w"));
        let b = self.p(g, &format!("{name}.b"));
        g.linear(x, w, b)
    }

    fn norm(&self, g: &mut Graph, x: Var, name: &str) -> Var {
        let gain = self.p(g, &format!("{name}.g"));
        let bias = self.p(g, &format!("{name}.b"));
        g.layer_norm(x, gain, bias)
    }

    #[allow(clippy::too_many_arguments)]
    fn block<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        x: Var,
        name: &str,
        batch: usize,
        seq: usize,
        rate: f64,
        rng: &mut R,
    ) -> Var {
        let h = self.norm(g, x, &format!("{name}.ln1"));
        let qkv = self.linear(g, h, &format!("{name}.qkv"));
        let a = g.attention(qkv, batch, seq, self.config.heads);
        let a = self.linear(g, a, &format!("{name}.attn_out"));
        let a = g.dropout(a, rate, rng);
        let x = g.add(x, a);
        let h = self.norm(g, x, &format!("{name}.ln2"));
        let h = self.linear(g, h, &format!("{name}.ff1"));
        let h = g.gelu(h);
        let h = g.dropout(h, rate, rng);
        let h = self.linear(g, h, &format!("{name}.ff2"));
        g.add(x, h)
    }

    fn check_inputs(&self, batch: usize, frames: usize, width: usize, t: &[usize], labels: &[usize]) -> Result<()> {
        if width != self.config.feature_width {
            return Err(Error::Shape(format!(
                "input width {width}, model expects {}",
                self.config.feature_width
            )));
        }
        if frames == 0 || frames > self.config.max_frames {
            return Err(Error::Shape(format!(
                "{frames} frames, model supports 1..={}",
                self.config.max_frames
            )));
        }
        if t.len() != batch || labels.len() != batch {
            return Err(Error::Shape(format!(
                "batch of {batch} with {} steps and {} labels",
                t.len(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.config.num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.config.num_classes,
            });
        }
        Ok(())
    }

    /// Builds the forward pass on `g`. `x_t` must hold `batch · frames` rows.
    ///
    /// Train mode applies the configured internal dropout in both stacks.
    /// `dropout_override` replaces the decoder rate in either mode; in eval
    /// mode without an override nothing is stochastic.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        x_t: Var,
        batch: usize,
        t: &[usize],
        labels: &[usize],
        mode: Mode,
        dropout_override: Option<f64>,
        rng: &mut R,
    ) -> Result<ForwardVars> {
        let (rows, width) = g.value(x_t).dim();
        if batch == 0 || rows % batch != 0 {
            return Err(Error::Shape(format!("{rows} rows do not split into {batch} sequences")));
        }
        let frames = rows / batch;
        self.check_inputs(batch, frames, width, t, labels)?;
        if let Some(r) = dropout_override {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        let internal = match mode {
            Mode::Train => self.config.internal_dropout,
            Mode::Eval => 0.0,
        };
        let enc_rate = internal;
        let dec_rate = dropout_override.unwrap_or(internal);
        let d = self.config.d_model;

        let steps: Vec<f64> = t.iter().map(|&s| s as f64).collect();
        let temb = g.constant(sinusoidal_table(&steps, d));
        let temb = self.linear(g, temb, "time.fc1");
        let temb = g.silu(temb);
        let temb = self.linear(g, temb, "time.fc2");
        let mut onehot = Array2::zeros((batch, self.config.num_classes));
        for (i, &c) in labels.iter().enumerate() {
            onehot[[i, c]] = 1.0;
        }
        let lemb = g.constant(onehot);
        let lemb = self.linear(g, lemb, "label.fc1");
        let lemb = g.silu(lemb);
        let lemb = self.linear(g, lemb, "label.fc2");
        let cond = g.concat_cols(&[temb, lemb]);
        let prefix = self.linear(g, cond, "prefix");

        let h = self.linear(g, x_t, "in_proj");
        let pos = g.constant(self.positions.slice(ndarray::s![..frames, ..]).to_owned());
        let h = g.add_tiled(h, pos);

        let seq = frames + 1;
        let mut e = g.prepend_rows(prefix, h, batch);
        for l in 0..self.config.layers {
            e = self.block(g, e, &format!("enc.{l}"), batch, seq, enc_rate, rng);
        }
        let e = self.norm(g, e, "enc.ln_f");
        let prefix_rows: Vec<usize> = (0..batch).map(|b| b * seq).collect();
        let frame_rows: Vec<usize> = (0..batch)
            .flat_map(|b| (1..seq).map(move |f| b * seq + f))
            .collect();
        let memory = g.gather_rows(e, prefix_rows);

        let mut x = g.prepend_rows(memory, h, batch);
        for l in 0..self.config.layers {
            x = self.block(g, x, &format!("dec.{l}"), batch, seq, dec_rate, rng);
        }
        let x = self.norm(g, x, "dec.ln_f");
        let tokens = g.gather_rows(x, frame_rows);
        let x0_hat = self.linear(g, tokens, "out_proj");

        let pooled = g.group_mean(tokens, frames);
        let c = self.linear(g, pooled, "cls.fc1");
        let c = g.gelu(c);
        let logits = self.linear(g, c, "cls.fc2");
        Ok(ForwardVars { x0_hat, logits })
    }

    /// Array-level forward: `(x0_hat: B × T × 263, logits: B × C)`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x_t: &Array3<f64>,
        t: &[usize],
        labels: &[usize],
        mode: Mode,
        dropout_override: Option<f64>,
        rng: &mut R,
    ) -> Result<(Array3<f64>, Array2<f64>)> {
        let (b, f, w) = x_t.dim();
        self.check_inputs(b, f, w, t, labels)?;
        let mut g = Graph::new();
        let flat = x_t
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * f, w))
            .map_err(|e| Error::Shape(e.to_string()))?;
        let x = g.constant(flat);
        let out = self.forward_graph(&mut g, x, b, t, labels, mode, dropout_override, rng)?;
        let x0 = g
            .value(out.x0_hat)
            .clone()
            .into_shape_with_order((b, f, w))
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok((x0, g.value(out.logits).clone()))
    }

    /// Gradient of `sum_i log softmax(logits_i)[label_i]` with respect to
    /// `x_t`, evaluated without dropout. Used for classifier guidance.
    pub fn class_log_prob_gradient(
        &self,
        x_t: &Array3<f64>,
        t: &[usize],
        labels: &[usize],
    ) -> Result<Array3<f64>> {
        let (b, f, w) = x_t.dim();
        self.check_inputs(b, f, w, t, labels)?;
        let mut g = Graph::new();
        let flat = x_t
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * f, w))
            .map_err(|e| Error::Shape(e.to_string()))?;
        let x = g.input(flat);
        // Eval mode without an override draws nothing from the stream.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_graph(&mut g, x, b, t, labels, Mode::Eval, None, &mut rng)?;
        // Mean cross-entropy times -B is the summed log-probability.
        let ce = g.softmax_cross_entropy(out.logits, labels);
        let lp = g.scale(ce, -(b as f64));
        let grads = g.backward(lp);
        let dx = grads
            .wrt(x)
            .cloned()
            .unwrap_or_else(|| Array2::zeros((b * f, w)));
        dx.into_shape_with_order((b, f, w))
            .map_err(|e| Error::Shape(e.to_string()))
    }
}
