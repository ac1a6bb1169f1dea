use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

use crate::param::{ParamId, ParamStore};
use crate::Matrix;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `x + tile`, where the rows of `tile` repeat down the rows of `x`.
    AddTiled(Var, Var),
    MulConst(Var, Matrix),
    Gelu(Var),
    Silu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Attention {
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<Matrix>,
    },
    ConcatCols(Vec<Var>),
    PrependRows {
        prefix: Var,
        body: Var,
        batch: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    GroupMean {
        x: Var,
        group: usize,
    },
    JointMix {
        x: Var,
        adj: Matrix,
    },
    TemporalUnfold {
        x: Var,
        batch: usize,
        frames: usize,
        joints: usize,
        kernel: usize,
        stride: usize,
    },
    Sum(Var),
    Mse {
        pred: Var,
        target: Matrix,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation tape.
///
/// Every operation evaluates eagerly and records enough state to run its
/// adjoint. Build a fresh graph for each forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A non-parameter leaf whose gradient is wanted (e.g. a network input).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Inserts a parameter leaf; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Adds `tile` (k rows) to `x` (n rows, n a multiple of k) repeating the
    /// tile every k rows. A one-row tile is an ordinary bias broadcast.
    pub fn add_tiled(&mut self, x: Var, tile: Var) -> Var {
        let xv = self.value(x);
        let tv = self.value(tile);
        let k = tv.nrows();
        assert_eq!(xv.ncols(), tv.ncols(), "add_tiled: column mismatch");
        assert_eq!(xv.nrows() % k, 0, "add_tiled: rows not a tile multiple");
        let mut value = xv.clone();
        for mut chunk in value.axis_chunks_iter_mut(Axis(0), k) {
            chunk += tv;
        }
        let rg = self.rg(x) || self.rg(tile);
        self.push(value, Op::AddTiled(x, tile), rg)
    }

    /// `x @ w + b` with `b` a single row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_tiled(h, b)
    }

    /// Elementwise product with a fixed matrix.
    pub fn mul_const(&mut self, x: Var, mask: Matrix) -> Var {
        assert_eq!(self.value(x).dim(), mask.dim(), "mul_const: shape mismatch");
        let value = self.value(x) * &mask;
        let rg = self.rg(x);
        self.push(value, Op::MulConst(x, mask), rg)
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and scales
    /// the survivors by `1 / (1 - rate)`. A zero rate is the identity and
    /// draws nothing from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        assert!(rate < 1.0, "dropout rate must be < 1");
        let keep = 1.0 - rate;
        let (r, c) = self.value(x).dim();
        let mask = Array2::from_shape_simple_fn((r, c), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.mul_const(x, mask)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| {
            let u = GELU_C * (v + 0.044715 * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        });
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v / (1.0 + (-v).exp()));
        let rg = self.rg(x);
        self.push(value, Op::Silu(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Row-wise layer normalization with a learned gain and bias (1 × d each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let mut xhat = Array2::zeros((n, d));
        let mut rstd = Vec::with_capacity(n);
        for (row, mut out) in xv.outer_iter().zip(xhat.outer_iter_mut()) {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            Zip::from(&mut out).and(&row).for_each(|o, &v| *o = (v - mean) * r);
            rstd.push(r);
        }
        let g = self.value(gain).row(0).to_owned();
        let b = self.value(bias).row(0).to_owned();
        let mut value = xhat.clone();
        for mut row in value.outer_iter_mut() {
            Zip::from(&mut row)
                .and(&g)
                .and(&b)
                .for_each(|v, &g, &b| *v = *v * g + b);
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` holds `batch * seq` rows laid out sequence-major, with columns
    /// `[queries | keys | values]`, each `d` wide and split into `heads`
    /// contiguous head slices. Returns `batch * seq` rows of width `d`.
    pub fn attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize) -> Var {
        let qv = self.value(qkv);
        assert_eq!(qv.nrows(), batch * seq, "attention: row count");
        assert_eq!(qv.ncols() % (3 * heads), 0, "attention: width");
        let d = qv.ncols() / 3;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((batch * seq, d));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let rows = b * seq..(b + 1) * seq;
            for h in 0..heads {
                let q = qv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                let k = qv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                let v = qv.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let mut p = q.dot(&k.t()) * scale;
                softmax_rows(&mut p);
                out.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh])
                    .assign(&p.dot(&v));
                probs.push(p);
            }
        }
        let rg = self.rg(qkv);
        self.push(
            out,
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Prepends one row of `prefix` (batch × d) to each of the `batch`
    /// consecutive row blocks of `body`.
    pub fn prepend_rows(&mut self, prefix: Var, body: Var, batch: usize) -> Var {
        let pv = self.value(prefix);
        let bv = self.value(body);
        assert_eq!(pv.nrows(), batch, "prepend_rows: prefix rows");
        assert_eq!(bv.nrows() % batch, 0, "prepend_rows: body rows");
        assert_eq!(pv.ncols(), bv.ncols(), "prepend_rows: width");
        let seq = bv.nrows() / batch;
        let mut value = Array2::zeros((batch * (seq + 1), bv.ncols()));
        for b in 0..batch {
            let base = b * (seq + 1);
            value.row_mut(base).assign(&pv.row(b));
            value
                .slice_mut(s![base + 1..base + 1 + seq, ..])
                .assign(&bv.slice(s![b * seq..(b + 1) * seq, ..]));
        }
        let rg = self.rg(prefix) || self.rg(body);
        self.push(value, Op::PrependRows { prefix, body, batch }, rg)
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let xv = self.value(x);
        let mut value = Array2::zeros((rows.len(), xv.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).assign(&xv.row(r));
        }
        let rg = self.rg(x);
        self.push(value, Op::GatherRows { x, rows }, rg)
    }

    /// Means of consecutive blocks of `group` rows.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.nrows() % group, 0, "group_mean: rows not a multiple");
        let n = xv.nrows() / group;
        let mut value = Array2::zeros((n, xv.ncols()));
        for (i, chunk) in xv.axis_chunks_iter(Axis(0), group).enumerate() {
            value
                .row_mut(i)
                .assign(&(chunk.sum_axis(Axis(0)) / group as f64));
        }
        let rg = self.rg(x);
        self.push(value, Op::GroupMean { x, group }, rg)
    }

    /// Graph mixing over joints: every consecutive block of `adj.nrows()`
    /// rows is left-multiplied by `adj`.
    pub fn joint_mix(&mut self, x: Var, adj: &Matrix) -> Var {
        let xv = self.value(x);
        let v = adj.nrows();
        assert_eq!(adj.ncols(), v, "joint_mix: adjacency must be square");
        assert_eq!(xv.nrows() % v, 0, "joint_mix: rows not a joint multiple");
        let mut value = Array2::zeros(xv.dim());
        for (src, mut dst) in xv
            .axis_chunks_iter(Axis(0), v)
            .zip(value.axis_chunks_iter_mut(Axis(0), v))
        {
            dst.assign(&adj.dot(&src));
        }
        let rg = self.rg(x);
        self.push(
            value,
            Op::JointMix {
                x,
                adj: adj.clone(),
            },
            rg,
        )
    }

    /// Temporal im2col for rows ordered (batch, frame, joint). Each output row
    /// `(b, t_out, j)` concatenates the input rows at frames
    /// `t_out * stride + k - kernel / 2` for `k` in `0..kernel`, zero outside.
    pub fn temporal_unfold(
        &mut self,
        x: Var,
        batch: usize,
        frames: usize,
        joints: usize,
        kernel: usize,
        stride: usize,
    ) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.nrows(), batch * frames * joints, "temporal_unfold: rows");
        let c = xv.ncols();
        let out_frames = frames.div_ceil(stride);
        let pad = kernel / 2;
        let mut value = Array2::zeros((batch * out_frames * joints, kernel * c));
        for b in 0..batch {
            for to in 0..out_frames {
                for k in 0..kernel {
                    let ti = (to * stride + k) as isize - pad as isize;
                    if ti < 0 || ti >= frames as isize {
                        continue;
                    }
                    let src = (b * frames + ti as usize) * joints;
                    let dst = (b * out_frames + to) * joints;
                    value
                        .slice_mut(s![dst..dst + joints, k * c..(k + 1) * c])
                        .assign(&xv.slice(s![src..src + joints, ..]));
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            value,
            Op::TemporalUnfold {
                x,
                batch,
                frames,
                joints,
                kernel,
                stride,
            },
            rg,
        )
    }

    /// Sum of all entries, as a 1 × 1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Mean squared error over all entries against a fixed target.
    pub fn mse(&mut self, pred: Var, target: Matrix) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.dim(), target.dim(), "mse: shape mismatch");
        let n = pv.len() as f64;
        let loss = Zip::from(pv)
            .and(&target)
            .fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t))
            / n;
        let rg = self.rg(pred);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::Mse { pred, target },
            rg,
        )
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), labels.len(), "cross entropy: label count");
        let mut probs = lv.clone();
        softmax_rows(&mut probs);
        let mut loss = 0.0;
        for (row, &y) in lv.outer_iter().zip(labels) {
            assert!(y < lv.ncols(), "cross entropy: label {y} out of range");
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        loss /= labels.len() as f64;
        let rg = self.rg(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Reverse sweep from a 1 × 1 node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .params
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        Gradients { grads, params }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, d: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &self.nodes[i].op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::Scale(a, f) => acc(*a, g * *f),
            Op::AddTiled(x, tile) => {
                acc(*x, g.clone());
                if self.rg(*tile) {
                    let k = self.value(*tile).nrows();
                    let mut dt = Array2::zeros((k, g.ncols()));
                    for chunk in g.axis_chunks_iter(Axis(0), k) {
                        dt += &chunk;
                    }
                    acc(*tile, dt);
                }
            }
            Op::MulConst(x, mask) => acc(*x, g * mask),
            Op::Gelu(x) => {
                let mut d = self.value(*x).mapv(|v| {
                    let u = GELU_C * (v + 0.044715 * v * v * v);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
                });
                d *= g;
                acc(*x, d);
            }
            Op::Silu(x) => {
                let mut d = self.value(*x).mapv(|v| {
                    let s = 1.0 / (1.0 + (-v).exp());
                    s * (1.0 + v * (1.0 - s))
                });
                d *= g;
                acc(*x, d);
            }
            Op::Relu(x) => {
                let mut d = self.value(*x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                d *= g;
                acc(*x, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain).row(0);
                if self.rg(*gain) {
                    let dg = (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*gain, dg);
                }
                if self.rg(*bias) {
                    acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*x) {
                    let d = g.ncols() as f64;
                    let mut dx = Array2::zeros(g.dim());
                    for (r, ((grow, hrow), mut out)) in g
                        .outer_iter()
                        .zip(xhat.outer_iter())
                        .zip(dx.outer_iter_mut())
                        .enumerate()
                    {
                        let dh = &grow * &gv;
                        let sum_dh = dh.sum();
                        let sum_dh_h = (&dh * &hrow).sum();
                        let k = rstd[r] / d;
                        Zip::from(&mut out)
                            .and(&dh)
                            .and(&hrow)
                            .for_each(|o, &a, &h| *o = k * (d * a - sum_dh - h * sum_dh_h));
                    }
                    acc(*x, dx);
                }
            }
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            } => {
                let qv = self.value(*qkv);
                let d = qv.ncols() / 3;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dqkv = Array2::zeros(qv.dim());
                for b in 0..*batch {
                    let rows = b * seq..(b + 1) * seq;
                    for h in 0..*heads {
                        let p = &probs[b * heads + h];
                        let q = qv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                        let k = qv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                        let v = qv.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                        let go = g.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                        let dv = p.t().dot(&go);
                        let dp = go.dot(&v.t());
                        let mut ds = p * &dp;
                        for (mut row, prow) in ds.outer_iter_mut().zip(p.outer_iter()) {
                            let dot = row.sum();
                            Zip::from(&mut row).and(&prow).for_each(|s, &pp| *s -= pp * dot);
                        }
                        ds *= scale;
                        let dq = ds.dot(&k);
                        let dk = ds.t().dot(&q);
                        let mut t = dqkv.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]);
                        t += &dq;
                        let mut t = dqkv.slice_mut(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                        t += &dk;
                        let mut t =
                            dqkv.slice_mut(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                        t += &dv;
                    }
                }
                acc(*qkv, dqkv);
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.rg(p) {
                        acc(p, g.slice(s![.., col..col + w]).to_owned());
                    }
                    col += w;
                }
            }
            Op::PrependRows {
                prefix,
                body,
                batch,
            } => {
                let seq = self.value(*body).nrows() / batch;
                let w = g.ncols();
                let mut dp = Array2::zeros((*batch, w));
                let mut db = Array2::zeros((batch * seq, w));
                for b in 0..*batch {
                    let base = b * (seq + 1);
                    dp.row_mut(b).assign(&g.row(base));
                    db.slice_mut(s![b * seq..(b + 1) * seq, ..])
                        .assign(&g.slice(s![base + 1..base + 1 + seq, ..]));
                }
                acc(*prefix, dp);
                acc(*body, db);
            }
            Op::GatherRows { x, rows } => {
                let mut dx = Array2::zeros(self.value(*x).dim());
                for (i, &r) in rows.iter().enumerate() {
                    let mut row = dx.row_mut(r);
                    row += &g.row(i);
                }
                acc(*x, dx);
            }
            Op::GroupMean { x, group } => {
                let mut dx = Array2::zeros(self.value(*x).dim());
                let inv = 1.0 / *group as f64;
                for (i, mut chunk) in dx.axis_chunks_iter_mut(Axis(0), *group).enumerate() {
                    let row = g.row(i).mapv(|v| v * inv);
                    for mut r in chunk.outer_iter_mut() {
                        r.assign(&row);
                    }
                }
                acc(*x, dx);
            }
            Op::JointMix { x, adj } => {
                let v = adj.nrows();
                let mut dx = Array2::zeros(g.dim());
                let at = adj.t();
                for (src, mut dst) in g
                    .axis_chunks_iter(Axis(0), v)
                    .zip(dx.axis_chunks_iter_mut(Axis(0), v))
                {
                    dst.assign(&at.dot(&src));
                }
                acc(*x, dx);
            }
            Op::TemporalUnfold {
                x,
                batch,
                frames,
                joints,
                kernel,
                stride,
            } => {
                let c = self.value(*x).ncols();
                let out_frames = frames.div_ceil(*stride);
                let pad = kernel / 2;
                let mut dx = Array2::zeros(self.value(*x).dim());
                for b in 0..*batch {
                    for to in 0..out_frames {
                        for k in 0..*kernel {
                            let ti = (to * stride + k) as isize - pad as isize;
                            if ti < 0 || ti >= *frames as isize {
                                continue;
                            }
                            let dst = (b * frames + ti as usize) * joints;
                            let src = (b * out_frames + to) * joints;
                            let mut target = dx.slice_mut(s![dst..dst + joints, ..]);
                            target += &g.slice(s![src..src + joints, k * c..(k + 1) * c]);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Sum(x) => {
                let dim = self.value(*x).dim();
                acc(*x, Array2::from_elem(dim, g[[0, 0]]));
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let k = 2.0 * g[[0, 0]] / pv.len() as f64;
                acc(*pred, (pv - target) * k);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = g[[0, 0]] / labels.len() as f64;
                let mut d = probs.clone();
                for (mut row, &y) in d.outer_iter_mut().zip(labels) {
                    row[y] -= 1.0;
                }
                d *= k;
                acc(*logits, d);
            }
        }
    }
}

/// Numerically stable in-place softmax over each row.
pub fn softmax_rows(m: &mut Matrix) {
    for mut row in m.outer_iter_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if any flowed.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients ordered by parameter id. Parameters that took no
    /// part in the graph are absent.
    pub fn params(&self) -> Vec<(ParamId, &Matrix)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
