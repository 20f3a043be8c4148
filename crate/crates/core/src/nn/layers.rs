use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tensor::Tensor;

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let w = store.add_uniform(format!("{name}.w"), input, output, input, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, output, input, rng);
        Self { w, b, input, output }
    }

    /// All-zero weights and bias: the layer starts out as the zero map.
    pub fn zeros(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(input, output));
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, output));
        Self { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists input, hidden and output sizes. With `zero_last` the
    /// final layer starts at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.{i}");
                if zero_last && i == n - 1 {
                    Linear::zeros(store, &lname, widths[i], widths[i + 1])
                } else {
                    Linear::new(store, &lname, widths[i], widths[i + 1], rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x)?;
            if i + 1 < self.layers.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(1, width, 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, width));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.layer_norm_rows(x);
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        let scaled = g.mul_row(n, gamma)?;
        g.add_row(scaled, beta)
    }
}

/// Scaled dot-product attention split over `heads` slices of the width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        zero_output: bool,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && width % heads == 0, "width {width} not divisible by {heads} heads");
        let q = Linear::new(store, &format!("{name}.q"), width, width, rng);
        let k = Linear::new(store, &format!("{name}.k"), width, width, rng);
        let v = Linear::new(store, &format!("{name}.v"), width, width, rng);
        let o = if zero_output {
            Linear::zeros(store, &format!("{name}.o"), width, width)
        } else {
            Linear::new(store, &format!("{name}.o"), width, width, rng)
        };
        Self { q, k, v, o, heads, width }
    }

    /// Queries from `query` (`nq x width`) attend over `context`
    /// (`nk x width`). `mask` is an additive `nq x nk` mask.
    pub fn attend(&self, g: &mut Graph, query: Var, context: Var, mask: Option<&Tensor>) -> Result<Var> {
        let q = self.q.forward(g, query)?;
        let k = self.k.forward(g, context)?;
        let v = self.v.forward(g, context)?;
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, h * dh, dh)?, g.slice_cols(k, h * dh, dh)?, g.slice_cols(v, h * dh, dh)?)
            };
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores, mask)?;
            outs.push(g.matmul(weights, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.o.forward(g, joined)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<&Tensor>) -> Result<Var> {
        self.attend(g, x, x, mask)
    }
}

/// Pre-norm transformer encoder layer without positional information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub dropout: f64,
}

impl EncoderLayer {
    /// `zero_residual` zero-initializes both residual branch outputs so the
    /// layer starts as the identity map.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        ff_width: usize,
        dropout: f64,
        zero_residual: bool,
        rng: &mut R,
    ) -> Self {
        let ln1 = LayerNorm::new(store, &format!("{name}.ln1"), width);
        let attn = MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, zero_residual, rng);
        let ln2 = LayerNorm::new(store, &format!("{name}.ln2"), width);
        let ff1 = Linear::new(store, &format!("{name}.ff1"), width, ff_width, rng);
        let ff2 = if zero_residual {
            Linear::zeros(store, &format!("{name}.ff2"), ff_width, width)
        } else {
            Linear::new(store, &format!("{name}.ff2"), ff_width, width, rng)
        };
        Self { ln1, attn, ln2, ff1, ff2, dropout }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<&Tensor>) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let a = self.attn.forward(g, h, mask)?;
        let a = g.dropout(a, self.dropout);
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let f = self.ff1.forward(g, h)?;
        let f = g.relu(f);
        let f = self.ff2.forward(g, f)?;
        let f = g.dropout(f, self.dropout);
        g.add(x, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: EncoderConfig,
        zero_residual: bool,
        rng: &mut R,
    ) -> Self {
        let layers = (0..cfg.layers)
            .map(|i| {
                EncoderLayer::new(
                    store,
                    &format!("{name}.{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.ff_width,
                    cfg.dropout,
                    zero_residual,
                    rng,
                )
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var, mask: Option<&Tensor>) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(g, x, mask)?;
        }
        Ok(x)
    }
}

/// LSTM cell with gates packed as `[input, forget, cell, output]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = store.add_uniform(format!("{name}.w_ih"), input, 4 * hidden, hidden, rng);
        let w_hh = store.add_uniform(format!("{name}.w_hh"), hidden, 4 * hidden, hidden, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, 4 * hidden, hidden, rng);
        Self { w_ih, w_hh, b, input, hidden }
    }

    /// Runs a batch of equal-length sequences; `steps[t]` is `batch x input`.
    /// Returns the final hidden state, `batch x hidden`.
    pub fn run(&self, g: &mut Graph, steps: &[Var]) -> Result<Var> {
        let batch = steps.first().map_or(0, |&s| g.shape(s).0);
        let (w_ih, w_hh, b) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.b));
        let hd = self.hidden;
        let mut h = g.constant(batch, hd, 0.0);
        let mut c = g.constant(batch, hd, 0.0);
        for (t, &x) in steps.iter().enumerate() {
            let zx = g.matmul(x, w_ih)?;
            let z = if t == 0 {
                zx
            } else {
                let zh = g.matmul(h, w_hh)?;
                g.add(zx, zh)?
            };
            let z = g.add_row(z, b)?;
            let i = g.slice_cols(z, 0, hd)?;
            let i = g.sigmoid(i);
            let f = g.slice_cols(z, hd, hd)?;
            let f = g.sigmoid(f);
            let cand = g.slice_cols(z, 2 * hd, hd)?;
            let cand = g.tanh(cand);
            let o = g.slice_cols(z, 3 * hd, hd)?;
            let o = g.sigmoid(o);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c);
            h = g.mul(o, tc)?;
        }
        Ok(h)
    }
}

/// Forward and backward LSTMs; a sequence is summarized by both final
/// hidden states side by side. Empty sequences map to zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output(&self) -> usize {
        2 * self.fwd.hidden
    }

    /// Encodes each `len x input` sequence into one `1 x 2·hidden` row of the
    /// result. Sequences of equal length are batched together.
    pub fn forward_batch(&self, g: &mut Graph, seqs: &[Tensor]) -> Result<Var> {
        let width = self.fwd.input;
        if let Some(bad) = seqs.iter().find(|s| !s.is_empty() && s.cols() != width) {
            return Err(Error::shape("bilstm", format!("feature width {} != {width}", bad.cols())));
        }
        let mut lengths: Vec<usize> = seqs.iter().map(|s| if s.is_empty() { 0 } else { s.rows() }).collect();
        lengths.sort_unstable();
        lengths.dedup();
        let mut blocks = Vec::new();
        let mut order = Vec::with_capacity(seqs.len());
        for &len in &lengths {
            let members: Vec<usize> =
                (0..seqs.len()).filter(|&i| if seqs[i].is_empty() { 0 } else { seqs[i].rows() } == len).collect();
            let block = if len == 0 {
                g.constant(members.len(), self.output(), 0.0)
            } else {
                let steps: Vec<Var> = (0..len)
                    .map(|t| {
                        let rows: Vec<f64> = members.iter().flat_map(|&i| seqs[i].row_slice(t).to_vec()).collect();
                        g.input(Tensor::matrix(members.len(), width, rows).expect("sized"))
                    })
                    .collect();
                let hf = self.fwd.run(g, &steps)?;
                let rev: Vec<Var> = steps.iter().rev().copied().collect();
                let hb = self.bwd.run(g, &rev)?;
                g.concat_cols(&[hf, hb])?
            };
            blocks.push(block);
            order.extend(members);
        }
        if seqs.is_empty() {
            return Ok(g.constant(0, self.output(), 0.0));
        }
        let stacked = if blocks.len() == 1 { blocks[0] } else { g.concat_rows(&blocks)? };
        // `order[k]` is the sequence held in stacked row k; invert it.
        let mut position = vec![0; seqs.len()];
        order.iter().enumerate().for_each(|(row, &i)| position[i] = row);
        if position.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(stacked);
        }
        g.gather_rows(stacked, &position)
    }
}
