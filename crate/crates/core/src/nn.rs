//! Layers shared by the encoder, aggregation and decoder.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{GradPolicy, Graph, NumericsError, ParameterStore, Tensor, Var};
use crate::Result;

/// A forward pass in progress: the tape, the parameters it reads, and which of
/// them receive gradients.
pub struct Fwd<'g, 's> {
    pub g: &'g mut Graph,
    pub store: &'s ParameterStore,
    pub policy: &'s GradPolicy,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'g, 's> Fwd<'g, 's> {
    pub fn new(g: &'g mut Graph, store: &'s ParameterStore, policy: &'s GradPolicy) -> Self {
        Self { g, store, policy, dropout: None }
    }

    /// Enable dropout with probability `p` drawn from `rng`.
    pub fn with_dropout(mut self, p: f64, rng: ChaCha8Rng) -> Self {
        if p > 0.0 {
            self.dropout = Some((p, rng));
        }
        self
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        Ok(self.g.load_param(self.store, name, self.policy)?)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((p, rng)) = self.dropout.as_mut() else { return Ok(x) };
        let keep = 1.0 - *p;
        let shape = self.g.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let m = self.g.constant(Tensor::new(&shape, mask)?);
        Ok(self.g.mul(x, m)?)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

fn init_std(fan_in: usize) -> f64 {
    1.0 / libm::sqrt(fan_in as f64)
}

/// `x · W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: String,
    b: Option<String>,
}

impl Linear {
    pub fn new(prefix: &str, bias: bool) -> Self {
        Self { w: join(prefix, "w"), b: bias.then(|| join(prefix, "b")) }
    }

    pub fn init(&self, store: &mut ParameterStore, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        store.insert_normal(&self.w, &[fan_in, fan_out], init_std(fan_in), rng)?;
        if let Some(b) = &self.b {
            store.insert_filled(b, &[fan_out], 0.0)?;
        }
        Ok(())
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let w = f.p(&self.w)?;
        let y = f.g.matmul(x, w)?;
        match &self.b {
            Some(b) => {
                let b = f.p(b)?;
                Ok(f.g.add_row(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalisation with a learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
}

impl LayerNorm {
    pub fn new(prefix: &str) -> Self {
        Self { gamma: join(prefix, "gamma"), beta: join(prefix, "beta") }
    }

    pub fn init(&self, store: &mut ParameterStore, d: usize) -> Result<()> {
        store.insert_filled(&self.gamma, &[d], 1.0)?;
        store.insert_filled(&self.beta, &[d], 0.0)?;
        Ok(())
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let n = f.g.layer_norm(x)?;
        let gamma = f.p(&self.gamma)?;
        let beta = f.p(&self.beta)?;
        let y = f.g.mul_row(n, gamma)?;
        Ok(f.g.add_row(y, beta)?)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    l1: Linear,
    l2: Linear,
}

impl FeedForward {
    pub fn new(prefix: &str) -> Self {
        Self { l1: Linear::new(&join(prefix, "l1"), true), l2: Linear::new(&join(prefix, "l2"), true) }
    }

    pub fn init(&self, store: &mut ParameterStore, d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.l1.init(store, d, hidden, rng)?;
        self.l2.init(store, hidden, d, rng)
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let h = self.l1.forward(f, x)?;
        let h = f.g.relu(h)?;
        self.l2.forward(f, h)
    }
}

/// Projected keys and values, reusable across queries.
#[derive(Clone, Copy, Debug)]
pub struct KeyValue {
    pub k: Var,
    pub v: Var,
}

/// Output of an attention call together with the per-head weights.
#[derive(Clone, Debug)]
pub struct Attended {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention. Q/K/V projections carry no bias
/// so each head computes `softmax((x_i W^Q)(x_j W^K)ᵀ / √d_h) · x_j W^V`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    wq: String,
    wk: String,
    wv: String,
    out: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, heads: usize) -> Self {
        Self {
            wq: join(prefix, "wq"),
            wk: join(prefix, "wk"),
            wv: join(prefix, "wv"),
            out: Linear::new(&join(prefix, "wo"), true),
            heads,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, d: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        for name in [&self.wq, &self.wk, &self.wv] {
            store.insert_normal(name, &[d, d], init_std(d), rng)?;
        }
        self.out.init(store, d, d, rng)
    }

    pub fn project_kv(&self, f: &mut Fwd, kv_in: Var) -> Result<KeyValue> {
        let wk = f.p(&self.wk)?;
        let wv = f.p(&self.wv)?;
        Ok(KeyValue { k: f.g.matmul(kv_in, wk)?, v: f.g.matmul(kv_in, wv)? })
    }

    /// `keep` is a row-major `queries × keys` mask (true = attend).
    pub fn attend(&self, f: &mut Fwd, q_in: Var, kv: KeyValue, keep: Option<&[bool]>) -> Result<Attended> {
        let wq = f.p(&self.wq)?;
        let q = f.g.matmul(q_in, wq)?;
        let d = f.g.shape(q)[1];
        if d % self.heads != 0 {
            return Err(NumericsError::ShapeMismatch { op: "attention", lhs: vec![d], rhs: vec![self.heads] }.into());
        }
        let dh = d / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, kv.k, kv.v)
            } else {
                (
                    f.g.slice_cols(q, h * dh, dh)?,
                    f.g.slice_cols(kv.k, h * dh, dh)?,
                    f.g.slice_cols(kv.v, h * dh, dh)?,
                )
            };
            let scores = f.g.matmul_nt(qh, kh)?;
            let scores = f.g.scale(scores, scale)?;
            let a = f.g.softmax_masked(scores, keep)?;
            outs.push(f.g.matmul(a, vh)?);
            weights.push(a);
        }
        let cat = if outs.len() == 1 { outs[0] } else { f.g.concat_cols(&outs)? };
        Ok(Attended { out: self.out.forward(f, cat)?, weights })
    }

    pub fn forward(&self, f: &mut Fwd, q_in: Var, kv_in: Var, keep: Option<&[bool]>) -> Result<Attended> {
        let kv = self.project_kv(f, kv_in)?;
        self.attend(f, q_in, kv, keep)
    }
}

/// Sinusoidal position table, `len × d`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / libm::pow(10_000.0, exponent);
            data[pos * d + i] = if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
        }
    }
    Tensor::new(&[len, d], data).expect("positive dims")
}

/// Token embedding plus optional positional encoding.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: String,
    positional: bool,
}

impl Embedding {
    pub fn new(name: &str, positional: bool) -> Self {
        Self { table: String::from(name), positional }
    }

    pub fn init(&self, store: &mut ParameterStore, vocab: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        store.insert_normal(&self.table, &[vocab, d], 1.0, rng)?;
        Ok(())
    }

    pub fn forward(&self, f: &mut Fwd, ids: &[usize]) -> Result<Var> {
        let table = f.p(&self.table)?;
        let x = f.g.embedding_lookup(table, ids)?;
        let x = if self.positional {
            let d = f.g.shape(x)[1];
            let pe = f.g.constant(sinusoidal_positions(ids.len(), d));
            f.g.add(x, pe)?
        } else {
            x
        };
        f.dropout(x)
    }
}

/// 2-D convolution over a `[cin, h, w]` map with an optional per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    w: String,
    b: Option<String>,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    pub fn new(prefix: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Self {
        Self { w: join(prefix, "w"), b: bias.then(|| join(prefix, "b")), cin, cout, k, stride, pad }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        store.insert_normal(&self.w, &[self.cout, self.cin, self.k, self.k], init_std(self.cin * self.k * self.k), rng)?;
        if let Some(b) = &self.b {
            store.insert_filled(b, &[self.cout], 0.0)?;
        }
        Ok(())
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let w = f.p(&self.w)?;
        let y = f.g.conv2d(x, w, self.stride, self.pad)?;
        match &self.b {
            Some(b) => {
                let b = f.p(b)?;
                Ok(f.g.add_col(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// Transposed convolution without bias, `[cin, h, w] → [cout, H, W]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    w: String,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvTranspose2d {
    pub fn new(prefix: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self { w: join(prefix, "w"), cin, cout, k, stride, pad }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let fan_in = (self.cin * self.k * self.k / (self.stride * self.stride)).max(1);
        store.insert_normal(&self.w, &[self.cin, self.cout, self.k, self.k], init_std(fan_in), rng)?;
        Ok(())
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let w = f.p(&self.w)?;
        Ok(f.g.transpose_conv2d(x, w, self.stride, self.pad)?)
    }
}

/// Per-channel instance normalisation of a `[c, h, w]` map.
pub fn instance_norm(f: &mut Fwd, x: Var) -> Result<Var> {
    Ok(f.g.layer_norm(x)?)
}
