//! Image captioner: a small conv encoder and a GRU decoder with additive
//! attention over grid columns. Pretrained on real images, then frozen and
//! reused as the consistency loss on imagined features.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::config::{CaptionerConfig, ModelConfig};
use crate::imagination::grid;
use crate::nn::{Conv2d, Embedding, Fwd, Linear};
use crate::numerics::{Adam, AdamConfig, GradPolicy, Graph, ParameterStore, RngStreams, Stream, Tensor, Var};
use crate::text_encoder::BOS;
use crate::{Error, Result};

pub const PREFIX: &str = "captioner.";

/// Adam settings used for captioner pretraining.
pub const ADAM: AdamConfig = AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 };

/// A real image with its source caption (content token ids only).
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionExample {
    pub image: Tensor,
    pub src: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Captioner {
    conv1: Conv2d,
    conv2: Conv2d,
    embed: Embedding,
    att_k: Linear,
    att_q: Linear,
    att_v: Linear,
    gru_x: Linear,
    gru_h: Linear,
    init_h: Linear,
    out: Linear,
    c1: usize,
    e: usize,
    h: usize,
    a: usize,
}

impl Captioner {
    pub fn new(cfg: &ModelConfig) -> Self {
        let s = cfg.image_size / cfg.f1_grid();
        let (k, p) = if s == 1 { (3, 1) } else { (2 * s, s / 2) };
        Self {
            conv1: Conv2d::new("captioner.enc.conv1", 3, 16, 3, 1, 1, true),
            conv2: Conv2d::new("captioner.enc.conv2", 16, cfg.c1, k, s, p, true),
            embed: Embedding::new("captioner.embed", false),
            att_k: Linear::new("captioner.att.k", false),
            att_q: Linear::new("captioner.att.q", true),
            att_v: Linear::new("captioner.att.v", false),
            gru_x: Linear::new("captioner.gru.x", true),
            gru_h: Linear::new("captioner.gru.h", false),
            init_h: Linear::new("captioner.init", true),
            out: Linear::new("captioner.out", true),
            c1: cfg.c1,
            e: cfg.cap_embed,
            h: cfg.cap_hidden,
            a: cfg.cap_attn,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, vocab: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.conv1.init(store, rng)?;
        self.conv2.init(store, rng)?;
        self.embed.init(store, vocab, self.e, rng)?;
        self.att_k.init(store, self.c1, self.a, rng)?;
        self.att_q.init(store, self.h, self.a, rng)?;
        self.att_v.init(store, self.a, 1, rng)?;
        self.gru_x.init(store, self.e + self.c1, 3 * self.h, rng)?;
        self.gru_h.init(store, self.h, 3 * self.h, rng)?;
        self.init_h.init(store, self.c1, self.h, rng)?;
        self.out.init(store, self.h + self.c1, vocab, rng)
    }

    /// Real image `[3, R, R]` → feature grid `[c1, r, r]` matching f1.
    pub fn encode_image(&self, f: &mut Fwd, image: Var) -> Result<Var> {
        let x = self.conv1.forward(f, image)?;
        let x = f.g.relu(x)?;
        let x = self.conv2.forward(f, x)?;
        Ok(f.g.tanh(x)?)
    }

    /// Mean over grid columns, `1 × c1`.
    pub fn pooled(&self, f: &mut Fwd, feature: Var) -> Result<Var> {
        let cols = grid(f, feature)?;
        let m = f.g.mean_cols(cols)?;
        Ok(f.g.transpose(m)?)
    }

    /// Teacher-forced logits, one row per entry of `inputs`.
    pub fn logits(&self, f: &mut Fwd, feature: Var, inputs: &[usize]) -> Result<Var> {
        if f.g.shape(feature)[0] != self.c1 {
            return Err(crate::numerics::NumericsError::ShapeMismatch {
                op: "caption_loss",
                lhs: f.g.shape(feature).to_vec(),
                rhs: vec![self.c1],
            }
            .into());
        }
        let cols = grid(f, feature)?;
        let v = f.g.transpose(cols)?;
        let keys = self.att_k.forward(f, v)?;
        let pooled = self.pooled(f, feature)?;
        let h0 = self.init_h.forward(f, pooled)?;
        let mut h = f.g.tanh(h0)?;
        let emb = self.embed.forward(f, inputs)?;
        let mut rows = Vec::with_capacity(inputs.len());
        for t in 0..inputs.len() {
            let q = self.att_q.forward(f, h)?;
            let s = f.g.add_row(keys, q)?;
            let s = f.g.tanh(s)?;
            let s = self.att_v.forward(f, s)?;
            let s = f.g.transpose(s)?;
            let alpha = f.g.softmax(s)?;
            let ctx = f.g.matmul(alpha, v)?;
            let x_t = f.g.slice_rows(emb, t, 1)?;
            let x = f.g.concat_cols(&[x_t, ctx])?;
            h = self.gru(f, x, h)?;
            let o = f.g.concat_cols(&[h, ctx])?;
            rows.push(self.out.forward(f, o)?);
        }
        Ok(f.g.concat_rows(&rows)?)
    }

    /// `z = σ(.)`, `r = σ(.)`, `n = tanh(x W_n + r ⊙ (h U_n) + b_n)`, `h' = n + z ⊙ (h − n)`.
    fn gru(&self, f: &mut Fwd, x: Var, h: Var) -> Result<Var> {
        let gx = self.gru_x.forward(f, x)?;
        let gh = self.gru_h.forward(f, h)?;
        let n = self.h;
        let zr_x = f.g.slice_cols(gx, 0, 2 * n)?;
        let zr_h = f.g.slice_cols(gh, 0, 2 * n)?;
        let zr = f.g.add(zr_x, zr_h)?;
        let zr = f.g.sigmoid(zr)?;
        let z = f.g.slice_cols(zr, 0, n)?;
        let r = f.g.slice_cols(zr, n, n)?;
        let nx = f.g.slice_cols(gx, 2 * n, n)?;
        let nh = f.g.slice_cols(gh, 2 * n, n)?;
        let rn = f.g.mul(r, nh)?;
        let cand = f.g.add(nx, rn)?;
        let cand = f.g.tanh(cand)?;
        let diff = f.g.sub(h, cand)?;
        let zd = f.g.mul(z, diff)?;
        Ok(f.g.add(cand, zd)?)
    }

    /// `−Σ_t log p_t(src_t)` given a feature grid; inputs are `BOS, src[..L-1]`.
    pub fn caption_loss(&self, f: &mut Fwd, feature: Var, src: &[usize]) -> Result<Var> {
        if src.is_empty() {
            return Err(Error::EmptySentence);
        }
        let inputs = teacher_inputs(src);
        let logits = self.logits(f, feature, &inputs)?;
        Ok(f.g.cross_entropy_with_logits(logits, src, &vec![1.0; src.len()], 0.0)?)
    }
}

/// `BOS` followed by all but the last token.
pub fn teacher_inputs(tgt: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(tgt.len());
    v.push(BOS);
    v.extend_from_slice(&tgt[..tgt.len().saturating_sub(1)]);
    v
}

/// Row-wise argmax of a `T × V` tensor.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let (m, n) = t.dims2();
    (0..m)
        .map(|i| {
            let row = &t.data()[i * n..(i + 1) * n];
            let mut best = 0;
            for j in 1..n {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Summed loss and correct/total token counts over a set of examples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CaptionStats {
    pub loss: f64,
    pub correct: usize,
    pub tokens: usize,
}

impl CaptionStats {
    pub fn mean_loss(&self) -> f64 {
        self.loss / self.tokens.max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.tokens.max(1) as f64
    }
}

/// Teacher-forced loss and token accuracy on real images.
pub fn evaluate(model: &Captioner, store: &ParameterStore, data: &[CaptionExample]) -> Result<CaptionStats> {
    let mut stats = CaptionStats::default();
    for ex in data {
        let mut g = Graph::new();
        let mut f = Fwd::new(&mut g, store, &GradPolicy::None);
        let img = f.g.constant(ex.image.clone());
        let feat = model.encode_image(&mut f, img)?;
        let logits = model.logits(&mut f, feat, &teacher_inputs(&ex.src))?;
        let loss = f.g.cross_entropy_with_logits(logits, &ex.src, &vec![1.0; ex.src.len()], 0.0)?;
        stats.loss += g.scalar(loss);
        stats.correct += argmax_rows(g.value(logits)).iter().zip(&ex.src).filter(|(a, b)| a == b).count();
        stats.tokens += ex.src.len();
    }
    Ok(stats)
}

/// One Adam step on a batch; returns the per-token mean loss.
pub fn pretrain_step(
    model: &Captioner,
    store: &mut ParameterStore,
    adam: &mut Adam,
    batch: &[&CaptionExample],
    lr: f64,
) -> Result<f64> {
    let policy = GradPolicy::All;
    let mut g = Graph::new();
    let mut f = Fwd::new(&mut g, store, &policy);
    let mut losses = Vec::with_capacity(batch.len());
    let mut tokens = 0;
    for ex in batch {
        let img = f.g.constant(ex.image.clone());
        let feat = model.encode_image(&mut f, img)?;
        losses.push(model.caption_loss(&mut f, feat, &ex.src)?);
        tokens += ex.src.len();
    }
    let total = if losses.len() == 1 { losses[0] } else { f.g.concat_rows(&losses)? };
    let total = f.g.sum(total)?;
    let mean = f.g.scale(total, 1.0 / tokens.max(1) as f64)?;
    let value = g.scalar(mean);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss("l_caption"));
    }
    let grads = g.backward(mean)?;
    adam.step(store, grads.params(), lr)?;
    Ok(value)
}

/// Per-epoch record of captioner pretraining.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub dev_loss: f64,
}

/// Train until dev loss stops improving for `patience_epochs`; the returned
/// store holds the best-dev parameters, all marked frozen.
pub fn pretrain_captioner(
    model: &Captioner,
    mut store: ParameterStore,
    train: &[CaptionExample],
    dev: &[CaptionExample],
    cfg: &CaptionerConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ParameterStore, Vec<EpochRecord>)> {
    if train.is_empty() {
        return Err(Error::Empty("captioner corpus"));
    }
    let streams = RngStreams::new(seed);
    let mut adam = Adam::new(ADAM, GradPolicy::All);
    let mut best: Option<(f64, ParameterStore)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut streams.substream(Stream::Data, epoch));
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&CaptionExample> = chunk.iter().map(|&i| &train[i]).collect();
            sum += pretrain_step(model, &mut store, &mut adam, &batch, cfg.lr)?;
            batches += 1;
        }
        let dev_loss = if dev.is_empty() { sum / batches as f64 } else { evaluate(model, &store, dev)?.mean_loss() };
        let rec = EpochRecord { epoch, train_loss: sum / batches as f64, dev_loss };
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().is_none_or(|(b, _)| dev_loss < *b) {
            best = Some((dev_loss, store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience_epochs {
                break;
            }
        }
    }
    let mut out = best.map(|(_, s)| s).unwrap_or(store);
    out.set_trainable_prefix(PREFIX, false);
    Ok((out, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn teacher_inputs_shift() {
        assert_eq!(teacher_inputs(&[7, 8, 9]), [BOS, 7, 8]);
    }

    #[test]
    fn image_grid_matches_f1() {
        let cfg = RunConfig::desk().model;
        let m = Captioner::new(&cfg);
        let mut store = ParameterStore::new();
        m.init(&mut store, 20, &mut RngStreams::new(1).stream(Stream::Init)).unwrap();
        let mut g = Graph::new();
        let mut f = Fwd::new(&mut g, &store, &GradPolicy::None);
        let img = f.g.constant(Tensor::zeros(&[3, 32, 32]));
        let feat = m.encode_image(&mut f, img).unwrap();
        assert_eq!(g.shape(feat), [16, 16, 16]);
    }
}
