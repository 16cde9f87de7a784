//! Multimodal aggregation over text and visual pseudo-tokens, and the
//! Transformer decoder that translates from the joint memory.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::captioner::teacher_inputs;
use crate::config::ModelConfig;
use crate::imagination::grid;
use crate::nn::{join, Embedding, FeedForward, Fwd, KeyValue, LayerNorm, Linear, MultiHeadAttention};
use crate::numerics::{ParameterStore, Var};
use crate::text_encoder::{TokenSeq, EOS};
use crate::{Error, Result};

const VISUAL: &str = "aggregation.visual";
/// Prefix of the visual projection, unused on the text-only path.
pub const VISUAL_PREFIX: &str = "aggregation.visual.";

/// Aggregated rows: `text_len` text positions followed by `visual_len` visual ones.
#[derive(Clone, Debug)]
pub struct JointMemory {
    pub rows: Var,
    pub text_len: usize,
    pub visual_len: usize,
    /// Per-head `(L+M) × L` attention weights.
    pub weights: Vec<Var>,
}

/// One encoder-style layer whose queries span text and visual rows while keys
/// and values come from the text rows only.
#[derive(Clone, Debug)]
pub struct Aggregation {
    visual: Linear,
    pub attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
    c1: usize,
    d: usize,
    hidden: usize,
}

impl Aggregation {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            visual: Linear::new(VISUAL, true),
            attn: MultiHeadAttention::new("aggregation.attn", cfg.heads),
            ln1: LayerNorm::new("aggregation.ln1"),
            ffn: FeedForward::new("aggregation.ffn"),
            ln2: LayerNorm::new("aggregation.ln2"),
            c1: cfg.c1,
            d: cfg.d_model,
            hidden: cfg.ffn,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.visual.init(store, self.c1, self.d, rng)?;
        self.attn.init(store, self.d, rng)?;
        self.ln1.init(store, self.d)?;
        self.ffn.init(store, self.d, self.hidden, rng)?;
        self.ln2.init(store, self.d)
    }

    /// Project f1 columns (`[c1, r, r]`) to `M × d` pseudo-token rows.
    pub fn visual_rows(&self, f: &mut Fwd, f1: Var) -> Result<Var> {
        let cols = grid(f, f1)?;
        let rows = f.g.transpose(cols)?;
        self.visual.forward(f, rows)
    }

    /// `x̃ = [w; visual rows]`, `c = Att(Q = x̃, K = V = w)`, then residual,
    /// layer norm and feed-forward. `f1 = None` gives the text-only layer.
    pub fn aggregate(&self, f: &mut Fwd, w: Var, f1: Option<Var>) -> Result<JointMemory> {
        let text_len = f.g.shape(w)[0];
        if text_len == 0 {
            return Err(Error::EmptySentence);
        }
        let (x, visual_len) = match f1 {
            Some(f1) => {
                let v = self.visual_rows(f, f1)?;
                let m = f.g.shape(v)[0];
                (f.g.concat_rows(&[w, v])?, m)
            }
            None => (w, 0),
        };
        self.aggregate_rows(f, w, x, text_len, visual_len)
    }

    /// Aggregate with already-projected query rows `x` (text rows first).
    pub fn aggregate_rows(&self, f: &mut Fwd, w: Var, x: Var, text_len: usize, visual_len: usize) -> Result<JointMemory> {
        let att = self.attn.forward(f, x, w, None)?;
        let r = f.g.add(att.out, x)?;
        let h = self.ln1.forward(f, r)?;
        let ff = self.ffn.forward(f, h)?;
        let r = f.g.add(ff, h)?;
        let rows = self.ln2.forward(f, r)?;
        Ok(JointMemory { rows, text_len, visual_len, weights: att.weights })
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    cross: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
    ln3: LayerNorm,
}

/// Causal `t × t` keep-mask.
pub fn causal_mask(t: usize) -> Vec<bool> {
    let mut m = vec![false; t * t];
    for i in 0..t {
        for j in 0..=i {
            m[i * t + j] = true;
        }
    }
    m
}

/// Decoder logits plus the per-layer, per-head cross-attention weights.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub logits: Var,
    pub cross_weights: Vec<Vec<Var>>,
}

/// Post-LN Transformer decoder: causal self-attention, cross-attention over
/// the joint memory, feed-forward.
#[derive(Clone, Debug)]
pub struct Decoder {
    embed: Embedding,
    layers: Vec<DecoderLayer>,
    out: Linear,
    d: usize,
    hidden: usize,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let layers = (0..cfg.dec_layers)
            .map(|i| {
                let p = format!("decoder.layer{i}");
                DecoderLayer {
                    self_attn: MultiHeadAttention::new(&join(&p, "self_attn"), cfg.heads),
                    ln1: LayerNorm::new(&join(&p, "ln1")),
                    cross: MultiHeadAttention::new(&join(&p, "cross"), cfg.heads),
                    ln2: LayerNorm::new(&join(&p, "ln2")),
                    ffn: FeedForward::new(&join(&p, "ffn")),
                    ln3: LayerNorm::new(&join(&p, "ln3")),
                }
            })
            .collect();
        Self {
            embed: Embedding::new("decoder.embed", cfg.positional_encoding),
            layers,
            out: Linear::new("decoder.out", true),
            d: cfg.d_model,
            hidden: cfg.ffn,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, vocab: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.embed.init(store, vocab, self.d, rng)?;
        for l in &self.layers {
            l.self_attn.init(store, self.d, rng)?;
            l.ln1.init(store, self.d)?;
            l.cross.init(store, self.d, rng)?;
            l.ln2.init(store, self.d)?;
            l.ffn.init(store, self.d, self.hidden, rng)?;
            l.ln3.init(store, self.d)?;
        }
        self.out.init(store, self.d, vocab, rng)
    }

    /// Cross-attention keys/values for every layer, reusable across decoding steps.
    pub fn memory_kv(&self, f: &mut Fwd, memory: &JointMemory) -> Result<Vec<KeyValue>> {
        self.layers.iter().map(|l| l.cross.project_kv(f, memory.rows)).collect()
    }

    /// Logits for every position of `inputs` (which start with BOS).
    pub fn decode(&self, f: &mut Fwd, kv: &[KeyValue], inputs: &[usize]) -> Result<Decoded> {
        let t = inputs.len();
        let causal = causal_mask(t);
        let mut h = self.embed.forward(f, inputs)?;
        let mut cross_weights = Vec::with_capacity(self.layers.len());
        for (l, kv) in self.layers.iter().zip(kv) {
            let a = l.self_attn.forward(f, h, h, Some(&causal))?;
            let a = f.dropout(a.out)?;
            let r = f.g.add(a, h)?;
            let h1 = l.ln1.forward(f, r)?;
            let c = l.cross.attend(f, h1, *kv, None)?;
            cross_weights.push(c.weights);
            let c = f.dropout(c.out)?;
            let r = f.g.add(c, h1)?;
            let h2 = l.ln2.forward(f, r)?;
            let ff = l.ffn.forward(f, h2)?;
            let ff = f.dropout(ff)?;
            let r = f.g.add(ff, h2)?;
            h = l.ln3.forward(f, r)?;
        }
        Ok(Decoded { logits: self.out.forward(f, h)?, cross_weights })
    }

    /// Next-token logits after `prefix` (`1 × V`).
    pub fn decode_step(&self, f: &mut Fwd, kv: &[KeyValue], prefix: &[usize]) -> Result<Var> {
        let d = self.decode(f, kv, prefix)?;
        Ok(f.g.slice_rows(d.logits, prefix.len() - 1, 1)?)
    }

    /// Teacher-forced `−Σ_t log p_t(T_t)` over the real target tokens and a
    /// final EOS; returns `(loss, number of target positions)`.
    pub fn translation_loss(&self, f: &mut Fwd, memory: &JointMemory, tgt: &TokenSeq, smoothing: f64) -> Result<(Var, usize)> {
        let mut targets = tgt.real_ids();
        targets.push(EOS);
        let inputs = teacher_inputs(&targets);
        let kv = self.memory_kv(f, memory)?;
        let d = self.decode(f, &kv, &inputs)?;
        let loss = f.g.cross_entropy_with_logits(d.logits, &targets, &vec![1.0; targets.len()], smoothing)?;
        Ok((loss, targets.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_mask_is_lower_triangular() {
        assert_eq!(causal_mask(2), [true, false, true, true]);
    }
}
