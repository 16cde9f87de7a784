//! Source vocabulary, token sequences, and the Transformer text encoder.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::nn::{join, Embedding, FeedForward, Fwd, LayerNorm, MultiHeadAttention};
use crate::numerics::{Graph, ParameterStore, Var};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SENT: usize = 3;
pub const MASK: usize = 4;

/// Spellings of the reserved ids, in id order.
pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sent>", "[M]"];

/// Ordered token list; line `i` of the on-disk form is the token with id `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` (duplicates of earlier entries are skipped).
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self { tokens: Vec::new(), index: BTreeMap::new() };
        for t in RESERVED.iter().copied().chain(words) {
            if !v.index.contains_key(t) {
                v.index.insert(t.to_string(), v.tokens.len());
                v.tokens.push(t.to_string());
            }
        }
        v
    }

    /// Parse the one-token-per-line form.
    pub fn from_lines(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Invalid("vocabulary must start with the five reserved tokens".to_string()));
        }
        let v = Self::new(tokens[RESERVED.len()..].iter().copied());
        if v.len() != tokens.len() {
            return Err(Error::Invalid("vocabulary contains duplicate tokens".to_string()));
        }
        Ok(v)
    }

    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> Result<usize> {
        self.index.get(token).copied().ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token_of(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::UnknownTokenId(id))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace-tokenise and map to ids (no BOS/EOS/SENT added).
    pub fn encode(&self, sentence: &str) -> Result<TokenSeq> {
        let ids = sentence.split_whitespace().map(|w| self.lookup(w)).collect::<Result<Vec<_>>>()?;
        Ok(TokenSeq::new(ids))
    }

    /// Map ids back to words, skipping PAD/BOS/SENT and stopping at EOS.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS | SENT => {}
                _ => out.push(self.token_of(id)?.to_string()),
            }
        }
        Ok(out)
    }
}

/// Token ids with a parallel real-token mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    /// `true` for real tokens, `false` for PAD.
    pub pad_mask: Vec<bool>,
}

impl TokenSeq {
    pub fn new(ids: Vec<usize>) -> Self {
        let pad_mask = ids.iter().map(|&i| i != PAD).collect();
        Self { ids, pad_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids at real (non-PAD) positions.
    pub fn real_ids(&self) -> Vec<usize> {
        self.ids.iter().zip(&self.pad_mask).filter(|(_, &m)| m).map(|(&i, _)| i).collect()
    }

    pub fn num_real(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    pub fn padded(&self, len: usize) -> Self {
        let mut ids = self.ids.clone();
        while ids.len() < len {
            ids.push(PAD);
        }
        Self::new(ids)
    }
}

/// Final-layer encoder output split into per-token rows and the sentence vector.
#[derive(Clone, Copy, Debug)]
pub struct EncodedSource {
    /// `L × d`; row `l` is the contextual embedding of content token `l`.
    pub w: Var,
    /// `1 × d`; the final-layer row at the SENT position.
    pub s: Var,
    /// `(n + 1) × d`; every position including SENT and padding.
    pub all: Var,
}

/// One attention head, straight from the definition:
/// `z_i = Σ_j α_ij (x_j W^V)`, `α_ij = softmax_j((x_i W^Q)(x_j W^K)ᵀ / √d_h)`.
/// Returns `(z, α)`.
pub fn attention_head(g: &mut Graph, x: Var, wq: Var, wk: Var, wv: Var, keep: Option<&[bool]>) -> Result<(Var, Var)> {
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let dh = g.shape(wq)[1];
    let s = g.matmul_nt(q, k)?;
    let s = g.scale(s, 1.0 / libm::sqrt(dh as f64))?;
    let a = g.softmax_masked(s, keep)?;
    Ok((g.matmul(a, v)?, a))
}

/// Key-padding mask expanded to `rows × keys`.
pub fn key_mask(rows: usize, keys: &[bool]) -> Vec<bool> {
    let mut m = Vec::with_capacity(rows * keys.len());
    for _ in 0..rows {
        m.extend_from_slice(keys);
    }
    m
}

/// `H̄ = LN(Att(H) + H)`, `H' = LN(FFN(H̄) + H̄)`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(prefix: &str, heads: usize) -> Self {
        Self {
            attn: MultiHeadAttention::new(&join(prefix, "attn"), heads),
            ln1: LayerNorm::new(&join(prefix, "ln1")),
            ffn: FeedForward::new(&join(prefix, "ffn")),
            ln2: LayerNorm::new(&join(prefix, "ln2")),
        }
    }

    pub fn init(&self, store: &mut ParameterStore, d: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.attn.init(store, d, rng)?;
        self.ln1.init(store, d)?;
        self.ffn.init(store, d, ffn, rng)?;
        self.ln2.init(store, d)
    }

    /// Returns the new hidden states and the per-head attention weights.
    pub fn forward(&self, f: &mut Fwd, h: Var, pad_mask: &[bool]) -> Result<(Var, Vec<Var>)> {
        let n = f.g.shape(h)[0];
        let keep = key_mask(n, pad_mask);
        let att = self.attn.forward(f, h, h, Some(&keep))?;
        let a = f.dropout(att.out)?;
        let r = f.g.add(a, h)?;
        let hbar = self.ln1.forward(f, r)?;
        let ff = self.ffn.forward(f, hbar)?;
        let ff = f.dropout(ff)?;
        let r = f.g.add(ff, hbar)?;
        Ok((self.ln2.forward(f, r)?, att.weights))
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    embed: Embedding,
    pub layers: Vec<EncoderLayer>,
    d: usize,
    ffn: usize,
}

impl TextEncoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            embed: Embedding::new("encoder.embed", cfg.positional_encoding),
            layers: (0..cfg.enc_layers).map(|i| EncoderLayer::new(&alloc::format!("encoder.layer{i}"), cfg.heads)).collect(),
            d: cfg.d_model,
            ffn: cfg.ffn,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, vocab: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.embed.init(store, vocab, self.d, rng)?;
        for l in &self.layers {
            l.init(store, self.d, self.ffn, rng)?;
        }
        Ok(())
    }

    /// Encode a source sentence; SENT is prepended when absent.
    pub fn encode(&self, f: &mut Fwd, tokens: &TokenSeq) -> Result<EncodedSource> {
        let mut seq = tokens.clone();
        if seq.ids.first() != Some(&SENT) {
            seq.ids.insert(0, SENT);
            seq.pad_mask.insert(0, true);
        }
        let real: Vec<usize> = (1..seq.len()).filter(|&i| seq.pad_mask[i]).collect();
        if real.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut h = self.embed.forward(f, &seq.ids)?;
        for l in &self.layers {
            h = l.forward(f, h, &seq.pad_mask)?.0;
        }
        let s = f.g.slice_rows(h, 0, 1)?;
        let w = f.g.gather_rows(h, &real)?;
        Ok(EncodedSource { w, s, all: h })
    }
}
