//! Corpus BLEU, retrieval recall and source-side degradation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{token_class, TokenClass};
use crate::numerics::{RngStreams, Stream};
use crate::text_encoder::RESERVED;
use crate::{Error, Result};

fn ngrams<'a>(toks: &'a [&'a str], n: usize) -> BTreeMap<&'a [&'a str], usize> {
    let mut m = BTreeMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and hypothesis n-gram totals for `n = 1..=4`, plus
/// hypothesis and reference lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

pub fn bleu_stats<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<BleuStats> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch(hyps.len(), refs.len()));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("bleu corpus"));
    }
    let mut st = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        st.hyp_len += h.len();
        st.ref_len += r.len();
        for n in 1..=4 {
            let hn = ngrams(&h, n);
            let rn = ngrams(&r, n);
            for (g, c) in &hn {
                st.matches[n - 1] += (*c).min(rn.get(g).copied().unwrap_or(0));
                st.totals[n - 1] += c;
            }
        }
    }
    Ok(st)
}

impl BleuStats {
    /// `100 · BP · exp(¼ Σ ln p_n)`; a zero match count for `n ≥ 2` becomes
    /// `(0 + 1) / (total + 1)`.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_p = 0.0;
        for n in 0..4 {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let p = if n > 0 && self.matches[n] == 0 { 1.0 / (t + 1.0) } else { m / t };
            log_p += libm::log(p);
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { libm::exp(1.0 - r / c) };
        100.0 * bp * libm::exp(log_p / 4.0)
    }
}

/// Corpus-level BLEU-4 over whitespace tokens, one reference per hypothesis.
pub fn bleu<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    Ok(bleu_stats(hyps, refs)?.score())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    let den = na * nb;
    if den == 0.0 {
        0.0
    } else {
        dot / den
    }
}

/// Rank of `groundtruth[i]` among all groundtruth items by cosine similarity
/// to `generated[i]` (0 = nearest; ties go to the lower index).
pub fn retrieval_ranks(generated: &[Vec<f64>], groundtruth: &[Vec<f64>]) -> Result<Vec<usize>> {
    if generated.len() != groundtruth.len() {
        return Err(Error::LengthMismatch(generated.len(), groundtruth.len()));
    }
    if generated.is_empty() {
        return Err(Error::Empty("retrieval corpus"));
    }
    Ok(generated
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let sims: Vec<f64> = groundtruth.iter().map(|g| cosine(q, g)).collect();
            let target = sims[i];
            sims.iter().enumerate().filter(|&(j, s)| *s > target || (*s == target && j < i)).count()
        })
        .collect())
}

/// Fraction of queries whose match is among the `k` nearest groundtruth items.
pub fn retrieval_recall(generated: &[Vec<f64>], groundtruth: &[Vec<f64>], k: usize) -> Result<f64> {
    if k > groundtruth.len() {
        return Err(Error::KTooLarge { k, n: groundtruth.len() });
    }
    let ranks = retrieval_ranks(generated, groundtruth)?;
    Ok(ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    ColorDeprivation,
    EntityMasking,
}

impl DegradationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ColorDeprivation => "color_deprivation",
            Self::EntityMasking => "entity_masking",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "color_deprivation" => Ok(Self::ColorDeprivation),
            "entity_masking" => Ok(Self::EntityMasking),
            _ => Err(Error::Invalid(alloc::format!("unknown degradation kind `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub mask_fraction: f64,
    pub seed: u64,
}

/// Replace masked source tokens by `[M]`. `class_of` maps a word to its class;
/// sentence `index` selects the random substream so results do not depend on
/// iteration order.
pub fn degrade_sentence(src: &str, spec: &DegradationSpec, index: u64, class_of: impl Fn(&str) -> TokenClass) -> String {
    let mut rng = RngStreams::new(spec.seed).substream(Stream::Data, index);
    let words: Vec<String> = src
        .split_whitespace()
        .map(|w| {
            let masked = match (spec.kind, class_of(w)) {
                (DegradationKind::ColorDeprivation, TokenClass::Color) => true,
                (DegradationKind::EntityMasking, TokenClass::Entity) => rng.random::<f64>() < spec.mask_fraction,
                _ => false,
            };
            if masked { RESERVED[4].to_string() } else { w.to_string() }
        })
        .collect();
    words.join(" ")
}

/// Degrade every source sentence with the shape-world token classes.
pub fn degrade(sources: &[String], spec: &DegradationSpec) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&spec.mask_fraction) {
        return Err(Error::Invalid("mask_fraction must lie in [0, 1]".to_string()));
    }
    Ok(sources.iter().enumerate().map(|(i, s)| degrade_sentence(s, spec, i as u64, token_class)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_100() {
        let h = ["ein rot kreis ein blau quadrat linksvon"];
        assert!((bleu(&h, &h).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn color_deprivation_rule() {
        let spec = DegradationSpec { kind: DegradationKind::ColorDeprivation, mask_fraction: 0.0, seed: 0 };
        let out = degrade(&["a red circle above a blue square".to_string()], &spec).unwrap();
        assert_eq!(out[0], "a [M] circle above a [M] square");
    }

    #[test]
    fn recall_rejects_large_k() {
        let f = [alloc::vec![1.0]];
        assert!(retrieval_recall(&f, &f, 2).is_err());
    }
}
