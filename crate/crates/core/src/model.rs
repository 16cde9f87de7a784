//! The assembled translation model and its inference path.

use alloc::vec::Vec;

use crate::adversarial::Discriminator;
use crate::aggregation_decoder::{Aggregation, Decoder, JointMemory};
use crate::captioner::Captioner;
use crate::config::ModelConfig;
use crate::imagination::{Imagination, Imagined, Noise};
use crate::nn::Fwd;
use crate::numerics::{GradPolicy, Graph, ParameterStore, RngStreams, Stream, Tensor};
use crate::text_encoder::{EncodedSource, TextEncoder, TokenSeq, BOS, EOS};
use crate::Result;

/// Source sentence, target sentence and the rendered scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub src: TokenSeq,
    pub tgt: TokenSeq,
    pub image: Tensor,
}

/// Everything the generator computes for one source sentence.
#[derive(Clone, Debug)]
pub struct GeneratorPass {
    pub enc: EncodedSource,
    pub imagined: Option<Imagined>,
    pub memory: JointMemory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Translation {
    /// Output ids without BOS/EOS.
    pub ids: Vec<usize>,
    /// `true` when `max_len` was reached before EOS.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct ImagiT {
    pub cfg: ModelConfig,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub encoder: TextEncoder,
    pub imagination: Imagination,
    pub aggregation: Aggregation,
    pub decoder: Decoder,
    pub disc: Discriminator,
    pub captioner: Captioner,
}

impl ImagiT {
    pub fn new(cfg: &ModelConfig, src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            cfg: cfg.clone(),
            src_vocab,
            tgt_vocab,
            encoder: TextEncoder::new(cfg),
            imagination: Imagination::new(cfg),
            aggregation: Aggregation::new(cfg),
            decoder: Decoder::new(cfg),
            disc: Discriminator::new(cfg),
            captioner: Captioner::new(cfg),
        }
    }

    /// Fresh parameters for every component. Each component draws from its
    /// own init substream.
    pub fn init(&self, seed: u64) -> Result<ParameterStore> {
        let s = RngStreams::new(seed);
        let mut store = ParameterStore::new();
        let d = self.cfg.d_model;
        self.encoder.init(&mut store, self.src_vocab, &mut s.substream(Stream::Init, 1))?;
        self.imagination.init(&mut store, d, &mut s.substream(Stream::Init, 2))?;
        self.aggregation.init(&mut store, &mut s.substream(Stream::Init, 3))?;
        self.decoder.init(&mut store, self.tgt_vocab, &mut s.substream(Stream::Init, 4))?;
        self.disc.init(&mut store, &mut s.substream(Stream::Init, 5))?;
        self.captioner.init(&mut store, self.src_vocab, &mut s.substream(Stream::Init, 6))?;
        Ok(store)
    }

    /// Encoder, optional imagination, and aggregation. `noise = None` runs
    /// the text-only path.
    pub fn generator_pass(&self, f: &mut Fwd, src: &TokenSeq, noise: Option<&Noise>) -> Result<GeneratorPass> {
        let enc = self.encoder.encode(f, src)?;
        let imagined = match noise {
            Some(n) => Some(self.imagination.forward(f, &enc, n)?),
            None => None,
        };
        let memory = self.aggregation.aggregate(f, enc.w, imagined.as_ref().map(|i| i.f1))?;
        Ok(GeneratorPass { enc, imagined, memory })
    }

    /// Noise for inference: zeros when `deterministic`, otherwise drawn for
    /// sentence `index` from the run seed.
    pub fn inference_noise(&self, seed: u64, index: u64, deterministic: bool) -> Noise {
        if deterministic {
            return Noise::zeros(&self.cfg);
        }
        let s = RngStreams::new(seed);
        Noise::sample(&self.cfg, &mut s.substream(Stream::NoiseZ, index), &mut s.substream(Stream::CaEpsilon, index))
    }

    pub fn translate(&self, store: &ParameterStore, src: &TokenSeq, mode: DecodeMode, noise: &Noise) -> Result<Translation> {
        let policy = GradPolicy::None;
        let mut g = Graph::new();
        let mut f = Fwd::new(&mut g, store, &policy);
        let pass = self.generator_pass(&mut f, src, self.cfg.imagination.then_some(noise))?;
        let kv = self.decoder.memory_kv(&mut f, &pass.memory)?;
        let max_len = self.cfg.max_len;
        let k = match mode {
            DecodeMode::Greedy => 1,
            DecodeMode::Beam(k) => k.max(1),
        };
        let mut beams: Vec<(Vec<usize>, f64)> = alloc::vec![(alloc::vec![BOS], 0.0)];
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        for _ in 0..max_len {
            let mut cand: Vec<(f64, usize, usize)> = Vec::new();
            for (b, (prefix, score)) in beams.iter().enumerate() {
                let logits = self.decoder.decode_step(&mut f, &kv, prefix)?;
                let row = f.g.value(logits).data();
                let lp = log_softmax(row);
                if matches!(mode, DecodeMode::Greedy) {
                    cand.push((score + lp[argmax(row)], b, argmax(row)));
                } else {
                    cand.extend(lp.iter().enumerate().map(|(v, l)| (score + l, b, v)));
                }
            }
            cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(k);
            for (score, b, v) in cand.into_iter().take(k) {
                let mut p = beams[b].0.clone();
                if v == EOS {
                    finished.push((p, score));
                } else {
                    p.push(v);
                    next.push((p, score));
                }
            }
            beams = next;
            if beams.is_empty() || finished.len() >= k {
                break;
            }
        }
        let best_finished = finished.into_iter().reduce(|a, b| if b.1 > a.1 { b } else { a });
        let (ids, truncated) = match best_finished {
            Some((p, _)) => (p, false),
            None => (beams.into_iter().next().map(|b| b.0).unwrap_or_default(), true),
        };
        Ok(Translation { ids: ids[1..].to_vec(), truncated })
    }

    /// Mean-pooled imagined feature `f1` for a source sentence.
    pub fn imagined_feature(&self, store: &ParameterStore, src: &TokenSeq, noise: &Noise) -> Result<Vec<f64>> {
        let policy = GradPolicy::None;
        let mut g = Graph::new();
        let mut f = Fwd::new(&mut g, store, &policy);
        let enc = self.encoder.encode(&mut f, src)?;
        let im = self.imagination.forward(&mut f, &enc, noise)?;
        let p = self.captioner.pooled(&mut f, im.f1)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Mean-pooled captioner-encoder feature of a real image.
    pub fn image_feature(&self, store: &ParameterStore, image: &Tensor) -> Result<Vec<f64>> {
        let policy = GradPolicy::None;
        let mut g = Graph::new();
        let mut f = Fwd::new(&mut g, store, &policy);
        let img = f.g.constant(image.clone());
        let feat = self.captioner.encode_image(&mut f, img)?;
        let p = self.captioner.pooled(&mut f, feat)?;
        Ok(g.value(p).data().to_vec())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lz = max + libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>());
    row.iter().map(|x| x - lz).collect()
}
