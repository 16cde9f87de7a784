//! Captioner pretraining, the adversarial training loop, and batch inference.

use std::collections::BTreeSet;

use imagit_core::adversarial::{train_step, StepReport, TrainState};
use imagit_core::captioner::{self, pretrain_captioner, EpochRecord};
use imagit_core::config::RunConfig;
use imagit_core::data::Split;
use imagit_core::eval::bleu;
use imagit_core::model::{DecodeMode, Example, ImagiT};
use imagit_core::numerics::{ParameterStore, RngStreams, Stream};
use imagit_core::text_encoder::{TokenSeq, Vocabulary};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::metrics::{EpochRow, MetricsRow};
use crate::{Error, Result};

pub fn build_model(cfg: &RunConfig, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> ImagiT {
    ImagiT::new(&cfg.model, src_vocab.len(), tgt_vocab.len())
}

/// Pretrain the captioner on (image, source caption) pairs. Returns the frozen
/// `captioner.*` parameters.
pub fn pretrain(cfg: &RunConfig, corpus: &Corpus, on_epoch: impl FnMut(&EpochRecord)) -> Result<(ParameterStore, Vec<EpochRecord>)> {
    cfg.validate()?;
    check_side(cfg, corpus)?;
    let model = build_model(cfg, &corpus.src_vocab, &corpus.tgt_vocab);
    let init = model.init(cfg.seed)?.subset(captioner::PREFIX);
    let train = corpus.caption_examples(Split::Train)?;
    let dev = corpus.caption_examples(Split::Dev)?;
    Ok(pretrain_captioner(&model.captioner, init, &train, &dev, &cfg.captioner, cfg.seed, on_epoch)?)
}

pub fn check_side(cfg: &RunConfig, corpus: &Corpus) -> Result<()> {
    if corpus.side != cfg.model.image_size {
        return Err(Error::Format(format!("corpus images are {0}x{0} but the config expects image_size {1}", corpus.side, cfg.model.image_size)));
    }
    Ok(())
}

/// Replace the `captioner.*` entries of `store` by pretrained ones; names and
/// shapes must match.
pub fn attach_captioner(store: &mut ParameterStore, pretrained: ParameterStore) -> Result<()> {
    let fresh = store.subset(captioner::PREFIX);
    let shapes = |s: &ParameterStore| s.iter().map(|p| (p.name.clone(), p.tensor.shape().to_vec())).collect::<Vec<_>>();
    if shapes(&fresh) != shapes(&pretrained) || pretrained.len() != pretrained.subset(captioner::PREFIX).len() {
        return Err(Error::Format("captioner checkpoint does not match the model configuration".into()));
    }
    let mut frozen = pretrained;
    frozen.set_trainable_prefix(captioner::PREFIX, false);
    store.merge(frozen);
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainOptions {
    /// Stop once greedy training-set BLEU reaches this value (checked per epoch).
    pub stop_at_train_bleu: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub store: ParameterStore,
    pub metrics: Vec<MetricsRow>,
    pub epochs: Vec<EpochRow>,
    /// Every parameter that received a gradient in a discriminator step.
    pub d_step_params: BTreeSet<String>,
    /// Every parameter that received a gradient in a generator step.
    pub g_step_params: BTreeSet<String>,
}

/// Greedy or beam translation of many sentences, in parallel. Noise for
/// sentence `i` is drawn from `(seed, i)` unless `deterministic`.
pub fn translate_all(
    model: &ImagiT,
    store: &ParameterStore,
    tgt_vocab: &Vocabulary,
    sources: &[TokenSeq],
    mode: DecodeMode,
    seed: u64,
    deterministic: bool,
) -> Result<Vec<String>> {
    sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let noise = model.inference_noise(seed, i as u64, deterministic);
            let t = model.translate(store, src, mode, &noise)?;
            Ok(tgt_vocab.decode(&t.ids)?.join(" "))
        })
        .collect()
}

/// Deterministic greedy BLEU of `examples` against `refs`.
pub fn corpus_bleu(model: &ImagiT, store: &ParameterStore, tgt_vocab: &Vocabulary, sources: &[TokenSeq], refs: &[String]) -> Result<f64> {
    let hyps = translate_all(model, store, tgt_vocab, sources, DecodeMode::Greedy, 0, true)?;
    Ok(bleu(&hyps, refs)?)
}

struct EvalSet {
    sources: Vec<TokenSeq>,
    refs: Vec<String>,
}

impl EvalSet {
    fn new(examples: &[Example], refs: Vec<String>) -> Self {
        Self { sources: examples.iter().map(|e| e.src.clone()).collect(), refs }
    }
}

/// Train from `store` on the corpus train split. Dev BLEU is measured after
/// every epoch; training stops at `max_steps`, `max_epochs`, when dev BLEU has
/// not improved for `patience_epochs`, or at the optional train-BLEU target.
pub fn train(
    model: &ImagiT,
    cfg: &RunConfig,
    store: ParameterStore,
    corpus: &Corpus,
    opts: TrainOptions,
    mut on_step: impl FnMut(&StepReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_side(cfg, corpus)?;
    let train_set = corpus.examples(Split::Train)?;
    if train_set.is_empty() {
        return Err(Error::Format("corpus has no train split".into()));
    }
    let dev_set = corpus.examples(Split::Dev)?;
    let dev_eval = EvalSet::new(&dev_set, corpus.targets(Split::Dev));
    let train_eval = EvalSet::new(&train_set, corpus.targets(Split::Train));
    let streams = RngStreams::new(cfg.seed);
    let mut state = TrainState::new(store, cfg);
    let mut metrics = Vec::new();
    let mut epochs = Vec::new();
    let (mut d_names, mut g_names) = (BTreeSet::new(), BTreeSet::new());
    let mut best_dev = f64::NEG_INFINITY;
    let mut since_best = 0;
    for epoch in 1..=cfg.train.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut streams.substream(Stream::Data, epoch));
        for chunk in order.chunks(cfg.train.batch_size.max(1)) {
            if state.step >= cfg.train.max_steps {
                break;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let report = train_step(model, cfg, &mut state, &batch, epoch)?;
            metrics.push(MetricsRow::from(&report));
            d_names.extend(report.audit.d_step.iter().cloned());
            g_names.extend(report.audit.g_step.iter().cloned());
            on_step(&report);
        }
        let dev_bleu = if dev_eval.sources.is_empty() {
            None
        } else {
            Some(corpus_bleu(model, &state.store, &corpus.tgt_vocab, &dev_eval.sources, &dev_eval.refs)?)
        };
        let train_bleu = match opts.stop_at_train_bleu {
            Some(_) => Some(corpus_bleu(model, &state.store, &corpus.tgt_vocab, &train_eval.sources, &train_eval.refs)?),
            None => None,
        };
        epochs.push(EpochRow { epoch, step: state.step, dev_bleu, train_bleu });
        if let (Some(target), Some(b)) = (opts.stop_at_train_bleu, train_bleu) {
            if b >= target {
                break;
            }
        }
        if state.step >= cfg.train.max_steps {
            break;
        }
        if let Some(b) = dev_bleu {
            if b > best_dev {
                best_dev = b;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.train.patience_epochs {
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome { store: state.store, metrics, epochs, d_step_params: d_names, g_step_params: g_names })
}
