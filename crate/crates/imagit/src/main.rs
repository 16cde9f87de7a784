use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use imagit::checkpoint::{self, CheckpointHeader};
use imagit::corpus::{self, Corpus, Sizes};
use imagit::metrics::{self, EpochRow};
use imagit::run_manifest::RunManifest;
use imagit::training::{self, TrainOptions};
use imagit::{config_file, parallel, prepare_out_dir};
use imagit_core::captioner;
use imagit_core::config::RunConfig;
use imagit_core::data::Split;
use imagit_core::eval::{degrade, retrieval_recall, DegradationKind, DegradationSpec};
use imagit_core::model::{DecodeMode, ImagiT};
use imagit_core::numerics::ParameterStore;
use imagit_core::text_encoder::{TokenSeq, Vocabulary};
use rayon::prelude::*;
use serde::Serialize;

const MODEL_CKPT: &str = "model.ckpt";
const CAPTIONER_CKPT: &str = "captioner.ckpt";
const CONFIG: &str = "config.toml";

#[derive(Parser)]
#[command(name = "imagit", version, about = "Imagination-guided translation on a synthetic shape-world corpus")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct OutArgs {
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing --out.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a shape-world corpus.
    GenData {
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value_t = 512)]
        train: usize,
        #[arg(long, default_value_t = 64)]
        dev: usize,
        #[arg(long, default_value_t = 64)]
        test: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Pretrain and freeze the image captioner.
    PretrainCaptioner {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train a translation model.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Directory written by pretrain-captioner (not needed with --text-only).
        #[arg(long)]
        captioner: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Disable imagination and the adversarial path.
        #[arg(long)]
        text_only: bool,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<u64>,
        /// Stop once greedy train-split BLEU reaches this value.
        #[arg(long)]
        stop_at_train_bleu: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Translate source sentences, one per line, to stdout.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Zero noise instead of sampled noise.
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Corpus BLEU on one split; prints it and appends a row to --out.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Start --out afresh instead of appending.
        #[arg(long)]
        force: bool,
    },
    /// Recall@K of imagined features against real-image features.
    Retrieve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        k: Vec<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// BLEU of two models under source degradation.
    DegradeReport {
        #[arg(long)]
        imagit: PathBuf,
        #[arg(long)]
        text_only: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        /// color_deprivation or entity_masking.
        #[arg(long)]
        kind: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0.15,0.3,0.45,0.6")]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
}

struct LoadedModel {
    cfg: RunConfig,
    hash: String,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    model: ImagiT,
    store: ParameterStore,
}

fn load_model(dir: &Path) -> Result<LoadedModel> {
    let ckpt = dir.join(MODEL_CKPT);
    if !ckpt.exists() {
        bail!("missing model checkpoint: {}", ckpt.display());
    }
    let cfg = config_file::load(&dir.join(CONFIG))?;
    let hash = config_file::config_hash(&cfg)?;
    let (header, store) = checkpoint::load(&ckpt)?;
    if header.config_hash != hash {
        bail!("{}: checkpoint was written with a different configuration", ckpt.display());
    }
    let src_vocab = corpus::read_vocab(&dir.join(corpus::SRC_VOCAB))?;
    let tgt_vocab = corpus::read_vocab(&dir.join(corpus::TGT_VOCAB))?;
    let model = training::build_model(&cfg, &src_vocab, &tgt_vocab);
    Ok(LoadedModel { cfg, hash, src_vocab, tgt_vocab, model, store })
}

fn mode(beam: Option<usize>) -> DecodeMode {
    beam.map_or(DecodeMode::Greedy, DecodeMode::Beam)
}

fn encode_all(vocab: &Vocabulary, sentences: &[String]) -> Result<Vec<TokenSeq>> {
    sentences.iter().map(|s| vocab.encode(s).with_context(|| format!("cannot encode `{s}`"))).collect()
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("imagit: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    parallel::init_threads()?;
    match cli.cmd {
        Cmd::GenData { seed, train, dev, test, side, out } => {
            prepare_out_dir(&out.out, out.force)?;
            let man = RunManifest::begin("gen-data", String::new(), seed);
            let rows = corpus::generate(&out.out, seed, Sizes { train, dev, test }, side)?;
            man.finish(&out.out, &[])?;
            eprintln!("wrote {} examples to {}", rows.len(), out.out.display());
        }
        Cmd::PretrainCaptioner { data, config, seed, out } => {
            let mut cfg = config_file::load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus = Corpus::load(&data)?;
            prepare_out_dir(&out.out, out.force)?;
            let hash = config_file::config_hash(&cfg)?;
            let man = RunManifest::begin("pretrain-captioner", hash.clone(), cfg.seed);
            let (store, history) = training::pretrain(&cfg, &corpus, |r| eprintln!("epoch {:>3}  train {:.5}  dev {:.5}", r.epoch, r.train_loss, r.dev_loss))?;
            checkpoint::save(&out.out.join(CAPTIONER_CKPT), &CheckpointHeader { config_hash: hash, step: history.len() as u64, seed: cfg.seed }, &store)?;
            config_file::save(&out.out.join(CONFIG), &cfg)?;
            #[derive(Serialize)]
            struct Row {
                epoch: u64,
                train_loss: f64,
                dev_loss: f64,
            }
            let rows: Vec<Row> = history.iter().map(|r| Row { epoch: r.epoch, train_loss: r.train_loss, dev_loss: r.dev_loss }).collect();
            metrics::write_csv(&out.out.join("captioner_epochs.csv"), &rows)?;
            man.finish(&out.out, &["captioner_epochs.csv"])?;
        }
        Cmd::Train { data, captioner, config, text_only, lambda1, seed, max_steps, stop_at_train_bleu, out } => {
            let mut cfg = config_file::load_or_default(config.as_deref())?;
            if text_only {
                cfg.model.imagination = false;
            }
            if let Some(l) = lambda1 {
                cfg.loss.lambda1 = l;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = max_steps {
                cfg.train.max_steps = m;
            }
            cfg.validate()?;
            let corpus = Corpus::load(&data)?;
            let model = training::build_model(&cfg, &corpus.src_vocab, &corpus.tgt_vocab);
            let mut store = model.init(cfg.seed)?;
            match (&captioner, cfg.model.imagination) {
                (Some(dir), _) => {
                    let (_, cap) = checkpoint::load(&dir.join(CAPTIONER_CKPT)).with_context(|| format!("loading captioner from {}", dir.display()))?;
                    training::attach_captioner(&mut store, cap)?;
                }
                (None, true) => bail!("--captioner is required unless --text-only is given"),
                (None, false) => store.set_trainable_prefix(captioner::PREFIX, false),
            }
            prepare_out_dir(&out.out, out.force)?;
            let hash = config_file::config_hash(&cfg)?;
            let man = RunManifest::begin("train", hash.clone(), cfg.seed);
            let outcome = training::train(&model, &cfg, store, &corpus, TrainOptions { stop_at_train_bleu }, |r| {
                if r.step % 50 == 0 {
                    eprintln!("step {:>5}  l_trans {:.4}  l_i2t {:.4}  l_g0 {:.4}  l_d {:.4}", r.step, r.losses.l_trans, r.losses.l_i2t, r.losses.l_g0, r.losses.l_d);
                }
            })?;
            for e in &outcome.epochs {
                eprintln!("epoch {:>3}  step {:>5}  dev BLEU {}", e.epoch, e.step, e.dev_bleu.map_or("-".into(), |b| format!("{b:.2}")));
            }
            let step = outcome.metrics.last().map_or(0, |m| m.step);
            checkpoint::save(&out.out.join(MODEL_CKPT), &CheckpointHeader { config_hash: hash, step, seed: cfg.seed }, &outcome.store)?;
            config_file::save(&out.out.join(CONFIG), &cfg)?;
            corpus::write_vocab(&out.out.join(corpus::SRC_VOCAB), &corpus.src_vocab)?;
            corpus::write_vocab(&out.out.join(corpus::TGT_VOCAB), &corpus.tgt_vocab)?;
            metrics::write_csv(&out.out.join("metrics.csv"), &outcome.metrics)?;
            metrics::write_csv::<EpochRow>(&out.out.join("epochs.csv"), &outcome.epochs)?;
            man.finish(&out.out, &["metrics.csv", "epochs.csv"])?;
        }
        Cmd::Translate { model, input, deterministic, beam, seed, out, force } => {
            if let Some(o) = &out {
                imagit::check_out_file(o, force)?;
            }
            let m = load_model(&model)?;
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let lines: Vec<String> = text.lines().map(str::to_string).collect();
            let srcs = encode_all(&m.src_vocab, &lines)?;
            let hyps = training::translate_all(&m.model, &m.store, &m.tgt_vocab, &srcs, mode(beam), seed, deterministic)?;
            let body: String = hyps.iter().map(|h| format!("{h}\n")).collect();
            match out {
                Some(o) => fs::write(&o, body).with_context(|| format!("writing {}", o.display()))?,
                None => print!("{body}"),
            }
        }
        Cmd::Evaluate { model, data, split, beam, out, force } => {
            let split = Split::parse(&split)?;
            if force && out.exists() {
                fs::remove_file(&out).with_context(|| format!("removing {}", out.display()))?;
            }
            let m = load_model(&model)?;
            let corpus = Corpus::load(&data)?;
            let srcs = encode_all(&m.src_vocab, &corpus.sources(split))?;
            let refs = corpus.targets(split);
            let hyps = training::translate_all(&m.model, &m.store, &m.tgt_vocab, &srcs, mode(beam), 0, true)?;
            let bleu = imagit_core::eval::bleu(&hyps, &refs)?;
            println!("{bleu:.4}");
            #[derive(Serialize)]
            struct Row {
                model: String,
                config_hash: String,
                split: &'static str,
                sentences: usize,
                bleu: f64,
            }
            metrics::append_csv(&out, &[Row { model: model.display().to_string(), config_hash: m.hash, split: split.name(), sentences: refs.len(), bleu }])?;
        }
        Cmd::Retrieve { model, data, split, k, out } => {
            let split = Split::parse(&split)?;
            let m = load_model(&model)?;
            if !m.cfg.model.imagination {
                bail!("{}: retrieval needs a model trained with imagination", model.display());
            }
            let corpus = Corpus::load(&data)?;
            let items: Vec<_> = corpus.split(split).collect();
            let n = items.len();
            if let Some(&bad) = k.iter().find(|&&k| k == 0 || k > n) {
                bail!("--k {bad} must lie in 1..={n}");
            }
            prepare_out_dir(&out.out, out.force)?;
            let man = RunManifest::begin("retrieve", m.hash.clone(), 0);
            let feats: Vec<(Vec<f64>, Vec<f64>)> = items
                .par_iter()
                .map(|it| {
                    let src = m.src_vocab.encode(&it.src)?;
                    let noise = m.model.inference_noise(0, 0, true);
                    Ok((m.model.imagined_feature(&m.store, &src, &noise)?, m.model.image_feature(&m.store, &it.image)?))
                })
                .collect::<Result<_, imagit_core::Error>>()?;
            let (generated, truth): (Vec<_>, Vec<_>) = feats.into_iter().unzip();
            #[derive(Serialize)]
            struct Row {
                k: usize,
                recall: f64,
                chance: f64,
            }
            let mut rows = Vec::new();
            for &kk in &k {
                let recall = retrieval_recall(&generated, &truth, kk)?;
                println!("R@{kk} = {recall:.4} (chance {:.4})", kk as f64 / n as f64);
                rows.push(Row { k: kk, recall, chance: kk as f64 / n as f64 });
            }
            metrics::write_csv(&out.out.join("retrieval.csv"), &rows)?;
            let named = generated.iter().enumerate().map(|(i, v)| (format!("generated.{i:04}"), v.as_slice()));
            let named = named.chain(truth.iter().enumerate().map(|(i, v)| (format!("groundtruth.{i:04}"), v.as_slice())));
            let fstore = checkpoint::store_from_rows(named)?;
            checkpoint::save(&out.out.join("features.ckpt"), &CheckpointHeader { config_hash: m.hash, step: 0, seed: 0 }, &fstore)?;
            man.finish(&out.out, &["retrieval.csv"])?;
        }
        Cmd::DegradeReport { imagit, text_only, data, split, kind, fractions, seed, out } => {
            let split = Split::parse(&split)?;
            let kind = DegradationKind::parse(&kind)?;
            let fractions = match kind {
                DegradationKind::ColorDeprivation => vec![0.0, 1.0],
                DegradationKind::EntityMasking => fractions,
            };
            if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                bail!("fraction {f} outside [0, 1]");
            }
            let models = [("imagit", load_model(&imagit)?), ("text_only", load_model(&text_only)?)];
            let corpus = Corpus::load(&data)?;
            prepare_out_dir(&out.out, out.force)?;
            let man = RunManifest::begin("degrade-report", models[0].1.hash.clone(), seed);
            let rows = degradation_rows(&models, &corpus, split, kind, &fractions, seed)?;
            for r in &rows {
                println!("{:<10} {} {:.2} {:.4}", r.model, r.kind, r.fraction, r.bleu);
            }
            metrics::write_csv(&out.out.join("degradation.csv"), &rows)?;
            man.finish(&out.out, &["degradation.csv"])?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DegradeRow {
    model: &'static str,
    kind: &'static str,
    fraction: f64,
    bleu: f64,
}

fn degradation_rows(models: &[(&'static str, LoadedModel)], corpus: &Corpus, split: Split, kind: DegradationKind, fractions: &[f64], seed: u64) -> Result<Vec<DegradeRow>> {
    let sources = corpus.sources(split);
    let refs = corpus.targets(split);
    let mut rows = Vec::new();
    for (name, m) in models {
        for &fraction in fractions {
            // color deprivation is all-or-nothing: fraction 0 is the clean run
            let degraded = if fraction == 0.0 { sources.clone() } else { degrade(&sources, &DegradationSpec { kind, mask_fraction: fraction, seed })? };
            let srcs = encode_all(&m.src_vocab, &degraded)?;
            let hyps = training::translate_all(&m.model, &m.store, &m.tgt_vocab, &srcs, DecodeMode::Greedy, 0, true)?;
            rows.push(DegradeRow { model: name, kind: kind.name(), fraction, bleu: imagit_core::eval::bleu(&hyps, &refs)? });
        }
    }
    Ok(rows)
}
