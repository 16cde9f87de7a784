//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs at desk scale on one thread. Expect roughly half an hour.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use imagit::corpus::{self, Corpus, Sizes};
use imagit::metrics::{self, MetricsRow};
use imagit::training::{self, TrainOptions, TrainOutcome};
use imagit_core::adversarial::{discriminator_loss, generator_adv_loss, Discriminator};
use imagit_core::captioner;
use imagit_core::config::RunConfig;
use imagit_core::data::Split;
use imagit_core::diagnostics::gradient_suite;
use imagit_core::eval::{degrade, retrieval_recall, DegradationKind, DegradationSpec};
use imagit_core::model::ImagiT;
use imagit_core::nn::Fwd;
use imagit_core::numerics::{GradCheck, GradPolicy, Graph, ParameterStore, RngStreams, Stream};
use imagit_core::text_encoder::TokenSeq;
use rand::Rng;

type R<T> = Result<T, Box<dyn std::error::Error>>;

/// Steps per run for the matched-budget comparisons (criteria 6 to 8).
const BUDGET_STEPS: u64 = 600;
const SEEDS: [u64; 3] = [17, 18, 19];
const FRACTIONS: [f64; 5] = [0.0, 0.15, 0.30, 0.45, 0.60];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> R<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

struct Report {
    lines: Vec<(usize, &'static str, bool, String)>,
}

impl Report {
    fn record(&mut self, id: usize, name: &'static str, v: R<Verdict>) {
        let (pass, detail) = match v {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!("criterion {id:>2} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, name, pass, detail));
    }
}

fn progress(msg: &str) {
    eprintln!("  .. {msg}");
}

struct Desk {
    dir: PathBuf,
    corpus: Corpus,
    captioner: ParameterStore,
}

struct Run {
    model: ImagiT,
    cfg: RunConfig,
    outcome: TrainOutcome,
    secs: f64,
}

fn budget_cfg(seed: u64, lambda1: f64, text_only: bool) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.seed = seed;
    cfg.loss.lambda1 = lambda1;
    cfg.model.imagination = !text_only;
    cfg.train.max_steps = BUDGET_STEPS;
    cfg.train.patience_epochs = u64::MAX;
    cfg
}

fn train_run(desk: &Desk, cfg: &RunConfig, opts: TrainOptions, name: &str) -> R<Run> {
    progress(&format!("training {name} (seed {}, up to {} steps)", cfg.seed, cfg.train.max_steps));
    let t = Instant::now();
    let model = training::build_model(cfg, &desk.corpus.src_vocab, &desk.corpus.tgt_vocab);
    let mut store = model.init(cfg.seed)?;
    if cfg.model.imagination {
        training::attach_captioner(&mut store, desk.captioner.clone())?;
    } else {
        store.set_trainable_prefix(captioner::PREFIX, false);
    }
    let outcome = training::train(&model, cfg, store, &desk.corpus, opts, |_| {})?;
    let dir = desk.dir.join(name);
    std::fs::create_dir_all(&dir)?;
    metrics::write_csv(&dir.join("metrics.csv"), &outcome.metrics)?;
    Ok(Run { model, cfg: cfg.clone(), outcome, secs: t.elapsed().as_secs_f64() })
}

fn split_bleu(run: &Run, corpus: &Corpus, split: Split, sources: &[String]) -> R<f64> {
    let srcs: Vec<TokenSeq> = sources.iter().map(|s| corpus.src_vocab.encode(s)).collect::<Result<_, _>>()?;
    Ok(training::corpus_bleu(&run.model, &run.outcome.store, &corpus.tgt_vocab, &srcs, &corpus.targets(split))?)
}

// 1
fn gradient_suite_check() -> R<Verdict> {
    let t = Instant::now();
    let reports = gradient_suite(17, GradCheck { eps: 1e-5, max_coords: Some(8), seed: 17 })?;
    let secs = t.elapsed().as_secs_f64();
    let worst = reports.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).ok_or("no reports")?;
    let mut detail = format!("{} paths, worst {:.2e} ({}), {secs:.1}s;", reports.len(), worst.max_rel_err, worst.path);
    for r in &reports {
        write!(detail, " {}={:.1e}", r.path, r.max_rel_err)?;
    }
    verdict(worst.max_rel_err <= 1e-4 && secs < 300.0, detail)
}

// 2
fn composition_identity(metrics_csv: &Path) -> R<Verdict> {
    let rows: Vec<MetricsRow> = metrics::read_csv(metrics_csv)?;
    if rows.len() < 100 {
        return verdict(false, format!("only {} logged steps", rows.len()));
    }
    let mut worst = 0.0f64;
    for r in &rows[..100] {
        let expect = r.l_g0 + 20.0 * r.l_i2t + 40.0 * r.l_trans;
        worst = worst.max((r.l_g - expect).abs() / expect.abs().max(f64::MIN_POSITIVE));
    }
    verdict(worst <= f64::EPSILON, format!("100 logged steps, max relative deviation {worst:.1e}"))
}

// 3
fn analytic_anchors(desk: &Desk) -> R<Verdict> {
    let cfg = RunConfig::desk();
    let model = training::build_model(&cfg, &desk.corpus.src_vocab, &desk.corpus.tgt_vocab);
    let mut store = model.init(cfg.seed)?;
    Discriminator::force_half(&mut store)?;
    let examples = desk.corpus.examples(Split::Train)?;
    let noise = model.inference_noise(cfg.seed, 0, false);
    let mut g = Graph::new();
    let mut f = Fwd::new(&mut g, &store, &GradPolicy::None);
    let (mut real, mut fake) = (Vec::new(), Vec::new());
    for ex in examples.iter().take(8) {
        let pass = model.generator_pass(&mut f, &ex.src, Some(&noise))?;
        let im = pass.imagined.ok_or("imagination disabled")?;
        let img = f.g.constant(ex.image.clone());
        real.push(model.disc.discriminate(&mut f, img, pass.enc.s)?);
        fake.push(model.disc.discriminate(&mut f, im.image, pass.enc.s)?);
    }
    let ld = discriminator_loss(f.g, &real, &fake, cfg.loss.log_floor)?;
    let lg = generator_adv_loss(f.g, &fake, cfg.loss.log_floor)?;
    let (ld, lg) = (g.scalar(ld), g.scalar(lg));
    let (ed, eg) = ((ld - 2.0 * 2f64.ln()).abs(), (lg - 2f64.ln()).abs());
    verdict(ed <= 1e-9 && eg <= 1e-9, format!("L_D = {ld:.15} (err {ed:.1e}), L_G0 = {lg:.15} (err {eg:.1e})"))
}

// 4
fn freeze_audit(desk: &Desk, run: &Run) -> R<Verdict> {
    let mut drift = Vec::new();
    for p in desk.captioner.iter() {
        let after = run.outcome.store.get(&p.name)?;
        let same = after.tensor.shape() == p.tensor.shape() && after.tensor.data().iter().zip(p.tensor.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            drift.push(p.name.clone());
        }
    }
    let d_bad: Vec<_> = run.outcome.d_step_params.iter().filter(|n| !n.starts_with("disc.")).collect();
    let g_bad: Vec<_> = run.outcome.g_step_params.iter().filter(|n| n.starts_with("disc.") || n.starts_with(captioner::PREFIX)).collect();
    let pass = drift.is_empty() && d_bad.is_empty() && g_bad.is_empty() && !run.outcome.d_step_params.is_empty() && !run.outcome.g_step_params.is_empty();
    verdict(
        pass,
        format!(
            "{} captioner tensors unchanged ({} drifted); D-step touched {} params ({} outside disc.); G-step touched {} params ({} in disc./captioner.)",
            desk.captioner.len() - drift.len(),
            drift.len(),
            run.outcome.d_step_params.len(),
            d_bad.len(),
            run.outcome.g_step_params.len(),
            g_bad.len()
        ),
    )
}

// 5
fn overfit(run: &Run) -> R<Verdict> {
    let last = run.outcome.epochs.last().ok_or("no epochs")?;
    let bleu = last.train_bleu.ok_or("train BLEU not measured")?;
    verdict(
        bleu >= 95.0 && last.step <= 3000 && run.secs < 1800.0,
        format!("train BLEU {bleu:.2} after {} steps ({} epochs), {:.0}s", last.step, last.epoch, run.secs),
    )
}

// 6
fn degradation(desk: &Desk, imagit: &[Run], text: &[Run], out: &Path) -> R<Verdict> {
    let sources = desk.corpus.sources(Split::Dev);
    let mut csv = String::from("model,seed,kind,fraction,bleu\n");
    let mut drops = [Vec::new(), Vec::new()];
    let mut curves_ok = 0;
    let mut detail = String::new();
    for (im, tx) in imagit.iter().zip(text) {
        let mut curves = [Vec::new(), Vec::new()];
        for (k, run) in [im, tx].into_iter().enumerate() {
            let name = ["imagit", "text_only"][k];
            let clean = split_bleu(run, &desk.corpus, Split::Dev, &sources)?;
            let deprived = degrade(&sources, &DegradationSpec { kind: DegradationKind::ColorDeprivation, mask_fraction: 1.0, seed: 17 })?;
            let dep = split_bleu(run, &desk.corpus, Split::Dev, &deprived)?;
            drops[k].push(clean - dep);
            writeln!(csv, "{name},{},color_deprivation,0,{clean}\n{name},{},color_deprivation,1,{dep}", run.cfg.seed, run.cfg.seed)?;
            for &fr in &FRACTIONS {
                let src = degrade(&sources, &DegradationSpec { kind: DegradationKind::EntityMasking, mask_fraction: fr, seed: 17 })?;
                let b = split_bleu(run, &desk.corpus, Split::Dev, &src)?;
                writeln!(csv, "{name},{},entity_masking,{fr},{b}", run.cfg.seed)?;
                curves[k].push(b);
            }
        }
        let above = curves[0].iter().zip(&curves[1]).skip(1).all(|(a, b)| a >= b);
        curves_ok += above as usize;
        write!(
            detail,
            " seed {}: color drop imagit {:.2} vs text {:.2}, entity imagit [{}] text [{}];",
            im.cfg.seed,
            drops[0].last().unwrap(),
            drops[1].last().unwrap(),
            curves[0].iter().map(|b| format!("{b:.1}")).collect::<Vec<_>>().join(" "),
            curves[1].iter().map(|b| format!("{b:.1}")).collect::<Vec<_>>().join(" ")
        )?;
    }
    std::fs::write(out, csv)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mi, mt) = (mean(&drops[0]), mean(&drops[1]));
    verdict(mi < mt && curves_ok >= 2, format!("mean color drop imagit {mi:.2} vs text-only {mt:.2}; entity curve weakly above in {curves_ok}/3 seeds;{detail}"))
}

// 7
fn grounding(desk: &Desk, run: &Run) -> R<Verdict> {
    let items: Vec<_> = desk.corpus.split(Split::Test).collect();
    let noise = run.model.inference_noise(0, 0, true);
    let mut generated = Vec::new();
    let mut truth = Vec::new();
    for it in &items {
        let src = desk.corpus.src_vocab.encode(&it.src)?;
        generated.push(run.model.imagined_feature(&run.outcome.store, &src, &noise)?);
        truth.push(run.model.image_feature(&run.outcome.store, &it.image)?);
    }
    let n = items.len();
    let r10 = retrieval_recall(&generated, &truth, 10)?;
    let r1 = retrieval_recall(&generated, &truth, 1)?;
    let chance = 10.0 / n as f64;
    let self_r1 = retrieval_recall(&truth, &truth, 1)?;
    // random features: mean R@1 within 3 sigma of 1/n
    let mut rng = RngStreams::new(7).stream(Stream::Data);
    let trials = 200;
    let mut total = 0.0;
    for _ in 0..trials {
        let mut draw = || -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        };
        let (a, b) = (draw(), draw());
        total += retrieval_recall(&a, &b, 1)?;
    }
    let p = 1.0 / n as f64;
    let mc = total / trials as f64;
    let band = 3.0 * (p * (1.0 - p) / (n * trials) as f64).sqrt();
    let baselines = self_r1 == 1.0 && (mc - p).abs() <= band;
    verdict(
        r10 >= 5.0 * chance && baselines,
        format!("R@10 {r10:.3} vs 5x chance {:.3} (R@1 {r1:.3}); self R@1 {self_r1}; random R@1 {mc:.4} vs {p:.4} +/- {band:.4}", 5.0 * chance),
    )
}

// 8
fn ablation(desk: &Desk, runs: &[(f64, &Run)], out: &Path) -> R<Verdict> {
    let mut csv = String::from("lambda1,steps,dev_bleu,test_bleu,max_l_i2t\n");
    let mut detail = String::new();
    let mut zero_ok = false;
    for (l1, run) in runs {
        let dev = split_bleu(run, &desk.corpus, Split::Dev, &desk.corpus.sources(Split::Dev))?;
        let test = split_bleu(run, &desk.corpus, Split::Test, &desk.corpus.sources(Split::Test))?;
        let max_i2t = run.outcome.metrics.iter().map(|m| m.l_i2t).fold(0.0, f64::max);
        if *l1 == 0.0 {
            zero_ok = run.outcome.metrics.iter().all(|m| m.l_i2t == 0.0);
        }
        writeln!(csv, "{l1},{},{dev},{test},{max_i2t}", run.outcome.metrics.len())?;
        write!(detail, " lambda1={l1}: dev {dev:.2} test {test:.2};")?;
    }
    std::fs::write(out, csv)?;
    verdict(zero_ok && runs.len() == 3, format!("l_i2t identically 0 at lambda1=0: {zero_ok};{detail}"))
}

// 9
fn determinism(work: &Path) -> R<Verdict> {
    let bin = env!("CARGO_BIN_EXE_imagit");
    let run = |args: &[&str]| -> R<Vec<u8>> {
        let out = Command::new(bin).args(args).output()?;
        if !out.status.success() {
            return Err(format!("imagit {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()).into());
        }
        Ok(out.stdout)
    };
    std::fs::create_dir_all(work)?;
    let cfg = work.join("tiny.toml");
    std::fs::write(&cfg, "[captioner]\nmax_epochs = 2\n[train]\nmax_steps = 12\n")?;
    let cfg = cfg.to_str().ok_or("path")?.to_string();
    let mut compared = 0;
    let mut stdout = Vec::new();
    for tag in ["a", "b"] {
        let p = |s: &str| work.join(format!("{s}_{tag}")).to_str().unwrap().to_string();
        let data = work.join("data_a").to_str().unwrap().to_string();
        let model = work.join("model_a").to_str().unwrap().to_string();
        let text = work.join("text_a").to_str().unwrap().to_string();
        let src_file = work.join("sources.txt");
        run(&["gen-data", "--seed", "5", "--train", "48", "--dev", "8", "--test", "16", "--out", &p("data")])?;
        run(&["pretrain-captioner", "--data", &data, "--config", &cfg, "--out", &p("cap")])?;
        run(&["train", "--data", &data, "--captioner", &p("cap"), "--config", &cfg, "--out", &p("model")])?;
        run(&["train", "--data", &data, "--text-only", "--config", &cfg, "--out", &p("text")])?;
        let man = std::fs::read_to_string(work.join("data_a").join(corpus::MANIFEST))?;
        std::fs::write(&src_file, man.lines().skip(1).map(|l| format!("{}\n", l.split('\t').nth(1).unwrap_or(""))).collect::<String>())?;
        stdout.push(run(&["translate", "--model", &model, "--input", src_file.to_str().unwrap(), "--seed", "3"])?);
        run(&["evaluate", "--model", &model, "--data", &data, "--split", "dev", "--out", &p("eval.csv")])?;
        run(&["retrieve", "--model", &model, "--data", &data, "--k", "1,5", "--out", &p("retrieve")])?;
        run(&["degrade-report", "--imagit", &model, "--text-only", &text, "--data", &data, "--kind", "entity_masking", "--out", &p("degrade")])?;
    }
    let mut diffs = Vec::new();
    for stem in ["data", "cap", "model", "text", "retrieve", "degrade"] {
        let (a, b) = (work.join(format!("{stem}_a")), work.join(format!("{stem}_b")));
        for (name, bytes) in files(&a)? {
            compared += 1;
            if std::fs::read(b.join(&name)).ok().as_deref() != Some(&bytes[..]) {
                diffs.push(format!("{stem}/{name}"));
            }
        }
    }
    compared += 2;
    if std::fs::read(work.join("eval.csv_a"))? != std::fs::read(work.join("eval.csv_b"))? {
        diffs.push("eval.csv".into());
    }
    if stdout[0] != stdout[1] {
        diffs.push("translate stdout".into());
    }
    verdict(diffs.is_empty(), format!("{compared} artifacts from 8 commands compared byte-for-byte; differing: {diffs:?}"))
}

/// Files under `dir` (relative names) except run manifests.
fn files(dir: &Path) -> R<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != imagit::run_manifest::FILE_NAME) {
                out.push((p.strip_prefix(dir)?.display().to_string(), std::fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

// 10
fn schedule_conformance(work: &Path) -> R<Verdict> {
    let dir = work.join("micro");
    std::fs::create_dir_all(&dir)?;
    corpus::generate(&dir, 3, Sizes { train: 4, dev: 0, test: 0 }, 32)?;
    let corpus = Corpus::load(&dir)?;
    let mut cfg = RunConfig::desk();
    cfg.model.imagination = false;
    cfg.model.d_model = 8;
    cfg.model.heads = 2;
    cfg.model.ffn = 16;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.train.batch_size = 1;
    cfg.train.warmup_steps = 8000;
    cfg.train.max_steps = 16000;
    cfg.train.max_epochs = u64::MAX;
    cfg.train.gan_half_every_epochs = 1000;
    progress("training the micro model for 16000 steps");
    let model = training::build_model(&cfg, &corpus.src_vocab, &corpus.tgt_vocab);
    let store = model.init(cfg.seed)?;
    let out = training::train(&model, &cfg, store, &corpus, TrainOptions::default(), |_| {})?;
    let path = dir.join("metrics.csv");
    metrics::write_csv(&path, &out.metrics)?;
    let rows: Vec<MetricsRow> = metrics::read_csv(&path)?;
    let (d, w) = (cfg.model.d_model as f64, cfg.train.warmup_steps as f64);
    let mut worst = 0.0f64;
    for step in [1u64, 4000, 8000, 16000] {
        let row = rows.get(step as usize - 1).ok_or("missing step")?;
        let s = step as f64;
        let closed = d.powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5));
        worst = worst.max((row.lr_translation - closed).abs() / closed);
    }
    // 4 steps per epoch: epoch e covers steps 4e-3 ..= 4e
    let lr_at_epoch = |e: usize| rows[4 * e - 1].lr_gan;
    let base = cfg.train.gan_base_lr;
    let boundary = lr_at_epoch(1000) == base && lr_at_epoch(1001) == base / 2.0 && lr_at_epoch(2000) == base / 2.0 && lr_at_epoch(2001) == base / 4.0 && rows[4000].lr_gan == base / 2.0 && rows[3999].lr_gan == base;
    verdict(
        worst <= 1e-12 && boundary && rows.len() == 16000,
        format!("lr_translation max relative error {worst:.1e} at steps 1/4000/8000/16000; lr_gan {base:e} -> {:e} at epoch 1001 and {:e} at 2001", lr_at_epoch(1001), lr_at_epoch(2001)),
    )
}

fn main() {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    let start = Instant::now();
    let work = tempfile::tempdir().expect("temp dir");
    let work = work.path();
    let mut report = Report { lines: Vec::new() };

    report.record(1, "gradient suite", gradient_suite_check());
    report.record(10, "schedule conformance", schedule_conformance(work));
    report.record(9, "determinism", determinism(&work.join("det")));

    progress("generating the desk corpus and pretraining the captioner");
    let desk = (|| -> R<Desk> {
        let dir = work.join("desk");
        std::fs::create_dir_all(&dir)?;
        corpus::generate(&dir, 17, Sizes::default(), 32)?;
        let corpus = Corpus::load(&dir)?;
        let (captioner, _) = training::pretrain(&RunConfig::desk(), &corpus, |_| {})?;
        Ok(Desk { dir, corpus, captioner })
    })();
    let desk = match desk {
        Ok(d) => d,
        Err(e) => {
            for (id, name) in [(2, "loss composition"), (3, "analytic anchors"), (4, "freeze audit"), (5, "overfit"), (6, "degradation direction"), (7, "grounding probe"), (8, "lambda1 ablation")] {
                report.record(id, name, Err(format!("setup failed: {e}").into()));
            }
            finish(report, start);
            return;
        }
    };

    report.record(3, "analytic anchors", analytic_anchors(&desk));

    let overfit_run = train_run(&desk, &RunConfig::desk(), TrainOptions { stop_at_train_bleu: Some(95.0) }, "overfit");
    match &overfit_run {
        Ok(run) => {
            report.record(5, "overfit", overfit(run));
            report.record(2, "loss composition", composition_identity(&desk.dir.join("overfit/metrics.csv")));
            report.record(4, "freeze audit", freeze_audit(&desk, run));
        }
        Err(e) => {
            for (id, name) in [(5, "overfit"), (2, "loss composition"), (4, "freeze audit")] {
                report.record(id, name, Err(e.to_string().into()));
            }
        }
    }

    let budget = (|| -> R<(Vec<Run>, Vec<Run>, Vec<Run>)> {
        let mut imagit = Vec::new();
        let mut text = Vec::new();
        for seed in SEEDS {
            imagit.push(train_run(&desk, &budget_cfg(seed, 20.0, false), TrainOptions::default(), &format!("imagit_{seed}"))?);
            text.push(train_run(&desk, &budget_cfg(seed, 20.0, true), TrainOptions::default(), &format!("text_{seed}"))?);
        }
        let mut lambdas = Vec::new();
        for l1 in [0.0, 5.0] {
            lambdas.push(train_run(&desk, &budget_cfg(SEEDS[0], l1, false), TrainOptions::default(), &format!("lambda1_{l1}"))?);
        }
        Ok((imagit, text, lambdas))
    })();
    match budget {
        Ok((imagit, text, lambdas)) => {
            report.record(6, "degradation direction", degradation(&desk, &imagit, &text, &desk.dir.join("degradation.csv")));
            report.record(7, "grounding probe", grounding(&desk, &imagit[0]));
            let rows = [(0.0, &lambdas[0]), (5.0, &lambdas[1]), (20.0, &imagit[0])];
            report.record(8, "lambda1 ablation", ablation(&desk, &rows, &desk.dir.join("ablation.csv")));
        }
        Err(e) => {
            for (id, name) in [(6, "degradation direction"), (7, "grounding probe"), (8, "lambda1 ablation")] {
                report.record(id, name, Err(e.to_string().into()));
            }
        }
    }
    finish(report, start);
}

fn finish(mut report: Report, start: Instant) {
    report.lines.sort_by_key(|l| l.0);
    println!("\nsummary ({:.0}s):", start.elapsed().as_secs_f64());
    for (id, name, pass, _) in &report.lines {
        println!("  {id:>2} {} {name}", if *pass { "PASS" } else { "FAIL" });
    }
    let failed = report.lines.iter().filter(|l| !l.2).count();
    println!("{} of {} criteria passed", report.lines.len() - failed, report.lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
