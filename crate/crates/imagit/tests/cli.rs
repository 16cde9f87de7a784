use std::path::Path;
use std::process::{Command, Output};

fn imagit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imagit")).args(args).output().unwrap()
}

fn gen(out: &Path, extra: &[&str]) -> Output {
    let mut a = vec!["gen-data", "--out", out.to_str().unwrap(), "--train", "6", "--dev", "2", "--test", "2"];
    a.extend_from_slice(extra);
    imagit(&a)
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    assert!(gen(&out, &[]).status.success());
    let again = gen(&out, &[]);
    assert!(!again.status.success());
    let msg = String::from_utf8(again.stderr).unwrap();
    assert!(msg.contains("--force"));
    assert_eq!(msg.trim_end().lines().count(), 1);
    assert!(gen(&out, &["--force"]).status.success());
    assert!(out.join("run_manifest.json").exists());
}

#[test]
fn small_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    assert!(gen(Path::new(&p("data")), &[]).status.success());
    std::fs::write(p("c.toml"), "[captioner]\nmax_epochs = 1\n[train]\nmax_steps = 2\n").unwrap();
    assert!(imagit(&["pretrain-captioner", "--data", &p("data"), "--config", &p("c.toml"), "--out", &p("cap")]).status.success());
    let (data, cfg) = (p("data"), p("c.toml"));
    let train = |out: &str, extra: &[&str]| {
        let mut a = vec!["train", "--data", &data, "--config", &cfg, "--out", out];
        a.extend_from_slice(extra);
        imagit(&a)
    };
    let cap = p("cap");
    assert!(train(&p("m"), &["--captioner", &cap]).status.success());
    assert!(!train(&p("m"), &["--captioner", &cap]).status.success());
    assert!(!train(&p("x"), &[]).status.success(), "imagination needs a captioner");
    assert!(train(&p("t"), &["--text-only"]).status.success());
    let metrics = std::fs::read_to_string(dir.path().join("m/metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,l_trans,l_i2t,l_g0,l_g,l_d,lr_translation,lr_gan\n"));
    assert_eq!(metrics.lines().count(), 3);

    std::fs::write(p("in.txt"), "a red circle leftof a blue square\na cyan star below a red star\n").unwrap();
    let out = imagit(&["translate", "--model", &p("m"), "--input", &p("in.txt"), "--deterministic"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);

    for _ in 0..2 {
        assert!(imagit(&["evaluate", "--model", &p("m"), "--data", &p("data"), "--split", "dev", "--out", &p("eval.csv")]).status.success());
    }
    assert_eq!(std::fs::read_to_string(p("eval.csv")).unwrap().lines().count(), 3);
    assert!(imagit(&["evaluate", "--model", &p("m"), "--data", &p("data"), "--out", &p("eval.csv"), "--force"]).status.success());
    assert_eq!(std::fs::read_to_string(p("eval.csv")).unwrap().lines().count(), 2);

    assert!(imagit(&["retrieve", "--model", &p("m"), "--data", &p("data"), "--k", "1,2", "--out", &p("r")]).status.success());
    assert!(!imagit(&["retrieve", "--model", &p("m"), "--data", &p("data"), "--k", "3", "--out", &p("r2")]).status.success());
    assert!(imagit(&["degrade-report", "--imagit", &p("m"), "--text-only", &p("t"), "--data", &p("data"), "--kind", "entity_masking", "--out", &p("d")]).status.success());
    let rep = std::fs::read_to_string(dir.path().join("d/degradation.csv")).unwrap();
    assert!(rep.starts_with("model,kind,fraction,bleu\n"));
    assert_eq!(rep.lines().count(), 11);

    let missing = imagit(&["evaluate", "--model", &p("nope"), "--data", &p("data"), "--out", &p("e2.csv")]);
    assert!(!missing.status.success());
    assert!(String::from_utf8(missing.stderr).unwrap().contains("missing model checkpoint"));
}

#[test]
fn invalid_config_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(gen(&data, &[]).status.success());
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nheads = 3\n").unwrap();
    let out = imagit(&["train", "--data", data.to_str().unwrap(), "--text-only", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("m").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("heads"));
}
