use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn memtrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memtrace"))
        .args(args)
        .env_remove("MEMTRACE_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = memtrace(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_SYNTH: &str = r#"{
  "n_subjects": 3,
  "trials_per_subject": 12,
  "fs": 500.0,
  "class_band_gains": {
    "forgotten": [1, 1, 1, 1, 1, 1],
    "remembered": [1, 1, 2, 1, 1, 1]
  },
  "seed": 7
}"#;

fn run_config(input: &str, out: &Path) -> String {
    format!(
        r#"{{
  "seed": 7,
  "input": {input},
  "models": ["svm", "mlp", "cnn"],
  "train": {{ "epochs": 2, "learning_rate": 1e-3 }},
  "output_dir": "{}"
}}"#,
        p(out)
    )
}

#[test]
fn synth_writes_one_file_per_subject() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"trials_per_subject": 4, "fs": 250.0, "n_channels": 4}"#,
    )
    .unwrap();
    let out = dir.path().join("cohort");
    ok(&[
        "synth",
        "--spec",
        p(&spec),
        "--subjects",
        "17",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    let epo: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "epo"))
        .collect();
    assert_eq!(epo.len(), 17);
    assert!(out.join("S17.epo").is_file());
    assert!(out.join("S17.meta.json").is_file());
}

#[test]
fn unknown_config_key_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"train": {"learning_rte": 0.001}}"#).unwrap();
    let out = memtrace(&["loso", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));
}

#[test]
fn missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = memtrace(&["loso", "--config", p(&dir.path().join("absent.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = memtrace(&["report", "--results", p(&dir.path().join("nothing"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_seed_env_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, "{}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_memtrace"))
        .args(["loso", "--config", p(&cfg)])
        .env("MEMTRACE_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn staged_run_matches_single_shot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    fs::write(&spec, SMALL_SYNTH).unwrap();

    let single = d.join("single");
    let cfg = d.join("single.json");
    fs::write(
        &cfg,
        run_config(&format!(r#"{{"synth": {SMALL_SYNTH}}}"#), &single),
    )
    .unwrap();
    ok(&["loso", "--config", p(&cfg)]);

    ok(&["synth", "--spec", p(&spec), "--out", p(&d.join("raw"))]);
    ok(&[
        "preprocess",
        "--input",
        p(&d.join("raw")),
        "--out",
        p(&d.join("clean")),
    ]);
    ok(&[
        "features",
        "--input",
        p(&d.join("clean")),
        "--out",
        p(&d.join("feat")),
    ]);
    assert!(d.join("feat/S01.mesh.bin").is_file());
    let staged = d.join("staged");
    let cfg = d.join("staged.json");
    let input = format!(r#"{{"features": "{}"}}"#, p(&d.join("feat")));
    fs::write(&cfg, run_config(&input, &staged)).unwrap();
    ok(&["loso", "--config", p(&cfg)]);

    for f in [
        "report.json",
        "folds.csv",
        "pooled_confusion.json",
        "loss_curves.csv",
    ] {
        let a = fs::read_to_string(single.join(f)).unwrap();
        assert!(
            a == fs::read_to_string(staged.join(f)).unwrap(),
            "{f} differs"
        );
    }

    let from_epochs = d.join("from_epochs");
    let cfg = d.join("epochs.json");
    let input = format!(r#"{{"epochs": "{}"}}"#, p(&d.join("raw")));
    fs::write(&cfg, run_config(&input, &from_epochs)).unwrap();
    ok(&["loso", "--config", p(&cfg)]);
    let a = fs::read_to_string(single.join("report.json")).unwrap();
    assert!(a == fs::read_to_string(from_epochs.join("report.json")).unwrap());
}

#[test]
fn reruns_and_job_counts_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.json");
    fs::write(
        &cfg,
        run_config(&format!(r#"{{"synth": {SMALL_SYNTH}}}"#), &d.join("x")),
    )
    .unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "3")];
    for (name, jobs) in runs {
        ok(&[
            "loso",
            "--config",
            p(&cfg),
            "--out",
            p(&d.join(name)),
            "--jobs",
            jobs,
        ]);
    }
    let read = |run: &str, f: &str| fs::read_to_string(d.join(run).join(f)).unwrap();
    for f in [
        "report.json",
        "folds.csv",
        "summary.txt",
        "pooled_confusion.json",
        "loss_curves.csv",
    ] {
        assert!(read("a", f) == read("b", f), "{f} differs between reruns");
        assert!(read("a", f) == read("c", f), "{f} differs with 3 jobs");
    }
    let text = String::from_utf8(ok(&["report", "--results", p(&d.join("a"))]).stdout).unwrap();
    assert!(text.contains("cnn"));
    let csv =
        String::from_utf8(ok(&["report", "--results", p(&d.join("a")), "--format", "csv"]).stdout)
            .unwrap();
    assert!(csv.starts_with("model,task,fold,subject,accuracy,kappa,tn,fp,fn,tp"));
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.json");
    fs::write(
        &cfg,
        run_config(&format!(r#"{{"synth": {SMALL_SYNTH}}}"#), &d.join("x")),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_memtrace"))
        .args(["loso", "--config", p(&cfg), "--out", p(&d.join("e"))])
        .env("MEMTRACE_SEED", "99")
        .output()
        .unwrap();
    assert!(out.status.success());
    let resolved = fs::read_to_string(d.join("e/resolved_config.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&resolved).unwrap();
    assert_eq!(v["seed"], 99);
    assert_eq!(v["input"]["synth"]["seed"], 99);
}

#[test]
fn best_epoch_and_saved_models() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.json");
    let text = run_config(&format!(r#"{{"synth": {SMALL_SYNTH}}}"#), &d.join("x")).replace(
        r#""output_dir""#,
        r#""eval": {"save_models": true}, "output_dir""#,
    );
    fs::write(&cfg, text).unwrap();
    ok(&["loso", "--config", p(&cfg), "--best-epoch", "--rebalance"]);
    let report = fs::read_to_string(d.join("x/report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    let mlp = &v["reports"][1];
    assert_eq!(mlp["model"], "mlp");
    assert!(mlp["folds"][0]["selected_epoch"].is_u64());
    for m in ["svm", "mlp", "cnn"] {
        assert!(d.join(format!("x/models/{m}_S01.bin")).is_file(), "{m}");
    }
    let model = memtrace::nn::checkpoint::load(&d.join("x/models/cnn_S02.bin")).unwrap();
    assert_eq!(model.loss_curve.len(), 2);
    let svm = memtrace::svm::SvmModel::load(&d.join("x/models/svm_S03.bin")).unwrap();
    assert_eq!(svm.dim(), 360);
}
