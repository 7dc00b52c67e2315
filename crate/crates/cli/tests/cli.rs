use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use coprompt::corpus::{Dataset, LabelPolicy, TypeVocabulary};
use coprompt::eval::evaluate_datasets;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coprompt"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn coprompt")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, out: &str, seed: &str) {
    ok(
        dir,
        &[
            "synth",
            "--types",
            "6",
            "--examples",
            "60",
            "--dev-examples",
            "30",
            "--swap",
            "0.3",
            "--drop",
            "0.2",
            "--seed",
            seed,
            "--out-dir",
            out,
        ],
    );
}

fn train(dir: &Path, data: &str, out: &str, extra: &[&str]) {
    let train = format!("{data}/train.noisy.jsonl");
    let dev = format!("{data}/dev.jsonl");
    let vocab = format!("{data}/types.txt");
    let mut args = vec![
        "train",
        "--tiny-backbone",
        "--seed",
        "3",
        "--train",
        &train,
        "--dev",
        &dev,
        "--vocab",
        &vocab,
        "--hidden-dim",
        "16",
        "--n-layers",
        "1",
        "--ffn-dim",
        "32",
        "--out-dir",
        out,
    ];
    if !extra.contains(&"--epochs") {
        args.extend_from_slice(&["--epochs", "3"]);
    }
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn label_sets(path: &Path) -> Vec<BTreeSet<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            v["labels"]
                .as_array()
                .unwrap()
                .iter()
                .map(|s| s.as_str().unwrap().to_string())
                .collect()
        })
        .collect()
}

struct Pipeline {
    tmp: TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        synth(tmp.path(), "data", "5");
        train(tmp.path(), "data", "run", &[]);
        Self { tmp }
    }

    fn dir(&self) -> &Path {
        self.tmp.path()
    }

    fn correct(&self, out: &str, extra: &[&str]) -> PathBuf {
        let mut args = vec![
            "correct",
            "--model",
            "run/model.json",
            "--data",
            "data/train.noisy.jsonl",
            "--out-dir",
            out,
        ];
        args.extend_from_slice(extra);
        ok(self.dir(), &args);
        self.dir().join(out)
    }
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn synth_is_seeded() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "a", "7");
    synth(tmp.path(), "b", "7");
    synth(tmp.path(), "c", "8");
    for f in ["types.txt", "train.noisy.jsonl", "train.truth.jsonl", "dev.jsonl"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let a = std::fs::read(tmp.path().join("a/train.noisy.jsonl")).unwrap();
    let c = std::fs::read(tmp.path().join("c/train.noisy.jsonl")).unwrap();
    assert_ne!(a, c);
    let noisy = label_sets(&tmp.path().join("a/train.noisy.jsonl"));
    let truth = label_sets(&tmp.path().join("a/train.truth.jsonl"));
    assert_eq!(noisy.len(), 60);
    assert!(noisy.iter().all(|s| !s.is_empty()));
    assert!(noisy.iter().zip(&truth).any(|(n, t)| n != t));
}

#[test]
fn pipeline_outputs_and_manifests() {
    let p = Pipeline::new();
    let d = p.dir();
    for f in ["model.json", "trace.csv", "manifest.json"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }
    let m = read_json(d.join("run/manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["max_epochs"], 3);
    assert_eq!(m["config"]["hidden_dim"], 16);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
    assert!(m["started_at"].as_str().unwrap() <= m["finished_at"].as_str().unwrap());

    let trace = std::fs::read_to_string(d.join("run/trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,gamma,divergence_rate,dev_macro_f1,dev_micro_f1,train_loss"
    );
    let gammas: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(gammas, vec![1.0, 0.5, 0.25]);

    let c = p.correct("corr", &[]);
    for f in [
        "corrected.jsonl",
        "report.json",
        "summary.txt",
        "delta_histogram.csv",
        "manifest.json",
    ] {
        assert!(c.join(f).is_file(), "{f}");
    }
    let report = read_json(c.join("report.json"));
    assert_eq!(report["n_examples"], 60);

    ok(
        d,
        &[
            "plot",
            "--trace",
            "run/trace.csv",
            "--report",
            "corr/report.json",
            "--out-dir",
            "plots",
        ],
    );
    for f in [
        "divergence.svg",
        "divergence.csv",
        "delta_histogram.svg",
        "delta_histogram.csv",
    ] {
        assert!(d.join("plots").join(f).is_file(), "{f}");
    }
    let svg = std::fs::read_to_string(d.join("plots/divergence.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    let plotted = std::fs::read_to_string(d.join("plots/divergence.csv")).unwrap();
    assert_eq!(plotted.lines().count(), 4);
    let hist_total: usize = std::fs::read_to_string(d.join("plots/delta_histogram.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    let report_total: u64 = report["delta_histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(hist_total as u64, report_total);
}

#[test]
fn manifest_hashes_match_git() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "data", "9");
    let m = read_json(tmp.path().join("data/manifest.json"));
    let Ok(out) = Command::new("git")
        .arg("hash-object")
        .arg("data/types.txt")
        .current_dir(tmp.path())
        .output()
    else {
        eprintln!("git not available; skipping");
        return;
    };
    let git = String::from_utf8(out.stdout).unwrap();
    let rec = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|o| o["role"] == "vocab")
        .unwrap();
    assert_eq!(rec["hash"].as_str().unwrap(), git.trim());
}

#[test]
fn rerun_reproduces_outputs() {
    let p = Pipeline::new();
    let d = p.dir();
    ok(
        d,
        &["rerun", "--manifest", "run/manifest.json", "--out-dir", "again"],
    );
    for f in ["model.json", "trace.csv"] {
        assert_eq!(
            std::fs::read(d.join("run").join(f)).unwrap(),
            std::fs::read(d.join("again").join(f)).unwrap(),
            "{f}"
        );
    }
    let a = read_json(d.join("run/manifest.json"));
    let b = read_json(d.join("again/manifest.json"));
    let hashes = |m: &Value| {
        m["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| o["hash"].clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(hashes(&a), hashes(&b));

    p.correct("corr", &["--epsilon", "0.3"]);
    ok(
        d,
        &["rerun", "--manifest", "corr/manifest.json", "--out-dir", "corr2"],
    );
    assert_eq!(
        std::fs::read(d.join("corr/corrected.jsonl")).unwrap(),
        std::fs::read(d.join("corr2/corrected.jsonl")).unwrap()
    );

    std::fs::write(d.join("data/train.noisy.jsonl"), "").unwrap();
    let out = run(
        d,
        &["rerun", "--manifest", "corr/manifest.json", "--out-dir", "corr3"],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn epsilon_controls_elimination() {
    let p = Pipeline::new();
    let full = p.correct("e10", &["--epsilon", "1.0"]);
    let report = read_json(full.join("report.json"));
    assert_eq!(report["n_eliminated"], 0);
    let ids = |v: &Value| {
        v.as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_u64().unwrap())
            .collect::<BTreeSet<_>>()
    };
    for ex in report["examples"].as_array().unwrap() {
        let candidates: BTreeSet<u64> = ids(&ex["original"])
            .union(&ids(&ex["recalled"]))
            .copied()
            .collect();
        assert_eq!(ids(&ex["final_labels"]), candidates);
    }

    let runs: Vec<(Vec<BTreeSet<String>>, Vec<bool>)> = ["0.1", "0.3", "0.6", "1.0"]
        .iter()
        .map(|e| {
            let dir = p.correct(&format!("eps{e}"), &["--epsilon", e]);
            let floored = read_json(dir.join("report.json"))["examples"]
                .as_array()
                .unwrap()
                .iter()
                .map(|e| e["floored"].as_bool().unwrap())
                .collect();
            (label_sets(&dir.join("corrected.jsonl")), floored)
        })
        .collect();
    for w in runs.windows(2) {
        let ((lo, floored), (hi, _)) = (&w[0], &w[1]);
        for (i, (a, b)) in lo.iter().zip(hi).enumerate() {
            if !floored[i] {
                assert!(a.is_subset(b), "example {i}: {a:?} not within {b:?}");
            }
        }
    }
}

#[test]
fn evaluate_matches_library() {
    let p = Pipeline::new();
    let d = p.dir();
    p.correct("corr", &[]);
    let stdout = ok(
        d,
        &[
            "evaluate",
            "--pred",
            "corr/corrected.jsonl",
            "--gold",
            "data/train.truth.jsonl",
            "--vocab",
            "data/types.txt",
            "--out-dir",
            "ev",
        ],
    );
    for row in ["Acc", "Macro", "Micro"] {
        assert!(
            stdout.lines().any(|l| l.starts_with(row)),
            "{row} row missing:\n{stdout}"
        );
    }
    let vocab = Arc::new(TypeVocabulary::load(d.join("data/types.txt")).unwrap());
    let load = |f: &str| Dataset::load_with(d.join(f), Arc::clone(&vocab), LabelPolicy::AllowEmpty).unwrap();
    let expect = evaluate_datasets(&load("corr/corrected.jsonl"), &load("data/train.truth.jsonl")).unwrap();
    let got = read_json(d.join("ev/metrics.json"));
    for (k, v) in expect.to_flat() {
        assert!((got[k].as_f64().unwrap() - v).abs() < 1e-12, "{k}");
    }
}

#[test]
fn config_file_merges_under_flags() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "data", "5");
    std::fs::write(
        d.join("cfg.toml"),
        "max_epochs = 5\n[train]\nmax_epochs = 2\npatience = 7\n[correct]\nepsilon = 0.4\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "train",
            "--config",
            "cfg.toml",
            "--epochs",
            "1",
            "--train",
            "data/train.noisy.jsonl",
            "--dev",
            "data/dev.jsonl",
            "--vocab",
            "data/types.txt",
            "--hidden-dim",
            "8",
            "--n-layers",
            "1",
            "--out-dir",
            "run",
        ],
    );
    let m = read_json(d.join("run/manifest.json"));
    assert_eq!(m["config"]["max_epochs"], 1);
    assert_eq!(m["config"]["patience"], 7);
    ok(
        d,
        &[
            "correct",
            "--config",
            "cfg.toml",
            "--model",
            "run/model.json",
            "--data",
            "data/train.noisy.jsonl",
            "--out-dir",
            "c",
        ],
    );
    assert_eq!(read_json(d.join("c/report.json"))["config"]["epsilon"], 0.4);
}

#[test]
fn ontonotes_preset_resolves_table_values() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "data", "5");
    train(d, "data", "run", &["--preset", "ontonotes", "--epochs", "1"]);
    let cfg = &read_json(d.join("run/manifest.json"))["config"];
    assert_eq!(cfg["preset"], "ontonotes");
    assert_eq!(cfg["gamma_min"], 0.1);
    assert_eq!(cfg["learning_rate"], 3e-6);
    assert_eq!(cfg["batch_size"], 16);
    assert_eq!(cfg["embedding_dropout"], 0.2);
    assert_eq!(cfg["weight_decay"], 0.01);
    assert_eq!(cfg["grad_clip"], 0.1);
    ok(
        d,
        &[
            "correct",
            "--model",
            "run/model.json",
            "--data",
            "data/train.noisy.jsonl",
            "--out-dir",
            "c",
        ],
    );
    assert_eq!(read_json(d.join("c/report.json"))["config"]["epsilon"], 0.2);
    ok(
        d,
        &[
            "correct",
            "--model",
            "run/model.json",
            "--data",
            "data/train.noisy.jsonl",
            "--source",
            "chatgpt",
            "--out-dir",
            "c2",
        ],
    );
    assert_eq!(read_json(d.join("c2/report.json"))["config"]["epsilon"], 0.3);
}

#[test]
fn baseline_trains_standard_prompt() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "data", "5");
    train(d, "data", "run", &["--baseline", "--epochs", "2"]);
    let trace = std::fs::read_to_string(d.join("run/trace.csv")).unwrap();
    for l in trace.lines().skip(1) {
        assert_eq!(
            l.split(',').nth(2).unwrap(),
            "",
            "baseline has no divergence rate: {l}"
        );
    }
    let ck = read_json(d.join("run/model.json"));
    assert_eq!(ck["model"]["style"], "standard");
    let out = run(
        d,
        &[
            "correct",
            "--model",
            "run/model.json",
            "--data",
            "data/train.noisy.jsonl",
            "--out-dir",
            "c",
        ],
    );
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "data", "5");
    let base = [
        "--train",
        "data/train.noisy.jsonl",
        "--dev",
        "data/dev.jsonl",
        "--vocab",
        "data/types.txt",
    ];

    assert_eq!(exit_code(&run(d, &["--help"])), 0);
    assert_eq!(exit_code(&run(d, &["--version"])), 0);
    assert_eq!(exit_code(&run(d, &["frobnicate"])), 1);
    assert_eq!(
        exit_code(&run(d, &["train", "--train", "data/train.noisy.jsonl"])),
        1
    );

    let mut args = vec!["train", "--gamma-min", "0"];
    args.extend_from_slice(&base);
    let out = run(d, &args);
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma_min"));

    std::fs::write(d.join("bad.toml"), "[train]\nlearning_rat = 0.1\n").unwrap();
    let mut args = vec!["train", "--config", "bad.toml"];
    args.extend_from_slice(&base);
    let out = run(d, &args);
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    let out = run(
        d,
        &[
            "train",
            "--train",
            "nope.jsonl",
            "--dev",
            "data/dev.jsonl",
            "--vocab",
            "data/types.txt",
        ],
    );
    assert_eq!(exit_code(&out), 2);

    std::fs::write(d.join("other.txt"), "/a\n/b\n").unwrap();
    train(d, "data", "run", &["--epochs", "1"]);
    let out = run(
        d,
        &[
            "correct",
            "--model",
            "run/model.json",
            "--data",
            "data/train.noisy.jsonl",
            "--vocab",
            "other.txt",
            "--out-dir",
            "c",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    let out = run(
        d,
        &[
            "correct",
            "--model",
            "run/model.json",
            "--data",
            "data/train.noisy.jsonl",
            "--epsilon",
            "2",
        ],
    );
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));
    assert_eq!(exit_code(&run(d, &["plot"])), 1);
}

#[test]
fn annotate_with_mock_backend() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "data", "5");
    let vocab: Vec<String> = std::fs::read_to_string(d.join("data/types.txt"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let response = format!("{}, {}, /no/such/type", vocab[0], vocab[2]);
    let args = [
        "annotate",
        "--data",
        "data/train.noisy.jsonl",
        "--vocab",
        "data/types.txt",
        "--backend",
        "mock",
        "--mock-response",
        &response,
        "--min-frequency",
        "1",
        "--sample-size",
        "20",
        "--rate-limit",
        "1000",
        "--seed",
        "4",
        "--out-dir",
    ];
    let mut a = args.to_vec();
    a.push("ann");
    ok(d, &a);
    let mut b = args.to_vec();
    b.push("ann2");
    ok(d, &b);
    let expect: BTreeSet<String> = [vocab[0].clone(), vocab[2].clone()].into();
    let labeled = label_sets(&d.join("ann/annotated.jsonl"));
    assert_eq!(labeled.len(), 20);
    assert!(labeled.iter().all(|s| *s == expect));
    let log = std::fs::read_to_string(d.join("ann/annotation_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);
    assert_eq!(
        log,
        std::fs::read_to_string(d.join("ann2/annotation_log.jsonl")).unwrap()
    );

    let out = run(
        d,
        &[
            "annotate",
            "--data",
            "data/train.noisy.jsonl",
            "--vocab",
            "data/types.txt",
            "--backend",
            "mock",
            "--min-frequency",
            "1",
        ],
    );
    assert_eq!(exit_code(&out), 1, "mock backend without a response");
    let out = run(
        d,
        &[
            "annotate",
            "--data",
            "data/train.noisy.jsonl",
            "--vocab",
            "data/types.txt",
            "--backend",
            "mock",
            "--mock-response",
            "x",
            "--min-frequency",
            "1",
            "--sample-size",
            "100000",
            "--out-dir",
            "big",
        ],
    );
    assert_eq!(exit_code(&out), 2, "sample larger than pool");
}
