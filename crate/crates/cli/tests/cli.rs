//! End-to-end runs of the `ndx` binary on small configurations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndx_cli::selfcheck::OPS;
use ndx_core::train::Checkpoint;

const SMALL: &str = "
corpus.stage1_negatives = 5
corpus.stage1_positives = 5
corpus.stage2_negatives = 5
corpus.stage2_positives = 5
stfe.d = 16
enc.layers = 1
enc.heads = 2
stage1.batch = 4
stage2.batch = 4
stage2.epochs = 2
";

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new(extra: &str) -> Workspace {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("run.cfg");
        fs::write(&config, format!("{SMALL}{extra}")).unwrap();
        Workspace {
            _dir: dir,
            root,
            config,
        }
    }

    fn out(&self) -> PathBuf {
        self.root.join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ndx"));
        cmd.arg("--config").arg(&self.config).arg("--out").arg(self.out());
        cmd.args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Every file under `dir` with its contents.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (ta, tb) = (tree(a), tree(b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    let differ: Vec<&PathBuf> = ta.keys().filter(|k| ta[*k] != tb[*k]).collect();
    assert!(differ.is_empty(), "files differ: {differ:?}");
}

fn parse_report(text: &str) -> BTreeMap<String, f64> {
    text.lines()
        .map(|l| {
            let (k, v) = l.split_once('\t').unwrap_or_else(|| panic!("not name\\tvalue: {l:?}"));
            (
                k.to_string(),
                v.parse::<f64>().unwrap_or_else(|_| panic!("not a float: {l:?}")),
            )
        })
        .collect()
}

#[test]
fn synth_is_reproducible() {
    let a = Workspace::new("");
    let b = Workspace::new("");
    let text = a.ok(&["--seed", "7", "synth"]);
    b.ok(&["--seed", "7", "synth"]);
    assert!(
        text.contains("stage1: 10 recordings (train 6, val 2, test 2)"),
        "{text}"
    );
    assert!(tree(&a.out()).keys().any(|p| p.ends_with("manifest.tsv")));
    assert_same_tree(&a.out(), &b.out());
    let other = Workspace::new("");
    other.ok(&["--seed", "8", "synth"]);
    assert!(tree(&a.out()) != tree(&other.out()));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let w = Workspace::new("");
    let blocker = w.root.join("file");
    fs::write(&blocker, b"x").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ndx"))
        .arg("--config")
        .arg(&w.config)
        .arg("--out")
        .arg(blocker.join("out"))
        .arg("synth")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("ndx: "));
}

#[test]
fn usage_errors_exit_2() {
    let w = Workspace::new("");
    assert_eq!(code(&w.run(&["train", "--stage", "2", "--policy", "addition"])), 2);
    assert_eq!(code(&w.run(&["train", "--stage", "2", "--policy", "reuse"])), 2);
    assert_eq!(code(&w.run(&["train", "--stage", "3"])), 2);
    assert_eq!(code(&w.run(&["train", "--stage", "1", "--policy", "none"])), 2);
    assert_eq!(code(&w.run(&["frobnicate"])), 2);
    let bad = Workspace::new("stage1.lrr = 1\n");
    assert_eq!(code(&bad.run(&["synth"])), 2);
    assert_eq!(code(&w.run(&["eval", "--ckpt", "missing.ndxc"])), 3);
}

#[test]
fn staged_training_writes_checkpoints_and_reports() {
    let w = Workspace::new("");
    w.ok(&["synth"]);
    let s1_text = w.ok(&["train", "--stage", "1"]);
    let s1 = parse_report(&s1_text);
    assert_eq!((s1["stage"], s1["lambda_f"]), (1.0, 0.0));
    let ck1 = Checkpoint::load(&w.out().join("stage1.ndxc")).unwrap();
    assert_eq!(ck1.stage().unwrap(), 1);
    assert_eq!(ck1.lambda_f().unwrap(), 0.0);
    assert!(ck1.merge_log().unwrap().values().all(|v| v.is_empty()));
    assert_eq!(fs::read_to_string(w.out().join("stage1_metrics.tsv")).unwrap(), s1_text);

    let from = w.out().join("stage1.ndxc");
    let from = from.to_str().unwrap();
    let s2_text = w.ok(&["train", "--stage", "2", "--from", from]);
    let s2 = parse_report(&s2_text);
    assert_eq!((s2["stage"], s2["lambda_f"]), (2.0, 1.0));
    assert!(s2.contains_key("selected_epoch") && s2.contains_key("test_roc_auc"));
    let ck2 = Checkpoint::load(&w.out().join("stage2.ndxc")).unwrap();
    assert_eq!(ck2.lambda_f().unwrap(), 1.0);
    let log = ck2.merge_log().unwrap();
    assert!(!log.is_empty() && log.values().all(|v| v.len() == 1 && v[0].stage == "stage1"));

    // Saved-then-loaded checkpoints reproduce the training-time numbers.
    let ckpt = w.out().join("stage2.ndxc");
    let val = parse_report(&w.ok(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--split", "val"]));
    let test = parse_report(&w.ok(&["eval", "--ckpt", ckpt.to_str().unwrap()]));
    for m in ["accuracy", "roc_auc", "pr_auc"] {
        assert_eq!(val[m].to_bits(), s2[&format!("val_{m}")].to_bits(), "{m}");
        assert_eq!(test[m].to_bits(), s2[&format!("test_{m}")].to_bits(), "{m}");
    }

    // Stage-2 checkpoints cannot seed another stage 2.
    let ck2_path = ckpt.to_str().unwrap();
    assert_eq!(code(&w.run(&["train", "--stage", "2", "--from", ck2_path])), 1);
}

#[test]
fn reruns_are_bit_identical() {
    let a = Workspace::new("");
    let b = Workspace::new("");
    for w in [&a, &b] {
        w.ok(&["synth"]);
        w.ok(&["train", "--stage", "1"]);
        w.ok(&["train", "--stage", "2", "--policy", "none"]);
    }
    assert_same_tree(&a.out(), &b.out());
    // A rerun in place overwrites with identical bytes.
    a.ok(&["train", "--stage", "1"]);
    assert_same_tree(&a.out(), &b.out());
}

#[test]
fn single_class_split_is_a_warning() {
    // Three positives split 2/1/0, so the stage-1 test split holds negatives only.
    let w = Workspace::new("corpus.stage1_positives = 3\n");
    w.ok(&["synth"]);
    w.ok(&["train", "--stage", "1"]);
    let o = w.run(&["eval", "--ckpt", w.out().join("stage1.ndxc").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("single class"));
    let r = parse_report(&String::from_utf8(o.stdout).unwrap());
    assert!(r["accuracy"].is_finite() && r["roc_auc"].is_nan() && r["pr_auc"].is_nan());
}

#[test]
fn ablation_table_lists_configured_rows() {
    let w = Workspace::new("ablation.seeds = 1\nablation.rows = 9, 7, 2\nstage2.epochs = 1\n");
    let text = w.ok(&["ablation"]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let rows: Vec<&str> = lines[1..].iter().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(rows, ["2", "7", "9"]);
    assert_eq!(fs::read_to_string(w.out().join("ablation.tsv")).unwrap(), text);
}

#[test]
fn selfcheck_passes_and_names_planted_faults() {
    let w = Workspace::new("");
    let text = w.ok(&["selfcheck"]);
    assert_eq!(text.lines().filter(|l| l.contains("\tpass\t")).count(), 4, "{text}");
    for op in OPS {
        let o = w.run(&["selfcheck", "--plant-fault", op]);
        assert_eq!(code(&o), 1, "{op}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(&format!("op {op} wrong")), "{op}: {err}");
    }
    assert_eq!(code(&w.run(&["selfcheck", "--plant-fault", "softmax"])), 2);
}
