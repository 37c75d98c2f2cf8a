use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sgnn_cli::commands::{self, EMBED_FILE, METRICS_FILE, MODEL_FILE, TRACE_FILE};
use sgnn_cli::RunConfig;

const SMALL: [&str; 6] = [
    "--set",
    "dataset.nodes_per_block=40",
    "--set",
    "train.epochs=2",
    "--set",
    "train.dims=[16, 8]",
];

fn sgnn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgnn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> Option<i32> {
    o.status.code()
}

#[test]
fn train_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend(SMALL);
    let o = sgnn(&args, dir.path());
    assert_eq!(code(&o), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [MODEL_FILE, TRACE_FILE, EMBED_FILE, commands::CONFIG_FILE] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let trace = fs::read_to_string(dir.path().join(TRACE_FILE)).unwrap();
    assert!(trace.starts_with("epoch,module,phase,iter,loss,wall_ms\n"));
    // 160 nodes, batch 128 → 2 steps per visit; K·(L·E + 5·(L−1)·E) = 2·(4 + 10)
    assert_eq!(trace.lines().count() - 1, 28);
    let emb = fs::read_to_string(dir.path().join(EMBED_FILE)).unwrap();
    assert_eq!(emb.lines().count(), 160);
    assert_eq!(emb.lines().next().unwrap().split(',').count(), 8);
    // the resolved config reloads to the same run
    let resolved = RunConfig::load(Some(&dir.path().join(commands::CONFIG_FILE)), &[], None).unwrap();
    assert_eq!(resolved.train.dims, vec![16, 8]);
    assert_eq!(resolved.dataset.nodes_per_block, 40);
}

#[test]
fn eval_is_pure_and_reports_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend(SMALL);
    assert_eq!(code(&sgnn(&args, dir.path())), Some(0));
    args[0] = "eval";
    let first = sgnn(&args, dir.path());
    assert_eq!(code(&first), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let a = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let second = sgnn(&args, dir.path());
    assert_eq!(code(&second), Some(0));
    let b = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    for key in ["acc", "nmi", "test_acc", "seeds", "config_hash"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["acc"].as_f64().unwrap() > 0.25);
    assert!(v["test_acc"].is_null());
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn classification_eval_reports_test_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--set", "train.loss=classification"];
    args.extend(SMALL);
    assert_eq!(code(&sgnn(&args, dir.path())), Some(0));
    args[0] = "eval";
    let o = sgnn(&args, dir.path());
    assert_eq!(code(&o), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
    let acc = v["test_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(v["acc"].is_null());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        vec!["train", "--set", "train.nonsense=1"],
        vec!["train", "--set", "train.eta=-1"],
        vec!["train", "--set", "train.prop=gat"],
        vec!["train", "--config", "/nonexistent/run.toml"],
        vec!["bench", "--set", "bench.sizes=[1001]"],
        vec!["theory-check", "--set", "theory.k=30"],
    ] {
        let o = sgnn(&bad, dir.path());
        assert_eq!(code(&o), Some(2), "{bad:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    // nothing was trained
    assert!(!dir.path().join(MODEL_FILE).exists());
}

#[test]
fn classification_without_labels_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        code(&sgnn(&["sbm-gen", "--set", "dataset.nodes_per_block=20"], &data)),
        Some(0)
    );
    fs::remove_file(data.join("labels.txt")).unwrap();
    let dir_arg = format!("dataset.dir=\"{}\"", data.display());
    let out = dir.path().join("run");
    let o = sgnn(
        &["train", "--set", "dataset.source=files", "--set", &dir_arg, "--set", "train.loss=classification"],
        &out,
    );
    assert_eq!(code(&o), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join(TRACE_FILE).exists());
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--set", "train.lr=1e300", "--set", "train.optimizer=\"sgd\""];
    args.extend(SMALL);
    let o = sgnn(&args, dir.path());
    assert_eq!(code(&o), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("epoch") && msg.contains("module"), "{msg}");
}

#[test]
fn sbm_gen_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&sgnn(&["sbm-gen", "--seed", "4", "--set", "dataset.nodes_per_block=30"], &data)), Some(0));
    let dir_arg = format!("dataset.dir=\"{}\"", data.display());
    let from_files = RunConfig::load(None, &["dataset.source=files".into(), dir_arg], Some(4))
        .unwrap()
        .load_data()
        .unwrap();
    let generated = RunConfig::load(None, &["dataset.nodes_per_block=30".into()], Some(4))
        .unwrap()
        .load_data()
        .unwrap();
    assert_eq!(from_files.n(), 120);
    assert_eq!(from_files.graph.nnz(), generated.graph.nnz());
    assert_eq!(from_files.labels, generated.labels);
    assert_eq!(from_files.split, generated.split);
    assert!(from_files.features.max_abs_diff(&generated.features) < 1e-12);
}

#[test]
fn theory_check_passes_on_planted_instances() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgnn(
        &["theory-check", "--set", "theory.trials=12", "--set", "theory.n=24", "--set", "theory.d=10", "--set", "theory.k=4"],
        dir.path(),
    );
    assert_eq!(code(&o), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join(commands::THEORY_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 13);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join(commands::THEORY_SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["violations"], 0);
}

#[test]
fn eta_sweep_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--eta-sweep", "--set", "train.epochs=1"];
    args.extend(&SMALL[..2]);
    args.extend(&SMALL[4..]);
    let o = sgnn(&args, dir.path());
    assert_eq!(code(&o), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join(commands::ETA_SWEEP_FILE)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "eta,final_loss,acc,nmi,test_acc");
    assert_eq!(lines.len(), 13);
    assert!(lines[1].starts_with("0e0,"));
    assert!(lines[12].starts_with("1e5,"));
}

#[test]
fn bench_counts_match_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgnn(&["bench", "--set", "bench.sizes=[200, 400]", "--set", "train.dims=[16, 8]"], dir.path());
    assert_eq!(code(&o), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join(commands::BENCH_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,preproc_ms,updates,ms_per_update"));
    // K = 1, E = ⌈n/128⌉, L = 2, 5 rounds: 7·E
    let updates: Vec<usize> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(updates, vec![14, 28]);
}
