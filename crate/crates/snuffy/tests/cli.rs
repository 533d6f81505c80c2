use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use snuffy::config::RunConfig;
use snuffy::run::RunManifest;

const BIN: &str = env!("CARGO_BIN_EXE_snuffy");

fn snuffy(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SNUFFY_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn synth_csv(out: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--name", name];
    args.extend_from_slice(extra);
    let o = snuffy(out, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join(name).join("data.csv")
}

#[test]
fn verify_defaults_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let o = snuffy(tmp.path(), &["verify"]);
    assert_eq!(code(&o), 0);
    let report = json(tmp.path().join("verify/verify.json"));
    assert_eq!(report["n"], 9000);
    assert_eq!(report["all_ok"], true);
    assert!(report["report"]["coverage"].as_u64().unwrap() >= 4500);
}

#[test]
fn verify_full_and_diagonal() {
    let tmp = tempfile::tempdir().unwrap();
    let full = snuffy(
        tmp.path(),
        &[
            "verify",
            "--n",
            "40",
            "--lambda-top",
            "40",
            "--lambda-r",
            "0",
            "--layers",
            "1",
            "--name",
            "full",
        ],
    );
    assert_eq!(code(&full), 0);
    let diag = snuffy(
        tmp.path(),
        &[
            "verify",
            "--n",
            "40",
            "--lambda-top",
            "0",
            "--lambda-r",
            "0",
            "--layers",
            "1",
            "--name",
            "diag",
        ],
    );
    assert_eq!(code(&diag), 1);
    let report = json(tmp.path().join("diag/verify.json"));
    assert_eq!(report["report"]["self_loops_ok"], true);
    assert_eq!(report["report"]["strongly_connected_ok"], false);
}

#[test]
fn verify_small_uses_exact_search() {
    let tmp = tempfile::tempdir().unwrap();
    let o = snuffy(
        tmp.path(),
        &["verify", "--n", "9", "--lambda-top", "1", "--lambda-r", "2"],
    );
    assert_eq!(code(&o), 0);
    let report = json(tmp.path().join("verify/verify.json"));
    assert_eq!(report["report"]["hamiltonian_method"], "exact-search");
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[verify]\nnodes = 3\n").unwrap();
    let o = snuffy(tmp.path(), &["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nodes"));
    assert_eq!(
        code(&snuffy(tmp.path(), &["verify", "--layers", "many"])),
        2
    );
    assert_eq!(
        code(&snuffy(
            tmp.path(),
            &["verify", "--n", "5", "--lambda-r", "9"]
        )),
        2
    );
    assert_eq!(code(&snuffy(tmp.path(), &["frobnicate"])), 2);
}

#[test]
fn simulate_trivial_and_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let o = snuffy(
        tmp.path(),
        &[
            "simulate",
            "--n",
            "2",
            "--lambda-top",
            "0",
            "--lambda-r",
            "1",
            "--trials",
            "50",
        ],
    );
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(tmp.path().join("simulate/trials.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("trial,L"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r.ends_with(",1")));

    let o = snuffy(
        tmp.path(),
        &[
            "simulate",
            "--n",
            "300",
            "--lambda-top",
            "5",
            "--lambda-r",
            "20",
            "--trials",
            "20",
            "--grid-n",
            "100,200,300",
            "--grid-lambda-r",
            "5,10",
            "--grid-trials",
            "10",
            "--name",
            "grid",
        ],
    );
    assert_eq!(code(&o), 0);
    let grid = fs::read_to_string(tmp.path().join("grid/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 3 * 2);
}

#[test]
fn simulate_infeasible_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = snuffy(
        tmp.path(),
        &[
            "simulate",
            "--n",
            "10",
            "--lambda-top",
            "0",
            "--lambda-r",
            "0",
        ],
    );
    assert_eq!(code(&o), 2);
    let o = snuffy(
        tmp.path(),
        &[
            "simulate",
            "--n",
            "10",
            "--lambda-top",
            "0",
            "--lambda-r",
            "11",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn summaries_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--n",
        "500",
        "--lambda-top",
        "10",
        "--lambda-r",
        "30",
        "--trials",
        "300",
        "--seed",
        "4",
    ];
    let mut a = args.to_vec();
    a.extend(["--name", "a"]);
    let mut b = args.to_vec();
    b.extend(["--name", "b"]);
    assert_eq!(code(&snuffy(tmp.path(), &a)), 0);
    assert_eq!(code(&snuffy(tmp.path(), &b)), 0);
    let read = |d: &str| fs::read(tmp.path().join(d).join("summary.json")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn run_directory_contents() {
    let tmp = tempfile::tempdir().unwrap();
    let o = snuffy(
        tmp.path(),
        &[
            "simulate",
            "--n",
            "100",
            "--lambda-r",
            "10",
            "--lambda-top",
            "2",
            "--trials",
            "5",
        ],
    );
    assert_eq!(code(&o), 0);
    let run = tmp.path().join("simulate");
    let version = fs::read_to_string(run.join("VERSION")).unwrap();
    assert!(version.starts_with(env!("CARGO_PKG_VERSION")));
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "simulate");
    let listed: Vec<&str> = manifest.outputs.iter().map(|e| e.path.as_str()).collect();
    assert_eq!(
        listed,
        ["VERSION", "config.toml", "summary.json", "trials.csv"]
    );
    for e in &manifest.outputs {
        assert_eq!(fs::metadata(run.join(&e.path)).unwrap().len(), e.bytes);
    }
    let cfg = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(cfg.simulate.n, 100);
    assert_eq!(cfg.run.command.as_deref(), Some("simulate"));
    assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "[run]\nseed = 3\n\n[simulate]\nn = 60\nlambda_top = 0\nlambda_r = 6\ntrials = 5\n",
    )
    .unwrap();
    let o = snuffy(
        tmp.path(),
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--trials",
            "7",
        ],
    );
    assert_eq!(code(&o), 0);
    let summary = json(tmp.path().join("simulate/summary.json"));
    assert_eq!(summary["trials"], 7);
    assert_eq!(summary["n"], 60);
    assert_eq!(summary["seed"], 3);
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args([
            "simulate",
            "--n",
            "20",
            "--lambda-top",
            "0",
            "--lambda-r",
            "4",
            "--trials",
            "3",
        ])
        .env("SNUFFY_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("simulate/summary.json").is_file());
}

#[test]
fn train_then_eval_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_csv(
        tmp.path(),
        "data",
        &[
            "--n-bags", "30", "--k-min", "4", "--k-max", "8", "--dim", "4",
        ],
    );
    let data = data.to_str().unwrap();
    let o = snuffy(
        tmp.path(),
        &[
            "train",
            "--data",
            data,
            "--epochs",
            "5",
            "--lambda-top",
            "2",
            "--lambda-r",
            "2",
            "--layers",
            "1",
            "--lr",
            "1e-3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = tmp.path().join("train");
    for f in [
        "model.json",
        "model.bin",
        "history.csv",
        "summary.json",
        "manifest.json",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 6);

    let o = snuffy(
        tmp.path(),
        &[
            "eval",
            "--data",
            data,
            "--checkpoint",
            run.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(tmp.path().join("eval/eval.json"));
    assert_eq!(report["n_bags"], 30);
    let bags = json(tmp.path().join("eval/bags.json"));
    let first = &bags[0];
    assert!(first["top_set"].as_array().unwrap().len() <= 2);
    let p = first["bag_prob"].as_f64().unwrap();
    let avg = 0.5
        * (first["max_branch_prob"].as_f64().unwrap()
            + first["attn_branch_prob"].as_f64().unwrap());
    assert!((p - avg).abs() < 1e-15);
}

#[test]
fn eval_untrained_is_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_csv(
        tmp.path(),
        "data",
        &[
            "--n-bags",
            "200",
            "--k-min",
            "10",
            "--k-max",
            "20",
            "--dim",
            "6",
            "--witness-rate",
            "0.05",
        ],
    );
    let o = snuffy(
        tmp.path(),
        &["eval", "--data", data.to_str().unwrap(), "--seed", "1"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let auc = json(tmp.path().join("eval/eval.json"))["auc"]
        .as_f64()
        .unwrap();
    assert!((0.3..=0.7).contains(&auc), "auc {auc}");
}

#[test]
fn gradcheck_default_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = snuffy(tmp.path(), &["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(tmp.path().join("gradcheck/gradcheck.json"));
    assert!(report["failing"].as_array().unwrap().is_empty());
    assert!(report["max_rel_error"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn gradcheck_impossible_tolerance_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = snuffy(
        tmp.path(),
        &["gradcheck", "--models", "1", "--tolerance", "1e-300"],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn cv_on_separable_data_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_csv(
        tmp.path(),
        "sep",
        &[
            "--n-bags",
            "40",
            "--k-min",
            "3",
            "--k-max",
            "8",
            "--dim",
            "4",
            "--witness-rate",
            "1",
            "--separation",
            "8",
        ],
    );
    let o = snuffy(
        tmp.path(),
        &[
            "cv",
            "--data",
            data.to_str().unwrap(),
            "--k",
            "5",
            "--runs",
            "2",
            "--epochs",
            "30",
            "--lr",
            "1e-2",
            "--lambda-top",
            "2",
            "--lambda-r",
            "2",
            "--layers",
            "1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = tmp.path().join("cv");
    let summary = json(run.join("summary.json"));
    for m in summary["models"].as_array().unwrap() {
        assert_eq!(m["acc"]["mean"], 1.0, "{}", m["model"]);
        assert_eq!(m["acc"]["count"], 10);
    }
    let records = fs::read_to_string(run.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 5 * 2 * 3);
    let jobs = fs::read_dir(run.join("folds")).unwrap().count();
    assert_eq!(jobs, 30);
}

#[test]
fn missing_dataset_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    for cmd in ["train", "cv", "eval"] {
        let o = snuffy(tmp.path(), &[cmd, "--data", missing.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{cmd}");
    }
    assert_eq!(code(&snuffy(tmp.path(), &["train"])), 2);
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_csv(
        tmp.path(),
        "data",
        &[
            "--n-bags", "10", "--k-min", "3", "--k-max", "5", "--dim", "3",
        ],
    );
    let o = snuffy(
        tmp.path(),
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--model",
            "mean-pool",
            "--lr",
            "1e308",
            "--epochs",
            "5",
        ],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_embeddings_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let o = snuffy(
        tmp.path(),
        &[
            "synth",
            "--embeddings",
            "--n-bags",
            "4",
            "--k-min",
            "2",
            "--k-max",
            "3",
        ],
    );
    assert_eq!(code(&o), 0);
    let dir = tmp.path().join("synth/embeddings");
    let ds = snuffy::dataio::load_embeddings_dir(&dir).unwrap();
    assert_eq!(ds.len(), 4);
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("synth/manifest.json")).unwrap())
            .unwrap();
    assert!(manifest
        .outputs
        .iter()
        .any(|e| e.path == "embeddings/labels.json"));
}
