//! `snuffy` experiment runner.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
//! 3 numeric failure (non-finite values, divergence).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use snuffy_core::data::{Dataset, Normalizer};
use snuffy_core::patterns::{
    build_snuffy_patterns, coverage_threshold, verify_universal, ConcentrationParams, PatternSet,
};
use snuffy_core::pooling::{
    eval_bag_seed, snuffy_forward, PoolKind, PoolingBaseline, RandomSource, SnuffyHyper,
    SnuffyModel,
};
use snuffy_core::rng::{derive_seed, stream};
use snuffy_core::training::{
    gradient_check, predict_dataset, report_from_predictions, train, GradCheckReport,
};
use snuffy_core::Matrix;

use snuffy::config::{LayerSpec, RunConfig, SynthFormat};
use snuffy::dataio::{load_dataset, save_embeddings_dir, save_mil_csv};
use snuffy::experiments::{holdout_split, layer_grid, run_cv, simulate_parallel};
use snuffy::formats::{
    write_cv_records_csv, write_cv_table_csv, write_grid_csv, write_history_csv, write_json,
    write_trials_csv, BagReport, PatternDoc, SimulationSummary,
};
use snuffy::model::{load_checkpoint, save_checkpoint, AnyModel, Checkpoint, ModelKind};
use snuffy::run::RunDir;

const OUT_ENV: &str = "SNUFFY_OUT";
const DEFAULT_OUT: &str = "runs";
const CHECKPOINT_STEM: &str = "model";

#[derive(Parser, Debug)]
#[command(name = "snuffy", version = snuffy::run::VERSION, about = "Sparse-transformer MIL pooling experiments")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; the run directory is `<out>/<name>`.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Run directory name (default: the subcommand).
    #[arg(long, global = true)]
    name: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build Snuffy patterns and check the universal-approximation conditions.
    Verify(VerifyArgs),
    /// Monte Carlo layer-count concentration and the (n, λ_r) layer grid.
    Simulate(SimulateArgs),
    /// Train one model and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or an untrained model) on a dataset.
    Eval(EvalArgs),
    /// Compare exact gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic MIL dataset.
    Synth(SynthArgs),
    /// Stratified k-fold × runs cross-validation of several models.
    Cv(CvArgs),
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda_top: Option<usize>,
    #[arg(long)]
    lambda_r: Option<usize>,
    /// `auto` or a layer count.
    #[arg(long)]
    layers: Option<LayerSpec>,
    #[arg(long)]
    max_layers: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda_top: Option<usize>,
    #[arg(long)]
    lambda_r: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Tail multipliers, comma separated.
    #[arg(long, value_delimiter = ',')]
    c: Option<Vec<f64>>,
    #[arg(long)]
    coverage_target: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    grid_n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    grid_lambda_r: Option<Vec<usize>>,
    #[arg(long)]
    grid_trials: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lambda_top: Option<usize>,
    #[arg(long)]
    lambda_r: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Skip z-scoring of features.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// MIL CSV file or embedding directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// snuffy, mean-pool or max-pool.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[command(flatten)]
    common: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory holding `model.json` and `model.bin`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Model evaluated when no checkpoint is given.
    #[arg(long)]
    model: Option<ModelKind>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    models: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    bag_size: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n_bags: Option<usize>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    witness_rate: Option<f64>,
    #[arg(long)]
    separation: Option<f64>,
    /// Write an embedding directory instead of a CSV file.
    #[arg(long)]
    embeddings: bool,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated model list.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    #[command(flatten)]
    common: ModelArgs,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

impl From<snuffy::Error> for Failure {
    fn from(e: snuffy::Error) -> Self {
        let code = if e.is_numeric() { 3 } else { 2 };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<snuffy_core::Error> for Failure {
    fn from(e: snuffy_core::Error) -> Self {
        snuffy::Error::from(e).into()
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn apply_model_args(cfg: &mut RunConfig, a: &ModelArgs) {
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.lr, a.lr);
    set(&mut t.weight_decay, a.weight_decay);
    set(&mut t.patience, a.patience);
    set(&mut t.lambda_top, a.lambda_top);
    set(&mut t.lambda_r, a.lambda_r);
    set(&mut t.layers, a.layers);
    set(&mut t.heads, a.heads);
    if a.no_normalize {
        cfg.data.normalize = false;
        cfg.cv.normalize = false;
    }
}

/// Effective configuration: file, then flags. The run seed is propagated to
/// every section that carries its own seed.
fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.run.seed, cli.seed);
    if cli.out.is_some() {
        cfg.run.out_dir = cli.out.clone();
    }
    if cli.name.is_some() {
        cfg.run.name = cli.name.clone();
    }
    match &cli.command {
        Command::Verify(a) => {
            let v = &mut cfg.verify;
            set(&mut v.n, a.n);
            set(&mut v.lambda_top, a.lambda_top);
            set(&mut v.lambda_r, a.lambda_r);
            set(&mut v.layers, a.layers);
            set(&mut v.max_layers, a.max_layers);
        }
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            set(&mut s.n, a.n);
            set(&mut s.lambda_top, a.lambda_top);
            set(&mut s.lambda_r, a.lambda_r);
            set(&mut s.trials, a.trials);
            set(&mut s.c, a.c.clone());
            if a.coverage_target.is_some() {
                s.coverage_target = a.coverage_target;
            }
            set(&mut s.grid_n, a.grid_n.clone());
            set(&mut s.grid_lambda_r, a.grid_lambda_r.clone());
            set(&mut s.grid_trials, a.grid_trials);
        }
        Command::Train(a) => {
            if a.data.is_some() {
                cfg.data.path = a.data.clone();
            }
            set(&mut cfg.run.model, a.model);
            set(&mut cfg.data.val_frac, a.val_frac);
            apply_model_args(&mut cfg, &a.common);
        }
        Command::Eval(a) => {
            if a.data.is_some() {
                cfg.data.eval_path = a.data.clone();
            }
            if a.checkpoint.is_some() {
                cfg.eval.checkpoint = a.checkpoint.clone();
            }
            set(&mut cfg.run.model, a.model);
        }
        Command::Gradcheck(a) => {
            let g = &mut cfg.gradcheck;
            set(&mut g.models, a.models);
            set(&mut g.dim, a.dim);
            set(&mut g.bag_size, a.bag_size);
            set(&mut g.tolerance, a.tolerance);
        }
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.n_bags, a.n_bags);
            set(&mut s.k_min, a.k_min);
            set(&mut s.k_max, a.k_max);
            set(&mut s.dim, a.dim);
            set(&mut s.witness_rate, a.witness_rate);
            set(&mut s.separation, a.separation);
            if a.embeddings {
                s.format = SynthFormat::Embeddings;
            }
        }
        Command::Cv(a) => {
            if a.data.is_some() {
                cfg.data.path = a.data.clone();
            }
            set(&mut cfg.cv.k, a.k);
            set(&mut cfg.cv.runs, a.runs);
            set(&mut cfg.cv.models, a.models.clone());
            apply_model_args(&mut cfg, &a.common);
        }
    }
    cfg.train.seed = cfg.run.seed;
    cfg.cv.seed = cfg.run.seed;
    cfg.run.command = Some(command_name(&cli.command).into());
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Verify(_) => "verify",
        Command::Simulate(_) => "simulate",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Gradcheck(_) => "gradcheck",
        Command::Synth(_) => "synth",
        Command::Cv(_) => "cv",
    }
}

fn open_run(cfg: &RunConfig) -> Result<RunDir, Failure> {
    let command = cfg.run.command.clone().unwrap_or_default();
    let root = cfg
        .run
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let name = cfg.run.name.clone().unwrap_or_else(|| command.clone());
    Ok(RunDir::create(&root.join(name), &command, cfg)?)
}

fn load_required(path: Option<&Path>, what: &str) -> Result<Dataset, Failure> {
    let path = path.ok_or_else(|| {
        Failure::usage(anyhow::anyhow!(
            "no {what} dataset given (use --data or [data] path)"
        ))
    })?;
    if !path.exists() {
        return Err(Failure::usage(anyhow::anyhow!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    Ok(load_dataset(path)?)
}

/// Patterns for `verify`; in auto mode layers are added until the coverage
/// reaches `⌈(n−1)/2⌉`, `max_layers` is hit, or more layers cannot help.
fn verify_patterns(cfg: &RunConfig) -> Result<PatternSet, Failure> {
    let v = &cfg.verify;
    if v.n == 0 {
        return Err(Failure::usage(anyhow::anyhow!("n must be at least 1")));
    }
    let top: Vec<usize> = match &v.top_set {
        Some(t) => t.clone(),
        None => (0..v.lambda_top.min(v.n)).collect(),
    };
    let build = |layers: usize| build_snuffy_patterns(v.n, &top, v.lambda_r, layers, cfg.run.seed);
    match v.layers {
        LayerSpec::Count(l) => Ok(build(l)?),
        LayerSpec::Auto(_) => {
            if v.max_layers == 0 {
                return Err(Failure::usage(anyhow::anyhow!(
                    "max_layers must be positive"
                )));
            }
            let mut layers = 1;
            let mut ps = build(layers)?;
            while ps.coverage() < coverage_threshold(v.n) && layers < v.max_layers && v.lambda_r > 0
            {
                layers += 1;
                ps = build(layers)?;
            }
            Ok(ps)
        }
    }
}

fn cmd_verify(cfg: &RunConfig) -> CmdResult {
    let ps = verify_patterns(cfg)?;
    let report = verify_universal(&ps);
    let mut run = open_run(cfg)?;
    let doc = serde_json::json!({
        "n": ps.n(),
        "L": ps.num_layers(),
        "lambda_top": ps.top_set().len(),
        "lambda_r": cfg.verify.lambda_r,
        "coverage_threshold": coverage_threshold(ps.n()),
        "report": report,
        "all_ok": report.all_ok(),
    });
    let report_path = run.path("verify.json");
    write_json(&report_path, &doc)?;
    let patterns_path = run.path("patterns.json");
    write_json(&patterns_path, &PatternDoc::from(&ps))?;
    run.record(report_path);
    run.record(patterns_path);
    run.finish()?;
    println!(
        "verify: n={} L={} coverage={} self_loops={} hamiltonian={} strongly_connected={}",
        report.n,
        ps.num_layers(),
        report.coverage,
        report.self_loops_ok,
        report.hamiltonian_ok,
        report.strongly_connected_ok
    );
    Ok(if report.all_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_simulate(cfg: &RunConfig) -> CmdResult {
    let s = &cfg.simulate;
    let mut params =
        ConcentrationParams::new(s.n, s.lambda_top, s.lambda_r).with_count_top(s.count_top);
    if let Some(t) = s.coverage_target {
        params = params.with_target(t);
    }
    params.validate()?;
    if s.grid_n.is_empty() != s.grid_lambda_r.is_empty() {
        return Err(Failure::usage(anyhow::anyhow!(
            "grid_n and grid_lambda_r must both be set or both be empty"
        )));
    }
    let stats = simulate_parallel(&params, s.trials, &s.c, cfg.run.seed)?;
    let grid = if s.grid_n.is_empty() {
        None
    } else {
        Some(layer_grid(
            &s.grid_n,
            &s.grid_lambda_r,
            s.lambda_top,
            s.grid_trials,
            cfg.run.seed,
        )?)
    };
    let mut run = open_run(cfg)?;
    let trials_path = run.path("trials.csv");
    write_trials_csv(&trials_path, &stats.samples)?;
    run.record(trials_path);
    let summary_path = run.path("summary.json");
    write_json(&summary_path, &SimulationSummary::new(&stats, cfg.run.seed))?;
    run.record(summary_path);
    if let Some(rows) = &grid {
        let grid_path = run.path("grid.csv");
        write_grid_csv(&grid_path, rows)?;
        run.record(grid_path);
    }
    run.finish()?;
    println!(
        "simulate: trials={} mean L={:.4} std={:.4} center={:.4}",
        stats.samples.len(),
        stats.mean,
        stats.std,
        stats.center
    );
    Ok(ExitCode::SUCCESS)
}

fn bag_reports(model: &AnyModel, ds: &Dataset, eval_seed: u64) -> Result<Vec<BagReport>, Failure> {
    ds.bags
        .iter()
        .map(|b| {
            let seed = eval_bag_seed(eval_seed, &b.id);
            Ok(match model {
                AnyModel::Snuffy(m) => {
                    let out = snuffy_forward(&b.features, m, &RandomSource::Seeded(seed))?;
                    BagReport::from_output(&b.id, b.label, &out)
                }
                AnyModel::Baseline(_) => {
                    let p = snuffy_core::training::MilModel::predict(model, &b.features, seed)?;
                    BagReport {
                        bag_id: b.id.clone(),
                        label: b.label,
                        bag_prob: p.bag_prob,
                        max_branch_prob: None,
                        attn_branch_prob: None,
                        instance_probs: p.instance_probs,
                        top_set: None,
                    }
                }
            })
        })
        .collect()
}

fn cmd_train(cfg: &RunConfig) -> CmdResult {
    cfg.train.validate()?;
    let ds = load_required(cfg.data.path.as_deref(), "training")?;
    let (train_idx, val_idx) = holdout_split(&ds.labels(), cfg.data.val_frac, cfg.run.seed)?;
    let mut train_set = ds.subset(&train_idx);
    let mut val_set = ds.subset(&val_idx);
    let normalizer = if cfg.data.normalize {
        let n = Normalizer::fit(&train_set.bags)?;
        train_set = n.apply(&train_set);
        val_set = n.apply(&val_set);
        Some(n)
    } else {
        None
    };
    let model = AnyModel::init(cfg.run.model, &cfg.train, ds.feature_dim, cfg.run.seed)?;
    let (model, history) = train(model, &train_set, &val_set, &cfg.train)?;
    let eval_seed = derive_seed(cfg.run.seed, &[0xE7A1]);
    let train_report =
        report_from_predictions(&train_set, &predict_dataset(&model, &train_set, eval_seed)?)?;
    let val_report = if val_set.is_empty() {
        None
    } else {
        Some(report_from_predictions(
            &val_set,
            &predict_dataset(&model, &val_set, eval_seed)?,
        )?)
    };

    let mut run = open_run(cfg)?;
    let ck = Checkpoint { model, normalizer };
    run.record_all(save_checkpoint(run.root(), CHECKPOINT_STEM, &ck)?);
    let history_path = run.path("history.csv");
    write_history_csv(&history_path, &history)?;
    run.record(history_path);
    let summary_path = run.path("summary.json");
    write_json(
        &summary_path,
        &serde_json::json!({
            "model": cfg.run.model,
            "dataset": ds.name,
            "n_train": train_set.len(),
            "n_val": val_set.len(),
            "epochs_run": history.epochs.len(),
            "best_epoch": history.best_epoch,
            "parameters": snuffy_core::training::Parameterized::num_parameters(&ck.model),
            "train": train_report,
            "val": val_report,
        }),
    )?;
    run.record(summary_path);
    run.finish()?;
    println!(
        "train: {} epochs, best epoch {}, train acc {:.4}",
        history.epochs.len(),
        history.best_epoch,
        train_report.acc
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(cfg: &RunConfig) -> CmdResult {
    let path = cfg.data.eval_path.as_deref().or(cfg.data.path.as_deref());
    let ds = load_required(path, "evaluation")?;
    let (model, normalizer) = match &cfg.eval.checkpoint {
        Some(dir) => {
            let ck = load_checkpoint(dir, CHECKPOINT_STEM)?;
            (ck.model, ck.normalizer)
        }
        None => {
            let m = AnyModel::init(cfg.run.model, &cfg.train, ds.feature_dim, cfg.run.seed)?;
            let n = if cfg.data.normalize {
                Some(Normalizer::fit(&ds.bags)?)
            } else {
                None
            };
            (m, n)
        }
    };
    if model.feature_dim() != ds.feature_dim {
        return Err(Failure::usage(anyhow::anyhow!(
            "model expects dimension {}, dataset has {}",
            model.feature_dim(),
            ds.feature_dim
        )));
    }
    let ds = match &normalizer {
        Some(n) => n.apply(&ds),
        None => ds,
    };
    let eval_seed = derive_seed(cfg.run.seed, &[0xE7A1]);
    let report = report_from_predictions(&ds, &predict_dataset(&model, &ds, eval_seed)?)?;
    let bags = bag_reports(&model, &ds, eval_seed)?;
    let mut run = open_run(cfg)?;
    let report_path = run.path("eval.json");
    write_json(&report_path, &report)?;
    run.record(report_path);
    let bags_path = run.path("bags.json");
    write_json(&bags_path, &bags)?;
    run.record(bags_path);
    run.finish()?;
    let auc = report
        .auc
        .map_or_else(|| "NA".into(), |a| format!("{a:.4}"));
    println!(
        "eval: {} bags, acc {:.4}, auc {auc}, ece {:.4}",
        report.n_bags, report.acc, report.ece
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(cfg: &RunConfig) -> CmdResult {
    let g = &cfg.gradcheck;
    if g.models == 0 || g.dim == 0 || g.bag_size == 0 || g.tolerance.is_nan() || g.tolerance <= 0.0
    {
        return Err(Failure::usage(anyhow::anyhow!(
            "gradcheck needs positive models, dim, bag_size and tolerance"
        )));
    }
    let mut results: Vec<(String, GradCheckReport)> = Vec::new();
    for i in 0..g.models {
        let seed = derive_seed(cfg.run.seed, &[0x6C, i as u64]);
        let mut r = stream(seed, &[]);
        let x = Matrix::from_fn(g.dim, g.bag_size, |_, _| r.random_range(-1.0..1.0));
        let label = (i % 2) as u8;
        let hyper = SnuffyHyper::new(
            g.dim,
            2.min(g.bag_size),
            2,
            2,
            if g.dim.is_multiple_of(2) { 2 } else { 1 },
        );
        let snuffy = SnuffyModel::init(hyper, seed)?;
        results.push((
            format!("snuffy-{i}"),
            gradient_check(&snuffy, &x, label, seed)?,
        ));
        for kind in [PoolKind::Mean, PoolKind::Max] {
            let b = PoolingBaseline::init(kind, g.dim, seed);
            let name = format!(
                "{}-{i}",
                if kind == PoolKind::Mean {
                    "mean-pool"
                } else {
                    "max-pool"
                }
            );
            results.push((name, gradient_check(&b, &x, label, seed)?));
        }
    }
    let failing: Vec<String> = results
        .iter()
        .flat_map(|(m, rep)| {
            rep.failing(g.tolerance)
                .map(move |t| format!("{m}/{}", t.name))
        })
        .collect();
    let worst = results
        .iter()
        .map(|(_, r)| r.max_rel_error())
        .fold(0.0, f64::max);
    let mut run = open_run(cfg)?;
    let path = run.path("gradcheck.json");
    let entries: Vec<serde_json::Value> = results
        .iter()
        .map(|(m, rep)| serde_json::json!({ "model": m, "loss": rep.loss, "tensors": rep.tensors }))
        .collect();
    write_json(
        &path,
        &serde_json::json!({
            "tolerance": g.tolerance,
            "max_rel_error": worst,
            "failing": failing,
            "models": entries,
        }),
    )?;
    run.record(path);
    run.finish()?;
    println!(
        "gradcheck: {} models, max relative error {worst:.3e}, {} failing tensors",
        results.len(),
        failing.len()
    );
    Ok(if failing.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_synth(cfg: &RunConfig) -> CmdResult {
    let ds = snuffy_core::data::synth_generate(&cfg.synth.to_core(cfg.run.seed))?;
    let mut run = open_run(cfg)?;
    match cfg.synth.format {
        SynthFormat::Csv => {
            let p = run.path("data.csv");
            save_mil_csv(&ds, &p)?;
            run.record(p);
        }
        SynthFormat::Embeddings => {
            let dir = run.path("embeddings");
            save_embeddings_dir(&ds, &dir)?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| {
                    Failure::usage(
                        anyhow::Error::new(e).context(format!("listing {}", dir.display())),
                    )
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            files.sort();
            run.record_all(files);
        }
    }
    run.finish()?;
    println!(
        "synth: {} bags, {} instances, dimension {}",
        ds.len(),
        ds.num_instances(),
        ds.feature_dim
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_cv(cfg: &RunConfig) -> CmdResult {
    let ds = load_required(cfg.data.path.as_deref(), "cross-validation")?;
    let mut run = open_run(cfg)?;
    let job_dir = run.path("folds");
    let (records, summary) = run_cv(&ds, &cfg.train, &cfg.cv, Some(&job_dir))?;
    for r in &records {
        run.record(job_dir.join(format!(
            "fold{}-run{}-{}.json",
            r.fold,
            r.run,
            r.model.name()
        )));
    }

    let records_path = run.path("records.csv");
    write_cv_records_csv(&records_path, &records)?;
    run.record(records_path);
    let table_path = run.path("table.csv");
    write_cv_table_csv(&table_path, &summary)?;
    run.record(table_path);
    let summary_path = run.path("summary.json");
    write_json(&summary_path, &summary)?;
    run.record(summary_path);
    run.finish()?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    for m in &summary.models {
        let show = |s: Option<snuffy::experiments::MeanStd>| {
            s.map_or_else(|| "NA".into(), |s| format!("{:.3} ± {:.3}", s.mean, s.std))
        };
        println!(
            "cv {}: acc {} auc {}",
            m.model.name(),
            show(m.acc),
            show(m.auc)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> CmdResult {
    let cfg = resolve(cli)?;
    match cli.command {
        Command::Verify(_) => cmd_verify(&cfg),
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Gradcheck(_) => cmd_gradcheck(&cfg),
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Cv(_) => cmd_cv(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
