//! `strsparse` command-line runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use strsparse::budget::{self, Architecture, BudgetReport};
use strsparse::checkpoint::Checkpoint;
use strsparse::experiments::classification::{classification_run, learnt_budget, restore_classifier};
use strsparse::experiments::config::{Experiment, Precision, RunConfig};
use strsparse::experiments::lowrank::{lowrank_rnn_run, restore_rnn};
use strsparse::experiments::sparse_regression::{
    regression_lambda_search, regression_train_config, sparse_regression_seeds, RegressionOptions,
};
use strsparse::experiments::sweep::sweep_classification;
use strsparse::{Error, Granularity, Network, Result, Scalar};

const OUTPUT_ROOT_ENV: &str = "STRSPARSE_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Parser)]
#[command(name = "strsparse", version, about = "Learnable sparsity through soft-threshold reparameterization")]
#[command(after_help = "Exit codes: 0 ok, 1 training diverged (non-finite values), 2 I/O, config or dataset error.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured experiment and write a run directory
    Train(TrainArgs),
    /// Print the params/FLOPs budget of an architecture
    Budget(BudgetArgs),
    /// Recover the support of a noiseless sparse linear model over several seeds
    SparseRegression(RegressionArgs),
    /// Search the weight decay that reaches a target overall sparsity
    Sweep(SweepArgs),
    /// Write the budget CSV of a finished run from its checkpoint
    ExportBudget(ExportArgs),
    /// Read a budget CSV and print the per-layer sparsity vector
    ImportBudget(ImportArgs),
    /// Summarise the layers of a checkpoint
    InspectCheckpoint(InspectArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML); built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `lambda=3e-5` or `data.seed=2` (repeatable, applied last)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::load(path, &self.overrides),
            None => RunConfig::with_overrides(&self.overrides),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Directory that receives the run directory [default: `output_dir` from the config, else $STRSPARSE_OUTPUT_ROOT, else ./runs]
    #[arg(long)]
    output_root: Option<PathBuf>,
}

#[derive(Args)]
struct BudgetArgs {
    /// `resnet50`, `mobilenetv1` or `file:<architecture.toml>`
    arch: String,
    /// Budget CSV with per-layer sparsities; dense when omitted
    #[arg(long)]
    sparsity_csv: Option<PathBuf>,
    /// Also write the report rows as a budget CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print the report as JSON instead of a table
    #[arg(long, default_value_t = false)]
    json: bool,
}

#[derive(Args)]
struct RegressionArgs {
    /// Number of features
    #[arg(short = 'd', default_value_t = 300)]
    d: usize,
    /// Number of samples
    #[arg(short = 'n', default_value_t = 100)]
    n: usize,
    /// Support size of the true weights
    #[arg(short = 'r', default_value_t = 5)]
    r: usize,
    /// Number of seeds
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// First seed; seeds run from here upwards
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Weight decay on weights and thresholds (starting point with --auto-lambda)
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    /// Initial threshold parameter
    #[arg(long, default_value_t = -20.0, allow_negative_numbers = true)]
    s_init: f64,
    /// Full-batch epochs
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    /// Peak learning rate
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Threshold granularity
    #[arg(long, default_value = "per-weight")]
    granularity: Granularity,
    /// Scale k of the threshold k * sigmoid(s)
    #[arg(long, default_value_t = 3.0)]
    threshold_scale: f64,
    /// Search lambda until the mean F1 reaches --target-f1
    #[arg(long, default_value_t = false)]
    auto_lambda: bool,
    /// Mean F1 the lambda search aims for
    #[arg(long, default_value_t = 0.9)]
    target_f1: f64,
    /// Trials of the lambda search
    #[arg(long, default_value_t = 8)]
    max_trials: usize,
    /// Also write the summary JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Target overall sparsity in percent
    #[arg(long)]
    target: f64,
    /// Accepted distance from the target in percentage points
    #[arg(long, default_value_t = 1.5)]
    tolerance: f64,
    /// Maximum number of training runs
    #[arg(long, default_value_t = 8)]
    max_trials: usize,
}

#[derive(Args)]
struct ExportArgs {
    /// Run directory written by `train`
    run_dir: PathBuf,
    /// Output CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// Budget CSV
    csv: PathBuf,
    /// `resnet50`, `mobilenetv1`, `file:<architecture.toml>` or `run:<run dir>`
    #[arg(long)]
    arch: String,
    /// Print the full budget report instead of the sparsity vector
    #[arg(long, default_value_t = false)]
    report: bool,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint JSON
    checkpoint: PathBuf,
    /// Print JSON instead of a table
    #[arg(long, default_value_t = false)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Budget(a) => cmd_budget(a),
        Command::SparseRegression(a) => cmd_sparse_regression(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ExportBudget(a) => cmd_export_budget(a),
        Command::ImportBudget(a) => cmd_import_budget(a),
        Command::InspectCheckpoint(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } => 1,
        _ => 2,
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn to_json(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

/// First 12 hex digits of the SHA-256 of the normalised config.
fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn output_root(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Creates `<root>/<timestamp>-<hash>`, suffixed when that already exists.
fn create_run_dir(root: &Path, hash: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{hash}");
    for i in 0.. {
        let name = if i == 0 { base.clone() } else { format!("{base}-{i}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(format!("creating {}", dir.display()), e)),
        }
    }
    unreachable!("unbounded suffix search")
}

struct Artifacts {
    summary: Value,
    report_csv: String,
    budget: Option<BudgetReport>,
    checkpoint: String,
    line: String,
}

fn run_classification<T: Scalar>(cfg: &RunConfig) -> Result<Artifacts> {
    let out = classification_run::<T>(cfg)?;
    let rep = &out.report;
    let last = rep.last();
    let layers: Vec<Value> = rep
        .layers
        .iter()
        .enumerate()
        .map(|(i, name)| {
            json!({
                "name": name,
                "alpha": last.alphas[i],
                "nonzeros": last.nonzeros[i],
                "total": rep.layer_sizes[i],
            })
        })
        .collect();
    let summary = json!({
        "experiment": "classification",
        "seed": cfg.train.seed,
        "steps": rep.steps,
        "train_loss": last.loss,
        "train_acc": last.acc,
        "test_loss": out.test_loss,
        "test_acc": out.test_acc,
        "sparsity_pct": 100.0 * last.sparsity,
        "layers": layers,
        "budget": { "overall": out.budget.overall, "backbone": out.budget.backbone },
    });
    Ok(Artifacts {
        line: format!("test_acc {:.4}  sparsity {:.2}%", out.test_acc, 100.0 * last.sparsity),
        summary,
        report_csv: rep.to_csv(),
        checkpoint: out.model.checkpoint()?.to_json(),
        budget: Some(out.budget),
    })
}

fn run_lowrank<T: Scalar>(cfg: &RunConfig) -> Result<Artifacts> {
    let out = lowrank_rnn_run::<T>(cfg)?;
    let mut summary = serde_json::to_value(&out)?;
    summary["experiment"] = json!("lowrank-rnn");
    Ok(Artifacts {
        line: format!(
            "accuracy {:.4} (dense {:.4})  rank_W {}/{}  rank_U {}/{}",
            out.accuracy, out.baseline_accuracy, out.rank_w, out.full_rank_w, out.rank_u, out.full_rank_u
        ),
        summary,
        report_csv: out.report.to_csv(),
        checkpoint: out.model.checkpoint()?.to_json(),
        budget: None,
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.cfg.load()?;
    let art = match (cfg.experiment, cfg.precision) {
        (Experiment::Classification, Precision::F64) => run_classification::<f64>(&cfg)?,
        (Experiment::Classification, Precision::F32) => run_classification::<f32>(&cfg)?,
        (Experiment::LowrankRnn, Precision::F64) => run_lowrank::<f64>(&cfg)?,
        (Experiment::LowrankRnn, Precision::F32) => run_lowrank::<f32>(&cfg)?,
    };
    let hash = config_hash(&cfg);
    let dir = create_run_dir(&output_root(args.output_root, &cfg), &hash)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    write(&dir.join("report.csv"), &art.report_csv)?;
    write(&dir.join("checkpoint.json"), &art.checkpoint)?;
    if let Some(b) = &art.budget {
        budget::export_budget(b, &dir.join("budget.csv"))?;
    }
    let mut summary = art.summary;
    summary["config_hash"] = json!(hash);
    write(&dir.join("summary.json"), &to_json(&summary))?;
    println!("{}", art.line);
    println!("run dir: {}", dir.display());
    Ok(())
}

fn parse_arch(spec: &str) -> Result<Architecture> {
    if let Some(path) = spec.strip_prefix("file:") {
        return Architecture::load(Path::new(path));
    }
    budget::builtin(spec)
        .ok_or_else(|| Error::Config(format!("unknown architecture `{spec}`; expected resnet50, mobilenetv1 or file:<path>")))
}

fn cmd_budget(args: BudgetArgs) -> Result<()> {
    let arch = parse_arch(&args.arch)?;
    let pcts = match &args.sparsity_csv {
        Some(path) => budget::import_budget_for(path, &arch)?,
        None => vec![0.0; arch.layers.len()],
    };
    let report = budget::report(&arch, &pcts)?;
    if args.json {
        print!("{}", to_json(&report));
    } else {
        print!("{}", budget::format_report(&report));
    }
    if let Some(path) = &args.csv {
        budget::export_budget(&report, path)?;
    }
    Ok(())
}

fn cmd_sparse_regression(args: RegressionArgs) -> Result<()> {
    let opts = RegressionOptions { granularity: args.granularity, threshold_scale: args.threshold_scale, ..RegressionOptions::default() };
    let mut tc = regression_train_config(args.n, args.first_seed);
    tc.lambda = args.lambda;
    tc.s_init = args.s_init;
    tc.epochs = args.epochs;
    tc.base_lr = args.lr;
    let seeds: Vec<u64> = (args.first_seed..args.first_seed + args.seeds).collect();
    let summary = if args.auto_lambda {
        let search = regression_lambda_search(args.d, args.n, args.r, &seeds, &opts, &tc, args.target_f1, args.max_trials)?;
        eprintln!(
            "lambda {} mean F1 {:.4} ({})",
            search.best.lambda,
            search.best.mean_f1,
            if search.converged { "converged" } else { "not converged" }
        );
        serde_json::to_value(&search)?
    } else {
        let s = sparse_regression_seeds(args.d, args.n, args.r, &seeds, &opts, &tc)?;
        eprintln!("mean F1 {:.4}, recovered {}/{} identifiable seeds", s.mean_f1, s.recovered, s.identifiable);
        serde_json::to_value(&s)?
    };
    let text = to_json(&summary);
    print!("{text}");
    if let Some(path) = &args.out {
        write(path, &text)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.cfg.load()?;
    if cfg.experiment != Experiment::Classification {
        return Err(Error::Config("sweep runs classification experiments only".into()));
    }
    let out = match cfg.precision {
        Precision::F64 => sweep_classification::<f64>(&cfg, args.target, args.tolerance, args.max_trials)?,
        Precision::F32 => sweep_classification::<f32>(&cfg, args.target, args.tolerance, args.max_trials)?,
    };
    eprintln!("lambda {} sparsity {:.2}% ({})", out.lambda, out.sparsity_pct, if out.converged { "converged" } else { "not converged" });
    print!("{}", to_json(&out));
    Ok(())
}

/// Rebuilds the trained model of a run directory.
fn run_budget<T: Scalar>(dir: &Path, cfg: &RunConfig) -> Result<BudgetReport> {
    let ckpt = Checkpoint::<T>::load(&dir.join("checkpoint.json"))?;
    match cfg.experiment {
        Experiment::Classification => learnt_budget(&mut restore_classifier(cfg, &ckpt)?),
        Experiment::LowrankRnn => learnt_budget(&mut restore_rnn(cfg, &ckpt)?),
    }
}

fn load_run(dir: &Path) -> Result<(RunConfig, BudgetReport)> {
    let cfg = RunConfig::load(&dir.join("config.toml"), &[])?;
    let report = match cfg.precision {
        Precision::F64 => run_budget::<f64>(dir, &cfg)?,
        Precision::F32 => run_budget::<f32>(dir, &cfg)?,
    };
    Ok((cfg, report))
}

fn cmd_export_budget(args: ExportArgs) -> Result<()> {
    let (_, report) = load_run(&args.run_dir)?;
    match &args.out {
        Some(path) => budget::export_budget(&report, path),
        None => budget::write_budget_csv(&report, std::io::stdout().lock()),
    }
}

fn cmd_import_budget(args: ImportArgs) -> Result<()> {
    let arch = match args.arch.strip_prefix("run:") {
        Some(dir) => {
            let names: Vec<String> = load_run(Path::new(dir))?.1.rows.into_iter().map(|r| r.layer).collect();
            let pcts = budget::import_budget(&args.csv, &names)?;
            println!("layer,sparsity_pct");
            for (n, p) in names.iter().zip(&pcts) {
                println!("{n},{p}");
            }
            return Ok(());
        }
        None => parse_arch(&args.arch)?,
    };
    let pcts = budget::import_budget_for(&args.csv, &arch)?;
    if args.report {
        print!("{}", budget::format_report(&budget::report(&arch, &pcts)?));
    } else {
        println!("layer,sparsity_pct");
        for (l, p) in arch.layers.iter().zip(&pcts) {
            println!("{},{p}", l.name);
        }
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let ckpt = Checkpoint::<f64>::load(&args.checkpoint)?;
    let rows = ckpt.summary()?;
    if args.json {
        print!("{}", to_json(&json!({ "model": ckpt.model, "layers": rows })));
        return Ok(());
    }
    println!("model {}", ckpt.model);
    println!(
        "{:<12} {:<16} {:<12} {:>12} {:>10} {:>10} {:>9}",
        "layer", "shape", "granularity", "mean_alpha", "nonzeros", "total", "sparsity"
    );
    for r in rows {
        let shape = format!("{:?}", r.shape);
        let gran =
            r.granularity.map_or("-".to_string(), |g| serde_json::to_value(g).expect("serializes").as_str().unwrap_or("").to_string());
        let alpha = r.mean_alpha.map_or("-".to_string(), |a| format!("{a:.4e}"));
        let sp = 100.0 * (1.0 - r.nonzeros as f64 / r.total.max(1) as f64);
        println!("{:<12} {:<16} {:<12} {:>12} {:>10} {:>10} {:>8.2}%", r.name, shape, gran, alpha, r.nonzeros, r.total, sp);
    }
    Ok(())
}
