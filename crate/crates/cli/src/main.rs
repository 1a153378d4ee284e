use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use itene::harness::{
    emit_report, ingest_csv, quantize_returns, run_experiment, summarize, ExperimentConfig,
    QuantizeSpec, RunStatus,
};
use itene::synthetic::closed_form_te;

/// Transfer entropy and intrinsic transfer entropy estimation.
#[derive(Parser)]
#[command(name = "itene", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of every sweep point and write reports.
    Sweep(RunArgs),
    /// Run the configured trials without a sweep and print the summary.
    Estimate(RunArgs),
    /// Convert a price column into three-level daily return classes.
    Quantize(QuantizeArgs),
    /// Quick end-to-end check on a tiny synthetic problem.
    Selftest {
        #[arg(long, default_value = "selftest-output")]
        output_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Add bit-valued columns to trials.csv.
    #[arg(long)]
    bits: bool,
    /// Estimate transfer entropy only.
    #[arg(long)]
    te_only: bool,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Price column of the first series.
    #[arg(long)]
    x_col: String,
    /// Price column of the second series.
    #[arg(long)]
    y_col: String,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.008)]
    up: f64,
    #[arg(long, default_value_t = -0.008)]
    down: f64,
}

fn build_config(args: &RunArgs) -> itene::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(source) = &args.source {
        cfg.set("source", source)?;
    }
    for item in &args.overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            itene::Error::Config(format!("--set expects KEY=VALUE, got {item:?}"))
        })?;
        cfg.set(key.trim(), value)?;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    cfg.bits |= args.bits;
    cfg.te_only |= args.te_only;
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig) -> itene::Result<RunStatus> {
    let report = run_experiment(cfg)?;
    for f in &report.failures {
        eprintln!("trial {} (seed {}) failed: {}", f.trial, f.seed, f.message);
    }
    if report.rows.is_empty() {
        return Ok(RunStatus::Fatal);
    }
    emit_report(&report, &cfg.output_dir)?;
    for row in summarize(&report) {
        let point = row
            .sweep_value
            .map_or_else(|| "-".to_string(), |v| v.to_string());
        let band = |b: Option<itene::harness::Band>| {
            b.map_or_else(
                || "n/a".to_string(),
                |b| format!("{:.4} [{:.4}, {:.4}]", b.median, b.min, b.max),
            )
        };
        let oracle = row
            .oracle_te_nats
            .map_or_else(String::new, |v| format!("  oracle {v:.4}"));
        println!(
            "{point}: te {}  ite {}  ste {}{oracle}",
            band(Some(row.te)),
            band(row.ite),
            band(row.ste)
        );
    }
    println!("reports written to {}", cfg.output_dir.display());
    Ok(report.status())
}

fn quantize(args: &QuantizeArgs) -> itene::Result<()> {
    let spec = QuantizeSpec {
        up_threshold: args.up,
        down_threshold: args.down,
    };
    let prices = ingest_csv(&args.input, &args.x_col, &args.y_col)?;
    let levels = itene::te::SeriesPair::new(
        quantize_returns(prices.x(), &spec)?,
        quantize_returns(prices.y(), &spec)?,
    )?;
    itene::harness::write_series_csv(&args.output, &levels, &args.x_col, &args.y_col)
}

fn selftest(output_dir: PathBuf) -> itene::Result<RunStatus> {
    let spec = QuantizeSpec::default();
    for (prices, level) in [
        ([100.0, 101.0], 1.0),
        ([100.0, 100.5], 0.0),
        ([100.0, 99.0], -1.0),
    ] {
        let got = quantize_returns(&prices, &spec)?;
        if got != [level] {
            return Err(itene::Error::Numeric(format!(
                "quantize {prices:?} gave {got:?}, expected [{level}]"
            )));
        }
    }
    println!(
        "closed-form TE at rho 0.9, lambda 0: {:.6} nats",
        closed_form_te(0.9, 0.0)?
    );
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("len", "500"),
        ("trials", "1"),
        ("hidden", "16,16"),
        ("epochs", "20"),
        ("outer_iterations", "3"),
        ("refit_epochs", "2"),
        ("phi_hidden", "16"),
    ] {
        cfg.set(k, v)?;
    }
    cfg.output_dir = output_dir;
    run(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Sweep(args) => build_config(&args).and_then(|cfg| run(&cfg)),
        Command::Estimate(args) => build_config(&args).and_then(|mut cfg| {
            cfg.sweep = None;
            run(&cfg)
        }),
        Command::Quantize(args) => quantize(&args).map(|()| RunStatus::Success),
        Command::Selftest { output_dir } => selftest(output_dir),
    };
    match outcome {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(RunStatus::Fatal.exit_code() as u8)
        }
    }
}
