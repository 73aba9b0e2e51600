use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lmimpute::datamodel::io;
use lmimpute::envelope::Envelope;
use lmimpute::harness::{
    self, read_metrics_csv, read_runtimes_csv, schema_sidecar, summarize, DataSource, ExperimentConfig, Summary,
};
use lmimpute::imputers::ImputerModel;

#[derive(Parser)]
#[command(name = "lmimpute", version, about = "Landmark supermodel experiments with deployable missing-data strategies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the split x strategy experiment and write results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the configured synthetic cohort and write it as CSV or JSON.
    Synthgen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute summary.json from metrics.csv and runtimes.csv in a directory.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Impute the latest row of one episode with a saved imputer model.
    Impute {
        #[arg(long)]
        model: PathBuf,
        /// Episode rows (CSV or JSON) up to the prediction landmark.
        #[arg(long)]
        row: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Synthgen { config, out } => synthgen(&config, &out),
        Command::Summarize { input } => summarize_dir(&input),
        Command::Impute { model, row } => impute(&model, &row),
    }
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    eprintln!(
        "running {} splits x {} strategies into {}",
        cfg.n_splits,
        cfg.strategies.len(),
        dir.display()
    );
    let (result, summary) = harness::run_to_dir(&cfg, &dir)?;
    for cell in result.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("failed: split {} {}: {}", cell.split, cell.strategy, cell.error.as_deref().unwrap_or(""));
    }
    print_summary(&summary);
    Ok(if result.any_failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn synthgen(config: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if !matches!(cfg.data, DataSource::Synthetic(_)) {
        bail!("config data source is not synthetic");
    }
    let cohort = harness::load_cohort(&cfg.data, cfg.seed, harness::execution(&cfg))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    io::write_episodes(out, &cohort.schema, &cohort.episodes)?;
    let sidecar = schema_sidecar(out);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&cohort.schema)?)?;
    eprintln!("wrote {} episodes to {} (schema {})", cohort.episodes.len(), out.display(), sidecar.display());
    Ok(ExitCode::SUCCESS)
}

fn summarize_dir(dir: &Path) -> Result<ExitCode> {
    let metrics = read_metrics_csv(&dir.join("metrics.csv")).context("reading metrics.csv")?;
    let runtimes = read_runtimes_csv(&dir.join("runtimes.csv")).context("reading runtimes.csv")?;
    let mut summary = summarize(&metrics, &runtimes);
    let path = dir.join("summary.json");
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(old) = serde_json::from_str::<Summary>(&text) {
            summary.config = old.config;
        }
    }
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    print_summary(&summary);
    Ok(if summary.cells_failed > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn impute(model: &Path, row: &Path) -> Result<ExitCode> {
    let env = Envelope::load(model).with_context(|| format!("loading {}", model.display()))?;
    let model = ImputerModel::from_envelope(&env)?;
    let records = io::read_records(row, &model.schema).with_context(|| format!("reading {}", row.display()))?;
    let out = harness::impute_bedside(&model, &records)?;
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn print_summary(summary: &Summary) {
    println!("cells: {} ok, {} failed", summary.cells_ok, summary.cells_failed);
    let mut strategies: Vec<&str> = Vec::new();
    for m in &summary.metrics {
        if !strategies.contains(&m.strategy.as_str()) {
            strategies.push(&m.strategy);
        }
    }
    let landmarks: Vec<u32> = {
        let mut v: Vec<u32> = summary.metrics.iter().map(|m| m.landmark).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    print!("{:<28}", "mean AUROC by landmark");
    for s in &landmarks {
        print!("{s:>7}");
    }
    println!("{:>12}", "impute med");
    for strategy in strategies {
        print!("{strategy:<28}");
        for &s in &landmarks {
            match summary.metric(strategy, s, "auroc").and_then(|m| m.mean) {
                Some(v) => print!("{v:>7.3}"),
                None => print!("{:>7}", "-"),
            }
        }
        match summary.runtime(strategy, "impute") {
            Some(r) => println!("{:>11.3}s", r.median),
            None => println!("{:>12}", "-"),
        }
    }
}
