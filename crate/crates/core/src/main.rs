use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedpoison::attack::AttackMode;
use fedpoison::data::{raw_nodes, synthesize_raw, write_csv_federation, SourceKind};
use fedpoison::harness::config::ExperimentConfig;
use fedpoison::harness::experiment::{run_comparison, sweep_ratio, sweep_step_size, ExperimentReport};
use fedpoison::harness::report::{export_report, format_float, ReportFormat};
use fedpoison::harness::configure_threads;
use fedpoison::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "fedpoison", version, about = "Federated multi-task learning under data-poisoning attacks")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Attack mode (none, direct, indirect, hybrid, random_direct, random_indirect, random_hybrid).
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Injected samples per source node as a fraction of its clean training set.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Step size of the feature ascent.
    #[arg(long, global = true)]
    eta1: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// `json` or `csv`.
    #[arg(long, global = true, default_value = "json")]
    format: String,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Verb {
    /// Clean federated training (no-attack baseline).
    Train,
    /// The configured attack mode against the baseline.
    Attack,
    /// Every configured mode, including random baselines.
    Compare,
    /// Injection-ratio sweep.
    SweepRatio,
    /// Step-size sweep.
    SweepEta,
    /// Write a synthetic federation as per-node CSV files.
    Synth,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(mode) = &cli.mode {
        cfg.mode = mode.parse()?;
    }
    if let Some(r) = cli.ratio {
        cfg.injection_ratio = r;
    }
    if let Some(e) = cli.eta1 {
        cfg.step_eta1 = e;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(report: &ExperimentReport) {
    println!("{:<16} {:>8} {:>10} {:>5} {:>14} {:>12}", "mode", "ratio", "eta", "reps", report.metric, "train_loss");
    for row in &report.summary {
        let metric = match (row.metric_mean, row.metric_std) {
            (Some(m), Some(s)) => format!("{} ± {}", format_float(m), format_float(s)),
            _ => "failed".into(),
        };
        let loss = row.loss_mean.map(format_float).unwrap_or_default();
        println!(
            "{:<16} {:>8} {:>10} {:>5} {:>14} {:>12}",
            row.mode.name(),
            format_float(row.ratio),
            format_float(row.eta),
            row.completed,
            metric,
            loss
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let format: ReportFormat = cli.format.parse()?;
    let threads = configure_threads()?;
    log::info!("using {threads} worker threads");

    let report = match cli.verb {
        Verb::Synth => {
            if cfg.source == SourceKind::CsvDirectory {
                return Err(Error::Config("synth needs a synthetic source".into()));
            }
            let (pairs, _) = synthesize_raw(&cfg.federation_source(0))?;
            write_csv_federation(&cli.out, &raw_nodes(&pairs))?;
            println!("wrote {} node files to {}", pairs.len(), cli.out.display());
            return Ok(());
        }
        Verb::Train => run_comparison(&cfg, &[AttackMode::None])?,
        Verb::Attack => run_comparison(&cfg, &[cfg.mode])?,
        Verb::Compare => run_comparison(&cfg, &cfg.modes)?,
        Verb::SweepRatio => sweep_ratio(&cfg, &cfg.ratios)?,
        Verb::SweepEta => sweep_step_size(&cfg, &cfg.etas)?,
    };
    print_summary(&report);
    for path in export_report(&report, &cli.out, format)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Validation(_) | Error::InfeasibleSpec(_) | Error::LabelDomain { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
