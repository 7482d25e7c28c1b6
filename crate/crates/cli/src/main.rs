use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use ratad::forecast::Budget;
use ratad::harness::{
    emit_reports, load_dataset, load_dir, run_prepared, similarity_diagnostics, sweep_pool_fraction, write_diagnostics,
    write_sweep_csv, ExperimentConfig, HarnessError, NoopObserver, Prepared, Setting,
};
use ratad::synth::{generate_synthetic, write_dataset, SynthSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATASET: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ratad",
    version,
    about = "Retrieval-augmented forecast-based anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root in UCR layout (one sub-directory per domain).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use the built-in synthetic benchmark when no dataset is given.
    #[arg(long)]
    synth: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Segment lengths Te,H,Tt.
    #[arg(long)]
    budget: Option<Budget>,
    /// Score raw deviations without moving-average smoothing.
    #[arg(long)]
    no_sma: bool,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a dataset directory.
    Ingest {
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a synthetic dataset in UCR layout.
    Synth {
        /// JSON synthetic spec; defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "synth_data")]
        out: PathBuf,
    },
    /// Run one pipeline setting and emit reports.
    Run {
        #[arg(long)]
        setting: Setting,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep candidate-pool fractions.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.75,0.5,0.25")]
        fractions: Vec<f64>,
        #[arg(long, default_value = "ratfm_copy")]
        setting: Setting,
        #[command(flatten)]
        common: Common,
    },
    /// Similarity of true futures to example futures and input segments.
    DiagSimilarity {
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Config(_) => EXIT_CONFIG,
        HarnessError::Dataset(_) | HarnessError::Io { .. } => EXIT_DATASET,
    }
}

fn resolve_config(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None if common.synth => ExperimentConfig::synthetic_benchmark(common.seed.unwrap_or(0)),
        None => ExperimentConfig::default(),
    };
    if let Some(data) = &common.data {
        config.data_root = Some(data.clone());
    } else if common.synth && config.synth.is_none() {
        config.synth = Some(SynthSpec::default());
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
        if let Some(spec) = config.synth.as_mut() {
            spec.seed = seed;
        }
    }
    if let Some(budget) = common.budget {
        config.budget = budget;
    }
    if common.no_sma {
        config.sma = false;
    }
    if common.workers.is_some() {
        config.workers = common.workers;
    }
    config.validate()?;
    Ok(config)
}

fn prepare(common: &Common) -> Result<(ExperimentConfig, Prepared), HarnessError> {
    let config = resolve_config(common)?;
    let dataset = load_dataset(&config)?;
    let prepared = Prepared::new(&config, dataset)?;
    Ok((config, prepared))
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Ingest { data } => {
            let dataset = load_dir(&data)?;
            let summary = serde_json::json!({
                "series": dataset.series.len(),
                "domains": dataset.series.iter().map(|s| s.domain.clone()).collect::<std::collections::BTreeSet<_>>(),
                "skipped": dataset.skipped,
                "warnings": dataset.warnings,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            if !dataset.skipped.is_empty() {
                return Err(HarnessError::Dataset(format!(
                    "{} file(s) failed validation",
                    dataset.skipped.len()
                )));
            }
            Ok(())
        }
        Command::Synth { spec, seed, out } => {
            let mut spec = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                    serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?
                }
                None => SynthSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let series = generate_synthetic(&spec).map_err(|e| HarnessError::Config(e.to_string()))?;
            write_dataset(&series, &out).map_err(|e| HarnessError::Dataset(e.to_string()))?;
            println!("wrote {} series to {}", series.len(), out.display());
            Ok(())
        }
        Command::Run { setting, common } => {
            let (config, prepared) = prepare(&common)?;
            let output = run_prepared(&prepared, setting, &NoopObserver)?;
            emit_reports(&output, &config, &common.out)?;
            let g = &output.report.global;
            println!(
                "{setting}: {} series, VUS-ROC {:.4}, VUS-PR {:.4}, F1 {:.4} -> {}",
                g.series,
                g.mean.vus_roc,
                g.mean.vus_pr,
                g.mean.f1,
                common.out.display()
            );
            for w in &output.report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
        Command::Sweep {
            fractions,
            setting,
            common,
        } => {
            let (_, prepared) = prepare(&common)?;
            let rows = sweep_pool_fraction(&prepared, setting, &fractions)?;
            create_dir(&common.out)?;
            let path = common.out.join("pool_sweep.csv");
            write_sweep_csv(&rows, &path)?;
            for r in &rows {
                println!("{:.2} {:<12} VUS-ROC {:.4}", r.fraction, r.domain, r.vus_roc);
            }
            info!("wrote {}", path.display());
            Ok(())
        }
        Command::DiagSimilarity { common } => {
            let (_, prepared) = prepare(&common)?;
            let diag = similarity_diagnostics(&prepared)?;
            create_dir(&common.out)?;
            write_diagnostics(&diag, common.out.join("similarity.json"))?;
            let g = diag.global;
            println!(
                "example future {:.3} | aligned segment {:.3} | best segment {:.3} ({} windows)",
                g.example_future, g.aligned_segment, g.best_segment, g.windows
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
