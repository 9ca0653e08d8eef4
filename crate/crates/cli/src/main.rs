use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gbnet::data::{CsvOptions, LabelColumn};
use gbnet_cli::config::Overrides;
use gbnet_cli::{cmd_benchmark, cmd_evaluate, cmd_train, EvalData};

#[derive(Parser)]
#[command(name = "gbnet", version, about = "Gradient-boosted deep networks")]
struct Cli {
    /// Seed for splits, initialization and batch order (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for folds; defaults to all cores.
    #[arg(long, global = true, env = "GBNET_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model described by a TOML run file.
    Train { config: PathBuf },
    /// Score a saved model on a CSV file or an IDX images/labels pair.
    Evaluate {
        model: PathBuf,
        #[arg(required = true, num_args = 1..=2)]
        data: Vec<PathBuf>,
        /// CSV label column, by 0-based index or header name (default: last).
        #[arg(long)]
        label_column: Option<String>,
        /// The CSV file has no header row.
        #[arg(long)]
        no_header: bool,
    },
    /// Cross-validate several models with an inner grid search.
    Benchmark { config: PathBuf },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let overrides = Overrides { seed: cli.seed, out_dir: cli.out_dir.clone() };
    match cli.command {
        Command::Train { config } => {
            let report = cmd_train(&config, &overrides)?;
            for s in &report.summaries {
                let test = s.test_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
                let size = s.ensemble_size.map(|n| format!(", {n} stages")).unwrap_or_default();
                println!("{}: train accuracy {:.4}, test accuracy {test}{size}", s.run_id, s.train_accuracy);
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Evaluate { model, data, label_column, no_header } => {
            let label_column = label_column.map(|c| match c.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(c),
            });
            let csv = CsvOptions { label_column, has_header: !no_header, classes: None };
            let data = EvalData::from_paths(&data, csv)?;
            let eval = cmd_evaluate(&model, &data, cli.out_dir.as_deref())?;
            println!("samples {}", eval.samples);
            println!("accuracy {}", eval.accuracy);
            println!("cross_entropy {}", eval.cross_entropy);
            if eval.rows.len() > 1 || eval.rows[0].stages.is_some() {
                for r in &eval.rows {
                    println!("stages {} accuracy {} cross_entropy {}", r.stages.unwrap_or(0), r.accuracy, r.cross_entropy);
                }
            }
            println!("wrote {}", eval.file.display());
        }
        Command::Benchmark { config } => {
            let report = cmd_benchmark(&config, &overrides)?;
            for m in &report.models {
                println!(
                    "{} {}: {:.2}% ± {:.2} over {} folds",
                    m.dataset,
                    m.model,
                    100.0 * m.mean_accuracy,
                    100.0 * m.std_accuracy,
                    m.folds
                );
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
