//! `pgib`: train, evaluate and explain prototype graph classifiers.
//!
//! Exit status is 0 on success, 1 on a usage error (bad flags, unknown
//! dataset or sweep parameter) and 2 when the command itself fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use pgib::config::PgibConfig;
use pgib::datasets::{self, load_dataset};
use pgib::eval::{sparsity_sweep, DEFAULT_KS};
use pgib::graph::{split_dataset, Graph, GraphDataset};
use pgib::report::emit_reasoning_report;
use pgib::run::{load_run, write_run, LoadedRun};
use pgib::sweep::{run_sweep_with, SweepParam};
use pgib::trainer::{accuracy, train_with, Split};

#[derive(Parser)]
#[command(name = "pgib", version, about = "Prototype-based explainable graph classification")]
struct Cli {
    /// Directory holding TU datasets (default: $PGIB_DATA_DIR or ./data).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train {
        #[arg(long)]
        dataset: String,
        /// `key = value` config file applied over the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Print per-epoch metrics to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Accuracy of a trained run on one split.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Reasoning report and DOT files for one graph.
    Explain {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        graph_id: String,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of nodes in the explanation subgraph.
        #[arg(long, default_value_t = 0.5)]
        k: f64,
    },
    /// Test accuracy across values of one hyperparameter.
    Sweep {
        #[arg(long)]
        dataset: String,
        /// alpha1, alpha2, alpha3 or J.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fidelity over sparsity levels on the test split of a run.
    Fidelity {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated sparsity levels in (0, 1).
        #[arg(long)]
        ks: Option<String>,
        /// Output directory (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<pgib::PgibError> for Failure {
    fn from(e: pgib::PgibError) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| usage(format!("--{flag}: cannot parse {s:?}"))))
        .collect()
}

fn data_dir(cli: &Option<PathBuf>) -> PathBuf {
    cli.clone().unwrap_or_else(datasets::default_data_dir)
}

fn check_dataset(name: &str) -> CliResult<()> {
    if datasets::is_known(name) {
        Ok(())
    } else {
        Err(usage(format!(
            "unknown dataset {name:?} (expected one of {})",
            datasets::KNOWN.join(", ")
        )))
    }
}

fn read_config(path: Option<&Path>) -> CliResult<PgibConfig> {
    match path {
        None => Ok(PgibConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(PgibConfig::from_kv(&text)?)
        }
    }
}

fn split_graphs<'a>(ds: &'a GraphDataset, run: &LoadedRun, split: &str) -> CliResult<Vec<&'a Graph>> {
    let idx = run
        .split
        .part(split)
        .ok_or_else(|| usage(format!("--split must be train, val or test, got {split:?}")))?;
    idx.iter()
        .map(|&i| ds.graphs.get(i).ok_or_else(|| anyhow!("split index {i} out of range").into()))
        .collect()
}

fn open_run(dir: &Path, data: &Path) -> CliResult<(LoadedRun, GraphDataset)> {
    let run = load_run(dir).with_context(|| format!("loading run {}", dir.display()))?;
    let ds = load_dataset(&run.dataset, data)?;
    Ok((run, ds))
}

fn run(cli: Cli) -> CliResult<()> {
    let data = data_dir(&cli.data_dir);
    match cli.command {
        Command::Train {
            dataset,
            config,
            seed,
            out,
            verbose,
        } => {
            check_dataset(&dataset)?;
            let mut cfg = read_config(config.as_deref())?;
            cfg.seed = seed;
            let ds = load_dataset(&dataset, &data)?;
            let split = split_dataset(&ds, seed)?;
            let outcome = train_with(&ds, &split, &cfg, |m| {
                if verbose && m.split == Split::Val {
                    eprintln!("epoch {} val accuracy {:.4}", m.epoch, m.accuracy);
                }
            })?;
            write_run(&out, &dataset.to_ascii_lowercase(), &cfg, &split, &outcome)?;
            let test: Vec<&Graph> = split.test.iter().map(|&i| &ds.graphs[i]).collect();
            println!("best epoch {}", outcome.best_epoch);
            println!("val accuracy {:.6}", outcome.best_val_accuracy);
            println!("test accuracy {:.6}", accuracy(&outcome.model, &test)?);
            println!("run written to {}", out.display());
        }
        Command::Eval { run, split } => {
            let (loaded, ds) = open_run(&run, &data)?;
            let graphs = split_graphs(&ds, &loaded, &split)?;
            println!("{split} accuracy {:.6}", accuracy(&loaded.model, &graphs)?);
        }
        Command::Explain { run, graph_id, out, k } => {
            let (loaded, ds) = open_run(&run, &data)?;
            let graph = ds
                .find(&graph_id)
                .ok_or_else(|| anyhow!("graph {graph_id:?} not in dataset {}", loaded.dataset))?;
            let report = emit_reasoning_report(&loaded.model, graph, &loaded.projections, |id| ds.find(id), k, &out)?;
            print!("{}", report.to_text());
        }
        Command::Sweep {
            dataset,
            param,
            values,
            seeds,
            config,
            out,
        } => {
            check_dataset(&dataset)?;
            let param: SweepParam = param.parse().map_err(|e: pgib::PgibError| usage(e.to_string()))?;
            let values: Vec<f64> = parse_list("values", &values)?;
            let seeds: Vec<u64> = parse_list("seeds", &seeds)?;
            let base = read_config(config.as_deref())?;
            let ds = load_dataset(&dataset, &data)?;
            let report = run_sweep_with(&ds, &base, param, &values, &seeds, |r| {
                eprintln!("{param} = {} seed {}: test accuracy {:.4}", r.value, r.seed, r.test_accuracy);
            })?;
            report.write(&out)?;
            print!("{}", report.summary_csv());
        }
        Command::Fidelity { run, ks, out, split } => {
            let ks: Vec<f64> = match ks {
                Some(text) => parse_list("ks", &text)?,
                None => DEFAULT_KS.to_vec(),
            };
            if let Some(bad) = ks.iter().find(|k| !(**k > 0.0 && **k < 1.0)) {
                return Err(usage(format!("--ks values must lie in (0, 1), got {bad}")));
            }
            let (loaded, ds) = open_run(&run, &data)?;
            let graphs = split_graphs(&ds, &loaded, &split)?;
            let report = sparsity_sweep(&loaded.model, &graphs, &ks, &loaded.dataset, &run.display().to_string())?;
            report.write(out.as_deref().unwrap_or(&run))?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `pgib --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
