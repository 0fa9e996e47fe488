use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lptgnn::graph_io::{parse_tudataset, DomainDataset};
use lptgnn::run::{
    evaluate_checkpoint, evaluate_on, execute, inspect_topology, load_dataset, output_dir, reproduce, Checkpoint,
    DomainChoice, RunConfig, SplitDirective, Suite, DATA_ROOT_ENV, SEEDS,
};
use lptgnn::topology::{FiltrationKind, TopologyConfig};
use lptgnn::Error;

#[derive(Parser)]
#[command(name = "lptgnn", version, about = "Domain-adaptive graph classification runs")]
struct Cli {
    /// Directory holding one sub-directory per TUDataset.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a configured task and evaluate on its target domain.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a checkpoint's accuracy as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset name under the data root, or a dataset directory. Defaults
        /// to a domain of the checkpoint's own run.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, value_enum, default_value_t = Domain::Target)]
        domain: Domain,
    },
    /// Write one graph's filtrations, diagrams and images as JSON.
    InspectTopology {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        index: usize,
        /// A filtration name or `all`.
        #[arg(long, default_value = "all")]
        filtration: String,
        #[arg(long)]
        resolution: Option<usize>,
        /// 1 for H0, 2 for H0 and H1.
        #[arg(long)]
        diagrams: Option<usize>,
        /// TOML topology settings; flags override them.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a results table over the standard seeds.
    Reproduce {
        #[arg(long)]
        suite: String,
        /// Run configuration supplying hyperparameters; its data section is
        /// replaced per task.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/reproduce")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    Source,
    Target,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

/// A dataset given either as a directory or as a name under the data root.
fn open_dataset(spec: &str, root: &Path) -> Result<DomainDataset, Error> {
    let path = Path::new(spec);
    match path.file_name().and_then(|n| n.to_str()) {
        Some(name) if path.is_dir() => parse_tudataset(path, name),
        _ => load_dataset(root, spec),
    }
}

fn default_root(cli_root: Option<PathBuf>) -> PathBuf {
    cli_root.unwrap_or_else(|| PathBuf::from("data"))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(root) = cli.data_root {
                cfg.data_root.get_or_insert(root);
            }
            let dir = output_dir(&cfg, out.as_deref());
            let record = execute(&cfg)?;
            record.write(&dir)?;
            eprintln!(
                "{}: accuracy {:.4} after {} epochs, artifacts in {}",
                record.result.task,
                record.result.accuracy,
                record.outcome.metrics.len(),
                dir.display()
            );
            print_json(&record.result)
        }
        Command::Eval {
            checkpoint,
            dataset,
            domain,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (name, graphs, accuracy) = match dataset {
                Some(spec) => {
                    let root = cli
                        .data_root
                        .or_else(|| ckpt.manifest.config.data_root.clone())
                        .unwrap_or_else(|| PathBuf::from("data"));
                    let mut ds = open_dataset(&spec, &root)?;
                    let acc = evaluate_on(&ckpt, &mut ds)?;
                    (ds.name.clone(), ds.len(), acc)
                }
                None => {
                    let choice = match domain {
                        Domain::Source => DomainChoice::Source,
                        Domain::Target => DomainChoice::Target,
                    };
                    let (name, acc) = evaluate_checkpoint(&ckpt, choice)?;
                    let graphs = match choice {
                        DomainChoice::Source => ckpt.manifest.data.source.graphs,
                        DomainChoice::Target => ckpt.manifest.data.target.graphs,
                    };
                    (name, graphs, acc)
                }
            };
            print_json(&serde_json::json!({ "dataset": name, "graphs": graphs, "accuracy": accuracy }))
        }
        Command::InspectTopology {
            dataset,
            index,
            filtration,
            resolution,
            diagrams,
            config,
            out,
        } => {
            let mut topo = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                    toml::from_str::<TopologyConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => TopologyConfig::default(),
            };
            if filtration != "all" {
                topo.filtrations = vec![filtration.parse::<FiltrationKind>()?];
            }
            if let Some(p) = resolution {
                topo.resolution = p;
            }
            if let Some(q) = diagrams {
                topo.diagrams = q;
            }
            let ds = open_dataset(&dataset, &default_root(cli.data_root))?;
            let report = inspect_topology(&ds, index, &topo)?;
            let text = serde_json::to_string(&report)?;
            match out {
                Some(path) => std::fs::write(&path, text + "\n").map_err(|e| Error::Io { path, source: e }),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Reproduce {
            suite,
            config,
            out,
            seeds,
        } => {
            let suite: Suite = suite.parse()?;
            let mut base = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::new(SplitDirective::Pair {
                    source: String::new(),
                    target: String::new(),
                }),
            };
            if let Some(root) = cli.data_root {
                base.data_root.get_or_insert(root);
            }
            let seeds = seeds.unwrap_or_else(|| SEEDS.to_vec());
            let report = reproduce(suite, &base, &out, &seeds)?;
            print!("{}", report.to_csv()?);
            for o in report.outcomes.iter().filter(|o| o.error.is_some()) {
                eprintln!("{} / {} / seed {}: {}", o.task, o.method, o.seed, o.error.as_deref().unwrap_or(""));
            }
            if report.failed() {
                return Err(Error::Size(format!(
                    "{} of {} runs failed",
                    report.outcomes.iter().filter(|o| o.error.is_some()).count(),
                    report.outcomes.len()
                )));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", e.to_string().lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}
