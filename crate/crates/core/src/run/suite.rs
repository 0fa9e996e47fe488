use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use super::{execute, slug, RunConfig, SplitDirective};
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Seeds every suite cell is averaged over.
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// A model variant in a results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    LpGin,
    NoTopo,
    NoConv,
    NoSup,
    NoLp,
    LpTgnn,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::LpGin => "LP-GIN",
            Method::NoTopo => "LP-TGNN/Topo",
            Method::NoConv => "LP-TGNN/Conv",
            Method::NoSup => "LP-TGNN/Sup",
            Method::NoLp => "LP-TGNN/LP",
            Method::LpTgnn => "LP-TGNN",
        }
    }

    /// Sets the encoder and ablation flags of `config` for this variant.
    pub fn apply(self, config: &mut TrainConfig) {
        config.encoder = if self == Method::LpGin {
            EncoderKind::Gin
        } else {
            EncoderKind::Tgnn
        };
        config.disable_topo = self == Method::NoTopo;
        config.disable_conv = self == Method::NoConv;
        config.disable_sup = self == Method::NoSup;
        config.disable_lp = self == Method::NoLp;
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Cross-dataset benchmark pairs.
    Benchmarks,
    /// The twelve edge-density quartile tasks.
    Mutagenicity,
    /// Class-ratio shift on MUTAG.
    Synthetic,
    /// Branch and loss ablations on the quartile tasks, with pseudo-label
    /// accuracy.
    Ablations,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benchmarks" => Ok(Suite::Benchmarks),
            "mutagenicity" => Ok(Suite::Mutagenicity),
            "synthetic" => Ok(Suite::Synthetic),
            "ablations" => Ok(Suite::Ablations),
            other => Err(Error::Config(format!(
                "unknown suite {other:?}; expected benchmarks, mutagenicity, synthetic or ablations"
            ))),
        }
    }
}

fn quartile_tasks() -> Vec<SplitDirective> {
    const ORDER: [(usize, usize); 12] = [
        (0, 1),
        (1, 0),
        (0, 2),
        (2, 0),
        (0, 3),
        (3, 0),
        (1, 2),
        (2, 1),
        (1, 3),
        (3, 1),
        (2, 3),
        (3, 2),
    ];
    ORDER
        .iter()
        .map(|&(source, target)| SplitDirective::Quartiles {
            dataset: "Mutagenicity".into(),
            source,
            target,
        })
        .collect()
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Benchmarks => "benchmarks",
            Suite::Mutagenicity => "mutagenicity",
            Suite::Synthetic => "synthetic",
            Suite::Ablations => "ablations",
        }
    }

    pub fn tasks(self) -> Vec<SplitDirective> {
        match self {
            Suite::Benchmarks => [
                ("PROTEINS", "DD"),
                ("DD", "PROTEINS"),
                ("COX2", "COX2_MD"),
                ("COX2_MD", "COX2"),
                ("BZR", "BZR_MD"),
                ("BZR_MD", "BZR"),
            ]
            .iter()
            .map(|&(s, t)| SplitDirective::Pair {
                source: s.into(),
                target: t.into(),
            })
            .collect(),
            Suite::Mutagenicity | Suite::Ablations => quartile_tasks(),
            Suite::Synthetic => vec![SplitDirective::Subpopulation {
                dataset: "MUTAG".into(),
                split_seed: None,
            }],
        }
    }

    pub fn methods(self) -> Vec<Method> {
        use Method::*;
        match self {
            Suite::Benchmarks | Suite::Mutagenicity => vec![LpGin, LpTgnn],
            Suite::Synthetic => vec![LpGin, NoTopo, NoConv, NoSup, NoLp, LpTgnn],
            Suite::Ablations => vec![NoTopo, NoConv, NoSup, NoLp, LpTgnn],
        }
    }
}

/// One (task, method, seed) run of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: String,
    pub method: Method,
    pub seed: u64,
    pub accuracy: Option<f64>,
    /// Pseudo-label accuracy logged for the kept epoch.
    pub pseudo_acc: Option<f64>,
    pub error: Option<String>,
}

/// Mean and sample standard deviation of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl CellSummary {
    /// Percentages with one decimal, e.g. `93.6±1.2`.
    pub fn percent(&self) -> String {
        format!("{:.1}±{:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}

pub fn summarize(values: &[f64]) -> CellSummary {
    let std = if values.len() > 1 { values.std_dev() } else { 0.0 };
    CellSummary {
        mean: values.mean(),
        std,
        n: values.len(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub tasks: Vec<String>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub outcomes: Vec<TaskOutcome>,
}

const FAILED: &str = "failed";

impl SuiteReport {
    pub fn failed(&self) -> bool {
        self.outcomes.iter().any(|o| o.error.is_some())
    }

    /// Per-seed values of one cell in seed order, or `None` if any seed failed.
    fn cell(&self, task: &str, method: Method, pick: impl Fn(&TaskOutcome) -> Option<f64>) -> Option<Vec<f64>> {
        self.seeds
            .iter()
            .map(|&s| {
                self.outcomes
                    .iter()
                    .find(|o| o.task == task && o.method == method && o.seed == s)
                    .and_then(&pick)
            })
            .collect()
    }

    fn row(&self, label: &str, method: Method, pick: impl Fn(&TaskOutcome) -> Option<f64> + Copy) -> Vec<String> {
        let cells: Vec<Option<Vec<f64>>> = self.tasks.iter().map(|t| self.cell(t, method, pick)).collect();
        let mut row = vec![label.to_string()];
        row.extend(
            cells
                .iter()
                .map(|c| c.as_deref().map_or(FAILED.to_string(), |v| summarize(v).percent())),
        );
        if self.tasks.len() > 1 {
            let all: Option<Vec<Vec<f64>>> = cells.into_iter().collect();
            row.push(all.map_or(FAILED.to_string(), |cells| {
                let per_seed: Vec<f64> = (0..self.seeds.len())
                    .map(|s| cells.iter().map(|c| c[s]).sum::<f64>() / cells.len() as f64)
                    .collect();
                summarize(&per_seed).percent()
            }));
        }
        row
    }

    /// Table rows: a header, then one row per method (tasks as columns).
    /// The ablation suite adds the LP-TGNN pseudo-label accuracy.
    pub fn table(&self) -> Vec<Vec<String>> {
        let mut header = vec!["method".to_string()];
        if self.tasks.len() > 1 {
            header.extend(self.tasks.iter().cloned());
            header.push("Avg.".into());
        } else {
            header.push("Accuracy".into());
        }
        let mut rows = vec![header];
        for &m in &self.methods {
            rows.push(self.row(m.label(), m, |o| o.accuracy));
        }
        if self.suite == Suite::Ablations.name() {
            rows.push(self.row("LP-TGNN pseudo-label", Method::LpTgnn, |o| o.pseudo_acc));
        }
        rows
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.table() {
            w.write_record(&row).map_err(|e| Error::Config(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 cells"))
    }
}

/// Runs every (task, method, seed) of `suite` with `base` supplying the
/// data root and hyperparameters. Each run writes its artifacts under
/// `out/<task>/<method>/seed<k>`; the table goes to `out/table.csv`.
/// Failed runs are recorded and the rest of the suite continues.
pub fn reproduce(suite: Suite, base: &RunConfig, out: &Path, seeds: &[u64]) -> Result<SuiteReport> {
    let tasks = suite.tasks();
    let methods = suite.methods();
    let jobs: Vec<(&SplitDirective, Method, u64)> = tasks
        .iter()
        .flat_map(|t| methods.iter().flat_map(move |&m| seeds.iter().map(move |&s| (t, m, s))))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(task, method, seed)| {
            let mut config = base.clone();
            config.task = None;
            config.output = None;
            config.data = task.clone();
            config.train.seed = seed;
            method.apply(&mut config.train);
            let label = config.task_label();
            let dir = out
                .join(slug(&label))
                .join(slug(method.label()))
                .join(format!("seed{seed}"));
            let run = execute(&config).and_then(|r| r.write(&dir).map(|_| r));
            let (accuracy, pseudo_acc, error) = match run {
                Ok(r) => {
                    let kept = r.outcome.best_epoch.map_or(r.outcome.metrics.len(), |e| e);
                    let pseudo = r.outcome.metrics.get(kept.wrapping_sub(1)).and_then(|m| m.pseudo_acc);
                    (Some(r.result.accuracy), pseudo, None)
                }
                Err(e) => (None, None, Some(e.to_string())),
            };
            TaskOutcome {
                task: label,
                method,
                seed,
                accuracy,
                pseudo_acc,
                error,
            }
        })
        .collect();
    let report = SuiteReport {
        suite: suite.name().into(),
        tasks: tasks.iter().map(SplitDirective::task_label).collect(),
        methods,
        seeds: seeds.to_vec(),
        outcomes,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table = out.join("table.csv");
    std::fs::write(&table, report.to_csv()?).map_err(|e| Error::io(&table, e))?;
    let summary = out.join("suite.json");
    std::fs::write(&summary, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&summary, e))?;
    Ok(report)
}
