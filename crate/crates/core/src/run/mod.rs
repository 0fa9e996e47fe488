//! Configured experiment runs: domain construction, run manifests,
//! checkpoints, topology inspection and reproduction suites.

mod config;
mod inspect;
mod suite;

pub use config::{short_name, RunConfig, SplitDirective, DATA_ROOT_ENV};
pub use inspect::{inspect_topology, DiagramPoint, GraphTopologyReport, ImageReport, TopologyBlock};
pub use suite::{reproduce, summarize, CellSummary, Method, Suite, SuiteReport, TaskOutcome, SEEDS};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::encoders::{Branch, Model};
use crate::error::{Error, Result};
use crate::graph_io::{
    align_node_features, parse_tudataset, split_by_edge_density, split_subpopulation_shift, DomainDataset,
    DomainRole, ShiftAllocation,
};
use crate::train::{evaluate, train, EpochMetrics, TrainOutcome};

/// Reads dataset `name` from `root/name/`.
pub fn load_dataset(root: &Path, name: &str) -> Result<DomainDataset> {
    let dir = root.join(name);
    if !dir.is_dir() {
        return Err(Error::Format {
            file: dir,
            message: "dataset directory does not exist".into(),
        });
    }
    parse_tudataset(&dir, name)
}

/// Labeled source and target domains of a run.
#[derive(Debug, Clone)]
pub struct Domains {
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub allocation: Option<ShiftAllocation>,
}

/// Builds the source and target domains described by a materialized config.
pub fn build_domains(config: &RunConfig) -> Result<Domains> {
    let root = config.resolved_data_root();
    match &config.data {
        SplitDirective::Pair { source, target } => {
            let mut s = load_dataset(&root, source)?;
            let mut t = load_dataset(&root, target)?.with_role(DomainRole::Target);
            if s.class_count != t.class_count {
                return Err(Error::Unsupported(format!(
                    "{source} has {} classes but {target} has {}",
                    s.class_count, t.class_count
                )));
            }
            align_node_features(&mut s, &mut t)?;
            Ok(Domains {
                source: s,
                target: t,
                allocation: None,
            })
        }
        SplitDirective::Quartiles { dataset, source, target } => {
            let parts = split_by_edge_density(&load_dataset(&root, dataset)?)?;
            Ok(Domains {
                source: parts[*source].clone().with_role(DomainRole::Source),
                target: parts[*target].clone().with_role(DomainRole::Target),
                allocation: None,
            })
        }
        SplitDirective::Subpopulation { dataset, split_seed } => {
            let split = split_subpopulation_shift(&load_dataset(&root, dataset)?, split_seed.unwrap_or(config.seed()))?;
            Ok(Domains {
                source: split.source,
                target: split.target,
                allocation: Some(split.allocation),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub name: String,
    pub graphs: usize,
    pub class_counts: Vec<usize>,
    pub feature_dim: usize,
}

impl DomainSummary {
    fn of(ds: &DomainDataset) -> Self {
        Self {
            name: ds.name.clone(),
            graphs: ds.len(),
            class_counts: ds.class_counts(),
            feature_dim: ds.feature_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub split: String,
    pub source: DomainSummary,
    pub target: DomainSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<ShiftAllocation>,
    /// Raw node labels behind the one-hot feature columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_label_vocabulary: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub branches: Vec<Branch>,
    pub feature_dim: usize,
    pub classes: usize,
    /// Width of each graph-convolution layer (`base^2`).
    pub gcn_layer_width: usize,
    pub representation_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_tensor_shape: Option<[usize; 4]>,
    pub parameter_count: usize,
}

/// Everything needed to re-execute a run and interpret its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: String,
    pub seed: u64,
    pub version: String,
    pub config: RunConfig,
    pub data: DataSummary,
    pub model: ModelSummary,
    /// Fixed modelling conventions that the configuration does not expose.
    pub conventions: BTreeMap<String, String>,
}

fn conventions() -> BTreeMap<String, String> {
    [
        ("node_features", "one-hot node labels, otherwise a constant 1 column"),
        ("edge_density", "|E| / (N (N - 1) / 2), ties kept in dataset order"),
        ("subpopulation_leftovers", "graphs beyond the largest (k, 2k) / (2k, k) allocation are unused"),
        ("domain_cycling", "the smaller domain cycles within an epoch"),
        ("essential_bars", "death capped at the graph's maximum filtration value"),
        ("elder_rule_ties", "the smaller node index survives"),
        ("pi_window", "per graph and filtration: births [min f, max f], persistence [0, max f - min f]"),
        ("pi_normalization", "each image divided by its peak pixel when normalize = true"),
        ("pi_bandwidth", "one pixel in each direction unless set"),
        ("diagram_channels", "1 = H0, 2 = H0 and H1"),
        ("branch_combination", "mean of branch representations"),
        ("confidence", "softmax probability of the predicted class"),
        ("argmax_ties", "lowest class index"),
        ("pseudo_labels", "recomputed every step, gradient-detached"),
        ("empty_neighbor_set", "target skipped"),
        ("neighbor_aggregation", "mean of neighbour source representations before the classifier"),
        ("consistency_divisor", "full target batch size"),
        ("batch_norm_running_stats", "updated from the supervised pass, momentum on the old value"),
        ("optimizer", "Adam, betas (0.9, 0.999), epsilon 1e-8"),
        ("model_selection", "final epoch unless patience triggers, then the best target-accuracy epoch"),
        ("pseudo_label_metrics", "first branch only"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

impl Manifest {
    pub fn new(config: &RunConfig, domains: &Domains, model: &Model, params: &ParamStore) -> Self {
        let config = config.materialized();
        let topo = model.needs_images().then(|| model.config().topo.topology.tensor_shape());
        Self {
            task: config.task_label(),
            seed: config.seed(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            data: DataSummary {
                split: config.data.kind().to_string(),
                source: DomainSummary::of(&domains.source),
                target: DomainSummary::of(&domains.target),
                allocation: domains.allocation.clone(),
                node_label_vocabulary: domains.source.node_label_values.clone(),
            },
            model: ModelSummary {
                branches: model.branches().to_vec(),
                feature_dim: model.feature_dim(),
                classes: model.classes(),
                gcn_layer_width: model.config().gcn.base.pow(2),
                representation_dim: model.config().hidden,
                pi_tensor_shape: topo,
                parameter_count: params.scalar_count(),
            },
            config,
            conventions: conventions(),
        }
    }
}

/// Manifest plus trained parameters; enough to rebuild the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Rebuilds the model and loads the stored parameters into it.
    pub fn restore(&self) -> Result<(Model, ParamStore)> {
        let m = &self.manifest;
        let (model, mut params) = Model::new(
            &m.config.model,
            &m.model.branches,
            m.model.feature_dim,
            m.model.classes,
            m.seed,
        )?;
        params.load_values(&self.params)?;
        Ok((model, params))
    }

    /// Re-encodes `dataset`'s one-hot node features over the checkpoint's
    /// vocabulary, then checks the feature width.
    pub fn conform(&self, dataset: &mut DomainDataset) -> Result<()> {
        if let (Some(vocab), Some(_)) = (&self.manifest.data.node_label_vocabulary, &dataset.node_label_values) {
            let mut reference = DomainDataset {
                name: "checkpoint".into(),
                role: DomainRole::Target,
                class_count: self.manifest.model.classes,
                graphs: Vec::new(),
                label_values: Vec::new(),
                node_label_values: Some(vocab.clone()),
            };
            align_node_features(dataset, &mut reference)?;
        }
        let expected = self.manifest.model.feature_dim;
        if dataset.feature_dim() != expected {
            return Err(Error::Shape(format!(
                "dataset {} has {} node features, checkpoint expects {expected}",
                dataset.name,
                dataset.feature_dim()
            )));
        }
        if dataset.class_count != self.manifest.model.classes {
            return Err(Error::Shape(format!(
                "dataset {} has {} classes, checkpoint expects {}",
                dataset.name, dataset.class_count, self.manifest.model.classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: String,
    pub accuracy: f64,
    pub seed: u64,
}

/// A finished run with its artifacts in memory.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub result: RunResult,
    pub manifest: Manifest,
    pub outcome: TrainOutcome,
}

impl RunRecord {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            manifest: self.manifest.clone(),
            params: self.outcome.params.clone(),
        }
    }

    /// Writes `config.toml`, `manifest.json`, `metrics.jsonl`,
    /// `checkpoint.json` and `result.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let config = self.manifest.config.to_toml()?;
        fs::write(dir.join("config.toml"), config).map_err(|e| Error::io(dir.join("config.toml"), e))?;
        write_json(&dir.join("manifest.json"), &self.manifest)?;
        write_metrics(&dir.join("metrics.jsonl"), &self.outcome.metrics)?;
        self.checkpoint().save(&dir.join("checkpoint.json"))?;
        write_json(&dir.join("result.json"), &self.result)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for m in metrics {
        writeln!(file, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Trains and evaluates one configured run on the full target domain.
pub fn execute(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let config = config.materialized();
    let domains = build_domains(&config)?;
    let target_labels = domains.target.labels()?;
    let outcome = train(
        &config.model,
        &config.train,
        &domains.source,
        &domains.target.strip_labels(),
        Some(&target_labels),
    )?;
    let accuracy = evaluate(&outcome.model, &outcome.params, &domains.target)?;
    let manifest = Manifest::new(&config, &domains, &outcome.model, &outcome.params);
    Ok(RunRecord {
        result: RunResult {
            task: manifest.task.clone(),
            accuracy,
            seed: config.seed(),
        },
        manifest,
        outcome,
    })
}

/// Output directory for a run: explicit, else configured, else
/// `runs/<task>-seed<seed>`.
pub fn output_dir(config: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}", slug(&config.task_label()), config.seed())))
}

/// File-system friendly form of a task or method label.
pub fn slug(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        match c {
            '→' => out.push('-'),
            '/' => out.push_str("-no-"),
            c if c.is_ascii_alphanumeric() || c == '_' || c == '-' => out.push(c.to_ascii_lowercase()),
            _ => {
                if !out.ends_with('_') {
                    out.push('_');
                }
            }
        }
    }
    out
}

/// Which domain of a checkpoint's run to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainChoice {
    Source,
    Target,
}

/// Accuracy of a checkpoint on one domain of the run that produced it.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, domain: DomainChoice) -> Result<(String, f64)> {
    let domains = build_domains(&checkpoint.manifest.config)?;
    let mut ds = match domain {
        DomainChoice::Source => domains.source,
        DomainChoice::Target => domains.target,
    };
    evaluate_on(checkpoint, &mut ds).map(|a| (ds.name.clone(), a))
}

/// Accuracy of a checkpoint on an arbitrary labeled dataset.
pub fn evaluate_on(checkpoint: &Checkpoint, dataset: &mut DomainDataset) -> Result<f64> {
    checkpoint.conform(dataset)?;
    let (model, params) = checkpoint.restore()?;
    evaluate(&model, &params, dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_path_safe() {
        assert_eq!(slug("M0→M1"), "m0-m1");
        assert_eq!(slug("LP-TGNN/Topo"), "lp-tgnn-no-topo");
        assert_eq!(slug("MUTAG 1:2→2:1"), "mutag_1_2-2_1");
    }

    #[test]
    fn missing_dataset_directory_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path(), "NOPE"), Err(Error::Format { .. })));
    }

    #[test]
    fn default_output_uses_task_and_seed() {
        let mut c = RunConfig::new(SplitDirective::Quartiles {
            dataset: "Mutagenicity".into(),
            source: 1,
            target: 2,
        });
        c.train.seed = 4;
        assert_eq!(output_dir(&c, None), PathBuf::from("runs/m1-m2-seed4"));
        assert_eq!(output_dir(&c, Some(Path::new("x"))), PathBuf::from("x"));
    }
}
