use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderKind, ModelConfig};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Environment variable naming the directory that holds TUDataset folders.
pub const DATA_ROOT_ENV: &str = "LPTGNN_DATA_ROOT";

/// How source and target domains are built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "split", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitDirective {
    /// Two separate datasets.
    Pair { source: String, target: String },
    /// Two edge-density quartiles of one dataset.
    Quartiles {
        dataset: String,
        source: usize,
        target: usize,
    },
    /// A 1:2 / 2:1 class-ratio split of one binary dataset. The split seed
    /// defaults to the training seed.
    Subpopulation {
        dataset: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split_seed: Option<u64>,
    },
}

impl SplitDirective {
    pub fn kind(&self) -> &'static str {
        match self {
            SplitDirective::Pair { .. } => "pair",
            SplitDirective::Quartiles { .. } => "quartiles",
            SplitDirective::Subpopulation { .. } => "subpopulation",
        }
    }

    /// Short task label such as `C→CM` or `M0→M1`.
    pub fn task_label(&self) -> String {
        match self {
            SplitDirective::Pair { source, target } => format!("{}→{}", short_name(source), short_name(target)),
            SplitDirective::Quartiles { source, target, .. } => format!("M{source}→M{target}"),
            SplitDirective::Subpopulation { dataset, .. } => format!("{dataset} 1:2→2:1"),
        }
    }
}

/// Conventional abbreviations for the benchmark datasets.
pub fn short_name(dataset: &str) -> &str {
    match dataset {
        "PROTEINS" => "P",
        "DD" => "D",
        "COX2" => "C",
        "COX2_MD" => "CM",
        "BZR" => "B",
        "BZR_MD" => "BM",
        other => other,
    }
}

/// A complete, self-describing experiment description. Every field has a
/// default except the split directive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub data: SplitDirective,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn new(data: SplitDirective) -> Self {
        Self {
            task: None,
            data_root: None,
            output: None,
            data,
            train: TrainConfig::default(),
            model: ModelConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn task_label(&self) -> String {
        self.task.clone().unwrap_or_else(|| self.data.task_label())
    }

    pub fn validate(&self) -> Result<()> {
        if let SplitDirective::Quartiles { source, target, .. } = self.data {
            if source > 3 || target > 3 || source == target {
                return Err(Error::Config(format!(
                    "quartile tasks need two distinct quartiles in 0..=3, got {source} and {target}"
                )));
            }
        }
        if self.train.encoder == EncoderKind::Gin && (self.train.disable_conv || self.train.disable_topo) {
            return Err(Error::Config("branch ablations apply to the TGNN encoder only".into()));
        }
        self.train.validate()?;
        self.model.validate()
    }

    /// Directory holding the datasets: the configured root, else the
    /// environment variable, else `./data`.
    pub fn resolved_data_root(&self) -> PathBuf {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    /// Copy with every implicit value written out: task label, data root,
    /// and the subpopulation split seed.
    pub fn materialized(&self) -> Self {
        let mut c = self.clone();
        c.task = Some(self.task_label());
        c.data_root = Some(self.resolved_data_root());
        if let SplitDirective::Subpopulation { split_seed, .. } = &mut c.data {
            split_seed.get_or_insert(self.train.seed);
        }
        c
    }
}
