//! Workflow configuration: a single TOML file naming the primitive, data
//! files, strategy (or "auto"), oracle backend, and budget. The parsed config
//! is embedded verbatim in every report so a run can be replayed from the
//! report alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use noracle_core::cost::Budget;
use noracle_core::harness::{Primitive, StrategySpec};
use noracle_core::imputation::ImputeStrategy;
use noracle_core::oracle::remote::RemoteConfig;
use noracle_core::oracle::sim::{ErrorModel, ErrorModelError};
use noracle_core::sorting::{SortOptions, SortStrategy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{field} is required {context}")]
    Missing { field: &'static str, context: &'static str },
    #[error("unknown strategy {id:?} for {}; expected {expected}", primitive.id())]
    UnknownStrategy { id: String, primitive: Primitive, expected: &'static str },
    #[error("workflow.primitive is {} but the {subcommand} subcommand was invoked", configured.id())]
    PrimitiveMismatch { configured: Primitive, subcommand: &'static str },
    #[error("oracle.errors.{0}")]
    BadErrorModel(ErrorModelError),
    #[error("oracle.cache requires backend = \"remote\"; a warm cache would break replay")]
    CacheWithSimulated,
    #[error("evaluate.validation_size must be at least 1")]
    EmptyValidation,
    #[error("{0}")]
    BadData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Simulated,
    Remote,
}

/// How the run was invoked: a single-strategy execution, a side-by-side
/// evaluation, or a validation-split recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    #[default]
    Run,
    Evaluate,
    Recommend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSection {
    pub primitive: Primitive,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: RunMode,
    /// Where reports go; not part of the replayable snapshot.
    #[serde(default, skip_serializing)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub backend: Backend,
    pub errors: ErrorModel,
    pub remote: Option<RemoteConfig>,
    /// Persistent response cache, remote backend only.
    pub cache: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Sort and resolve: the records CSV (or JSONL).
    pub records: Option<String>,
    /// Sort: column holding the item text; row order is the reference order.
    pub text_attr: Option<String>,
    /// Resolve: column holding the true cluster, held out of serialization.
    pub cluster_attr: Option<String>,
    /// Resolve: question-pair CSV with columns id_a, id_b, label.
    pub questions: Option<String>,
    /// Impute: fully labeled CSV.
    pub labeled: Option<String>,
    /// Impute: query CSV; the target column holds ground truth and is masked
    /// on load.
    pub queries: Option<String>,
    pub target_attr: Option<String>,
    /// Per-column cell text to read as a missing value, besides empty cells.
    pub missing_markers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SortSection {
    pub scale_min: Option<i64>,
    pub scale_max: Option<i64>,
    pub insert_both_orders: Option<bool>,
    pub pairwise_both_orders: Option<bool>,
}

impl SortSection {
    pub fn options(&self) -> SortOptions {
        let defaults = SortOptions::default();
        SortOptions {
            scale_min: self.scale_min.unwrap_or(defaults.scale_min),
            scale_max: self.scale_max.unwrap_or(defaults.scale_max),
            insert_both_orders: self.insert_both_orders.unwrap_or(defaults.insert_both_orders),
            pairwise_both_orders: self
                .pairwise_both_orders
                .unwrap_or(defaults.pairwise_both_orders),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputeSection {
    pub k: usize,
    pub num_examples: usize,
}

impl Default for ImputeSection {
    fn default() -> Self {
        ImputeSection { k: 3, num_examples: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Candidate strategy ids for evaluate, recommend, and strategy = "auto".
    pub strategies: Vec<String>,
    pub validation_size: Option<u64>,
    /// Projection target for recommend; defaults to the full workload size.
    pub full_size: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowConfig {
    pub workflow: WorkflowSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub sort: SortSection,
    #[serde(default)]
    pub impute: ImputeSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

/// Parse a strategy id in the context of a primitive. Resolve ids are
/// "baseline" or "knn_k<N>" with N >= 1.
pub fn parse_strategy(primitive: Primitive, id: &str) -> Result<StrategySpec, ConfigError> {
    let unknown = |expected: &'static str| ConfigError::UnknownStrategy {
        id: id.to_owned(),
        primitive,
        expected,
    };
    match primitive {
        Primitive::Sort => {
            let strategy = match id {
                "single_prompt" => SortStrategy::SinglePrompt,
                "pairwise" => SortStrategy::Pairwise,
                "rating" => SortStrategy::Rating,
                "sort_then_insert" => SortStrategy::SortThenInsert,
                _ => {
                    return Err(unknown(
                        "single_prompt, pairwise, rating, or sort_then_insert",
                    ))
                }
            };
            Ok(StrategySpec::Sort(strategy))
        }
        Primitive::Resolve => {
            if id == "baseline" {
                return Ok(StrategySpec::Resolve { k: 0 });
            }
            let expected = "baseline or knn_k<N>";
            let count = id.strip_prefix("knn_k").ok_or_else(|| unknown(expected))?;
            match count.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(StrategySpec::Resolve { k }),
                _ => Err(unknown(expected)),
            }
        }
        Primitive::Impute => {
            let strategy = match id {
                "knn" => ImputeStrategy::Knn,
                "oracle_only" => ImputeStrategy::OracleOnly,
                "hybrid" => ImputeStrategy::Hybrid,
                _ => return Err(unknown("knn, oracle_only, or hybrid")),
            };
            Ok(StrategySpec::Impute(strategy))
        }
    }
}

fn resolve_path(raw: &mut Option<String>, base: &Path) {
    if let Some(path) = raw {
        if Path::new(path).is_relative() {
            *path = base.join(&*path).to_string_lossy().into_owned();
        }
    }
}

impl WorkflowConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: WorkflowConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let parent = match path.parent() {
            Some(parent) if !parent.as_os_str().is_empty() => parent.to_path_buf(),
            _ => PathBuf::from("."),
        };
        // Absolute base, so the snapshot stays replayable from any directory.
        let base = std::fs::canonicalize(&parent).unwrap_or(parent);
        config.resolve_paths(&base);
        Ok(config)
    }

    /// Rebase relative data paths onto the config file's directory, so the
    /// snapshot embedded in a report stays valid from any working directory.
    fn resolve_paths(&mut self, base: &Path) {
        resolve_path(&mut self.data.records, base);
        resolve_path(&mut self.data.questions, base);
        resolve_path(&mut self.data.labeled, base);
        resolve_path(&mut self.data.queries, base);
        resolve_path(&mut self.oracle.cache, base);
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.workflow.output.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// True when the run picks its strategy from validation evaluations.
    pub fn is_auto(&self) -> bool {
        self.workflow.strategy.as_deref() == Some("auto")
    }

    fn candidate_ids(&self) -> Result<&[String], ConfigError> {
        if self.evaluate.strategies.is_empty() {
            return Err(ConfigError::Missing {
                field: "evaluate.strategies",
                context: "to compare strategies",
            });
        }
        Ok(&self.evaluate.strategies)
    }

    fn require(field: &'static str, value: &Option<String>, context: &'static str) -> Result<(), ConfigError> {
        if value.is_none() {
            return Err(ConfigError::Missing { field, context });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let workflow = &self.workflow;
        let data = &self.data;
        match workflow.primitive {
            Primitive::Sort => {
                Self::require("data.records", &data.records, "for the sort primitive")?;
                Self::require("data.text_attr", &data.text_attr, "for the sort primitive")?;
            }
            Primitive::Resolve => {
                Self::require("data.records", &data.records, "for the resolve primitive")?;
                Self::require("data.questions", &data.questions, "for the resolve primitive")?;
                if self.oracle.backend == Backend::Simulated {
                    Self::require(
                        "data.cluster_attr",
                        &data.cluster_attr,
                        "as the simulated backend's ground truth",
                    )?;
                }
            }
            Primitive::Impute => {
                Self::require("data.labeled", &data.labeled, "for the impute primitive")?;
                Self::require("data.queries", &data.queries, "for the impute primitive")?;
                Self::require("data.target_attr", &data.target_attr, "for the impute primitive")?;
            }
        }

        match self.oracle.backend {
            Backend::Simulated => {
                self.oracle.errors.validate().map_err(ConfigError::BadErrorModel)?;
                if self.oracle.cache.is_some() {
                    return Err(ConfigError::CacheWithSimulated);
                }
            }
            Backend::Remote => {
                let remote = self.oracle.remote.as_ref().ok_or(ConfigError::Missing {
                    field: "oracle.remote",
                    context: "for the remote backend",
                })?;
                if remote.endpoint.is_empty() {
                    return Err(ConfigError::Missing {
                        field: "oracle.remote.endpoint",
                        context: "for the remote backend",
                    });
                }
            }
        }

        let needs_candidates = workflow.mode != RunMode::Run || self.is_auto();
        if needs_candidates {
            for id in self.candidate_ids()? {
                parse_strategy(workflow.primitive, id)?;
            }
        }
        let needs_validation_split = workflow.mode == RunMode::Recommend || self.is_auto();
        if needs_validation_split {
            match self.evaluate.validation_size {
                None => {
                    return Err(ConfigError::Missing {
                        field: "evaluate.validation_size",
                        context: "to recommend a strategy",
                    })
                }
                Some(0) => return Err(ConfigError::EmptyValidation),
                Some(_) => {}
            }
        }
        if workflow.mode == RunMode::Run && !self.is_auto() {
            let id = workflow.strategy.as_deref().ok_or(ConfigError::Missing {
                field: "workflow.strategy",
                context: "to run a primitive (or pass --strategy)",
            })?;
            parse_strategy(workflow.primitive, id)?;
        }
        Ok(())
    }
}
