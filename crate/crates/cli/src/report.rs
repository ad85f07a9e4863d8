//! Report rendering and replay comparison. Every run emits report.json (the
//! machine-readable record, embedding the config snapshot that replay
//! re-executes) and table.txt (one strategy per row). Serialization is fully
//! deterministic, so replay can compare raw bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use noracle_core::harness::{Recommendation, StrategyReport, WorkloadOutcome};
use serde::Serialize;
use serde_json::Value;

use crate::config::WorkflowConfig;

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: WorkflowConfig,
    /// Versions of every prompt template in effect for the run.
    pub templates: BTreeMap<String, u32>,
    /// Per-strategy validation results, in candidate order.
    pub evaluations: Vec<StrategyReport>,
    /// Strategy ids on the cost-accuracy Pareto frontier of `evaluations`.
    pub frontier: Option<Vec<String>>,
    pub recommendation: Option<Recommendation>,
    /// The strategy actually executed on the full workload, with its payload.
    pub final_run: Option<StrategyReport>,
    pub accuracy: Option<BTreeMap<String, f64>>,
    pub outcome: Option<WorkloadOutcome>,
}

impl RunReport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    /// The human-readable summary: strategy | metric | prompt tokens |
    /// completion tokens, one row per evaluation plus the final run.
    pub fn to_table(&self) -> String {
        let rows: Vec<&StrategyReport> =
            self.evaluations.iter().chain(self.final_run.iter()).collect();
        let metric_name =
            rows.first().map_or("metric", |row| row.metric_name.as_str());
        let mut table = format!("strategy | {metric_name} | prompt tokens | completion tokens\n");
        for row in rows {
            table.push_str(&format!(
                "{} | {:.4} | {} | {}\n",
                row.strategy, row.metric, row.ledger.prompt_tokens, row.ledger.completion_tokens
            ));
        }
        table
    }

    /// Writes report.json and table.txt under `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let json_path = dir.join("report.json");
        let table_path = dir.join("table.txt");
        fs::File::create(&json_path)?.write_all(&self.to_json_bytes())?;
        fs::write(&table_path, self.to_table())?;
        Ok((json_path, table_path))
    }
}

/// Dotted path to the first field where the two JSON documents differ, for
/// replay-mismatch diagnostics. None when they are equal.
pub fn first_divergence(recorded: &Value, replayed: &Value) -> Option<String> {
    fn walk(a: &Value, b: &Value, path: &str) -> Option<String> {
        match (a, b) {
            (Value::Object(left), Value::Object(right)) => {
                let mut keys: Vec<&String> = left.keys().chain(right.keys()).collect();
                keys.sort();
                keys.dedup();
                for key in keys {
                    let child = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                    match (left.get(key), right.get(key)) {
                        (Some(x), Some(y)) => {
                            if let Some(found) = walk(x, y, &child) {
                                return Some(found);
                            }
                        }
                        _ => return Some(child),
                    }
                }
                None
            }
            (Value::Array(left), Value::Array(right)) => {
                for (i, (x, y)) in left.iter().zip(right).enumerate() {
                    if let Some(found) = walk(x, y, &format!("{path}[{i}]")) {
                        return Some(found);
                    }
                }
                if left.len() != right.len() {
                    return Some(format!("{path}[{}]", left.len().min(right.len())));
                }
                None
            }
            _ => (a != b).then(|| path.to_owned()),
        }
    }
    walk(recorded, replayed, "")
}
