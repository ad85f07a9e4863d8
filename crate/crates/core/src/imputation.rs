//! Missing-value imputation: k-NN mode over embedded neighbors, oracle
//! prompting with few-shot examples, and a hybrid that consults the oracle
//! only when the neighbors disagree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostLedger;
use crate::oracle::embed::{l2_distance, Embedder};
use crate::oracle::{OracleError, ParsedAnswer};
use crate::record::{serialize_record, Dataset, Record, RecordId};
use crate::session::OracleRun;
use crate::template::{RenderError, UnitTask, IMPUTE_TEMPLATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeStrategy {
    Knn,
    OracleOnly,
    Hybrid,
}

impl ImputeStrategy {
    pub fn id(&self) -> &'static str {
        match self {
            ImputeStrategy::Knn => "knn",
            ImputeStrategy::OracleOnly => "oracle_only",
            ImputeStrategy::Hybrid => "hybrid",
        }
    }
}

/// One imputation workload: a complete labeled set serving as both the
/// neighbor store and the few-shot example pool, and a query set whose
/// records are each missing exactly the target attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationJob {
    pub labeled: Dataset,
    pub queries: Dataset,
    pub target_attr: String,
    pub k: usize,
    pub num_examples: usize,
}

impl ImputationJob {
    pub fn validate(&self) -> Result<(), ImputeError> {
        if self.labeled.is_empty() {
            return Err(ImputeError::EmptyLabeledSet);
        }
        if self.labeled.schema != self.queries.schema {
            return Err(ImputeError::SchemaMismatch);
        }
        if !self.labeled.schema.contains(&self.target_attr) {
            return Err(ImputeError::UnknownTarget(self.target_attr.clone()));
        }
        if self.k == 0 || self.k > self.labeled.len() {
            return Err(ImputeError::BadNeighborCount { k: self.k, labeled: self.labeled.len() });
        }
        if self.num_examples > self.labeled.len() {
            return Err(ImputeError::BadNeighborCount {
                k: self.num_examples,
                labeled: self.labeled.len(),
            });
        }
        for record in &self.labeled.records {
            if record.text(&self.target_attr).is_none() {
                return Err(ImputeError::LabeledValueMissing(record.id.to_string()));
            }
        }
        for record in &self.queries.records {
            if record.missing_attrs() != vec![self.target_attr.as_str()] {
                return Err(ImputeError::QueryNotMasked(record.id.to_string()));
            }
        }
        Ok(())
    }
}

/// Where an imputed value came from: neighbor vote or oracle call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputeSource {
    Knn,
    Oracle,
}

/// One query record's result. `value` is None when the oracle reply never
/// parsed or the call was withheld by the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedValue {
    pub id: RecordId,
    pub value: Option<String>,
    pub source: ImputeSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationOutcome {
    pub strategy: ImputeStrategy,
    pub values: Vec<ImputedValue>,
    pub ledger: CostLedger,
    pub truncated: bool,
    pub unanswered: u64,
}

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("labeled and query schemas differ")]
    SchemaMismatch,
    #[error("target attribute {0:?} is not in the schema")]
    UnknownTarget(String),
    #[error("neighbor count {k} is outside 1..={labeled}")]
    BadNeighborCount { k: usize, labeled: usize },
    #[error("labeled record {0:?} is missing the target attribute")]
    LabeledValueMissing(String),
    #[error("query record {0:?} must be missing exactly the target attribute")]
    QueryNotMasked(String),
    #[error("record {0:?} serializes to nothing; no context to impute from")]
    InsufficientContext(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// A labeled record prepared for neighbor search: its serialization with the
/// target excluded, the embedding of that text, and the target value.
#[derive(Debug, Clone)]
pub struct LabeledEntry {
    pub id: RecordId,
    pub serialized: String,
    pub value: String,
    embedding: Vec<f32>,
}

/// Read-only neighbor index over the labeled set. Built once per job; lookups
/// never touch the oracle.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    entries: Vec<LabeledEntry>,
}

impl KnnIndex {
    /// Embeds every labeled record's serialization (target excluded, so the
    /// text is comparable with query serializations).
    pub fn build(job: &ImputationJob, embedder: &dyn Embedder) -> Result<Self, ImputeError> {
        job.validate()?;
        let entries = job
            .labeled
            .records
            .iter()
            .map(|record| {
                let serialized =
                    serialize_record(record, &job.labeled.schema, Some(&job.target_attr));
                LabeledEntry {
                    id: record.id.clone(),
                    embedding: embedder.embed(&serialized),
                    value: record.text(&job.target_attr).expect("validated").to_owned(),
                    serialized,
                }
            })
            .collect();
        Ok(KnnIndex { entries })
    }

    /// The `count` nearest entries by L2 distance, ties broken by ascending
    /// labeled-set index.
    pub fn nearest(&self, embedding: &[f32], count: usize) -> Vec<&LabeledEntry> {
        let mut order: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, entry)| (l2_distance(embedding, &entry.embedding), i))
            .collect();
        order.sort_by(|(da, ia), (db, ib)| da.total_cmp(db).then(ia.cmp(ib)));
        order.into_iter().take(count).map(|(_, i)| &self.entries[i]).collect()
    }
}

fn query_serialization(record: &Record, job: &ImputationJob) -> String {
    serialize_record(record, &job.queries.schema, Some(&job.target_attr))
}

/// Mode of the k nearest neighbors' target values. Among equally common
/// values the one whose closest supporting neighbor ranks first wins, so the
/// result is deterministic. `unanimous` is true iff all k values agree.
pub fn knn_impute(
    record: &Record,
    job: &ImputationJob,
    index: &KnnIndex,
    embedder: &dyn Embedder,
) -> (String, bool) {
    let embedding = embedder.embed(&query_serialization(record, job));
    let neighbors = index.nearest(&embedding, job.k);
    // Neighbors arrive sorted by distance then index; strict > keeps the
    // earliest-seen value among count ties.
    let mut tallies: Vec<(&str, usize)> = Vec::new();
    for neighbor in &neighbors {
        match tallies.iter_mut().find(|(value, _)| *value == neighbor.value) {
            Some((_, count)) => *count += 1,
            None => tallies.push((&neighbor.value, 1)),
        }
    }
    let unanimous = tallies.len() == 1;
    let mut best = tallies[0];
    for &tally in &tallies[1..] {
        if tally.1 > best.1 {
            best = tally;
        }
    }
    (best.0.to_owned(), unanimous)
}

/// Builds the impute prompt for one record: a block of example lines (each
/// "serialized target is value."), then the query serialization and the
/// dangling "target is" for the oracle to complete.
fn render_impute_task(
    record: &Record,
    job: &ImputationJob,
    index: &KnnIndex,
    embedder: &dyn Embedder,
    run: &OracleRun,
) -> Result<UnitTask, ImputeError> {
    let serialized = query_serialization(record, job);
    if serialized.is_empty() {
        return Err(ImputeError::InsufficientContext(record.id.to_string()));
    }
    let embedding = embedder.embed(&serialized);
    let examples: String = index
        .nearest(&embedding, job.num_examples)
        .into_iter()
        .map(|entry| format!("{} {} is {}.\n", entry.serialized, job.target_attr, entry.value))
        .collect();
    Ok(run.render(IMPUTE_TEMPLATE, vec![examples, serialized, job.target_attr.clone()])?)
}

fn value_of(response: Option<&crate::oracle::OracleResponse>) -> Option<String> {
    match response.and_then(|r| r.parsed.as_ref()) {
        Some(ParsedAnswer::Value(value)) => Some(value.clone()),
        _ => None,
    }
}

/// Neighbor vote only; never calls the oracle, so the ledger stays zero.
pub fn impute_with_knn(
    job: &ImputationJob,
    embedder: &dyn Embedder,
) -> Result<ImputationOutcome, ImputeError> {
    let index = KnnIndex::build(job, embedder)?;
    let values = job
        .queries
        .records
        .iter()
        .map(|record| {
            let (value, _) = knn_impute(record, job, &index, embedder);
            ImputedValue { id: record.id.clone(), value: Some(value), source: ImputeSource::Knn }
        })
        .collect();
    Ok(ImputationOutcome {
        strategy: ImputeStrategy::Knn,
        values,
        ledger: CostLedger::new(),
        truncated: false,
        unanswered: 0,
    })
}

/// One oracle call per query record, each prompt carrying the record's
/// num_examples nearest labeled neighbors as few-shot examples.
pub fn impute_with_oracle(
    job: &ImputationJob,
    embedder: &dyn Embedder,
    run: &OracleRun,
) -> Result<ImputationOutcome, ImputeError> {
    let index = KnnIndex::build(job, embedder)?;
    let ledger_start = run.ledger();
    let unanswered_start = run.unanswered();
    let tasks = job
        .queries
        .records
        .iter()
        .map(|record| render_impute_task(record, job, &index, embedder, run))
        .collect::<Result<Vec<_>, _>>()?;
    let outcome = run.run_batch(tasks)?;
    let values = job
        .queries
        .records
        .iter()
        .zip(&outcome.responses)
        .map(|(record, response)| ImputedValue {
            id: record.id.clone(),
            value: value_of(response.as_ref()),
            source: ImputeSource::Oracle,
        })
        .collect();
    Ok(ImputationOutcome {
        strategy: ImputeStrategy::OracleOnly,
        values,
        ledger: run.ledger().since(ledger_start),
        truncated: outcome.truncated,
        unanswered: run.unanswered() - unanswered_start,
    })
}

/// Unanimity gate: when all k neighbors agree the vote is taken for free;
/// otherwise the record goes to the oracle with the same prompt the
/// oracle-only strategy would have used.
pub fn impute_hybrid(
    job: &ImputationJob,
    embedder: &dyn Embedder,
    run: &OracleRun,
) -> Result<ImputationOutcome, ImputeError> {
    let index = KnnIndex::build(job, embedder)?;
    let ledger_start = run.ledger();
    let unanswered_start = run.unanswered();
    let mut values: Vec<ImputedValue> = Vec::with_capacity(job.queries.len());
    let mut escalated: Vec<usize> = Vec::new();
    let mut tasks: Vec<UnitTask> = Vec::new();
    for (position, record) in job.queries.records.iter().enumerate() {
        let (value, unanimous) = knn_impute(record, job, &index, embedder);
        if unanimous {
            values.push(ImputedValue {
                id: record.id.clone(),
                value: Some(value),
                source: ImputeSource::Knn,
            });
        } else {
            escalated.push(position);
            tasks.push(render_impute_task(record, job, &index, embedder, run)?);
            values.push(ImputedValue {
                id: record.id.clone(),
                value: None,
                source: ImputeSource::Oracle,
            });
        }
    }
    let outcome = run.run_batch(tasks)?;
    for (position, response) in escalated.into_iter().zip(&outcome.responses) {
        values[position].value = value_of(response.as_ref());
    }
    Ok(ImputationOutcome {
        strategy: ImputeStrategy::Hybrid,
        values,
        ledger: run.ledger().since(ledger_start),
        truncated: outcome.truncated,
        unanswered: run.unanswered() - unanswered_start,
    })
}

/// How values are compared against truth: surrounding whitespace only, or
/// case-folded with all interior whitespace removed (so "TomTom" matches
/// "Tom Tom").
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Trim,
    FoldAndCollapse,
}

fn normalize(value: &str, normalization: Normalization) -> String {
    match normalization {
        Normalization::Trim => value.trim().to_owned(),
        Normalization::FoldAndCollapse => value
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(char::to_lowercase)
            .collect(),
    }
}

/// Fraction of records whose imputed value equals the truth under the given
/// normalization. Records without a value (unanswered or withheld) count as
/// wrong; an empty result set scores 0.
pub fn exact_match_accuracy(
    values: &[ImputedValue],
    truth: &BTreeMap<RecordId, String>,
    normalization: Normalization,
) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let correct = values
        .iter()
        .filter(|imputed| {
            match (&imputed.value, truth.get(&imputed.id)) {
                (Some(value), Some(expected)) => {
                    normalize(value, normalization) == normalize(expected, normalization)
                }
                _ => false,
            }
        })
        .count();
    correct as f64 / values.len() as f64
}
