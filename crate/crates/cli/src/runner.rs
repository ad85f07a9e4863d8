//! Turns a validated config into datasets, ground truth, an oracle session,
//! and a workload, then drives the requested mode: one strategy end-to-end,
//! a side-by-side evaluation, or a validation-split recommendation.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use noracle_core::exec::WorkerPool;
use noracle_core::harness::{
    evaluate_with_outcome, pareto_frontier, recommend, HarnessError, Primitive, Workload,
    WorkloadOutcome,
};
use noracle_core::imputation::{exact_match_accuracy, ImputationJob, Normalization};
use noracle_core::oracle::cache::ResponseCache;
use noracle_core::oracle::remote::RemoteOracle;
use noracle_core::oracle::sim::{GroundTruth, SimulatedOracle};
use noracle_core::record::{serialize_record, AttrValue, CsvOptions, Dataset, RecordId};
use noracle_core::resolution::{serialization_attrs, QuestionSet};
use noracle_core::session::OracleSession;
use noracle_core::template::TemplateStore;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{parse_strategy, Backend, ConfigError, RunMode, WorkflowConfig};
use crate::report::RunReport;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("cannot write report to {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A finished run plus the flags the exit code is derived from.
pub struct Executed {
    pub report: RunReport,
    pub truncated: bool,
    pub unanswered: u64,
    pub no_feasible: bool,
}

struct PreparedRun {
    session: OracleSession,
    workload: Workload,
}

fn bad_data(message: String) -> ConfigError {
    ConfigError::BadData(message)
}

fn load_dataset(path: &str, markers: &BTreeMap<String, String>) -> Result<Dataset, ConfigError> {
    let is_jsonl = Path::new(path)
        .extension()
        .is_some_and(|ext| ext == "jsonl" || ext == "ndjson");
    let loaded = if is_jsonl {
        Dataset::from_jsonl_path(path)
    } else {
        let options = CsvOptions { missing_markers: markers.clone() };
        Dataset::from_csv_path(path, &options)
    };
    loaded.map_err(|e| bad_data(format!("{path}: {e}")))
}

fn shuffle(items: &mut [String], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Builds the sort workload: item text in file order is the reference
/// ranking, and the oracle sees a seed-shuffled copy.
fn prepare_sort(
    config: &WorkflowConfig,
    truth: &mut GroundTruth,
) -> Result<Workload, ConfigError> {
    let path = config.data.records.as_deref().expect("validated");
    let attr = config.data.text_attr.as_deref().expect("validated");
    let dataset = load_dataset(path, &config.data.missing_markers)?;
    let mut reference = Vec::with_capacity(dataset.len());
    for record in &dataset.records {
        let text = record.text(attr).ok_or_else(|| {
            bad_data(format!("record {} has no value for data.text_attr {attr:?}", record.id))
        })?;
        if reference.contains(&text.to_owned()) {
            return Err(bad_data(format!("duplicate item text {text:?} in {path}")));
        }
        reference.push(text.to_owned());
    }
    if reference.is_empty() {
        return Err(bad_data(format!("{path} contains no records")));
    }
    truth.set_ordering(&reference);
    let mut items = reference.clone();
    shuffle(&mut items, config.workflow.seed);
    Ok(Workload::Sort {
        items,
        truth: reference,
        options: config.sort.options(),
        seed: config.workflow.seed,
    })
}

fn prepare_resolve(
    config: &WorkflowConfig,
    truth: &mut GroundTruth,
) -> Result<Workload, ConfigError> {
    let records_path = config.data.records.as_deref().expect("validated");
    let questions_path = config.data.questions.as_deref().expect("validated");
    let dataset = load_dataset(records_path, &config.data.missing_markers)?;
    let questions = QuestionSet::from_csv_path(questions_path)
        .map_err(|e| bad_data(format!("{questions_path}: {e}")))?;
    for question in &questions.questions {
        for id in [&question.a, &question.b] {
            if dataset.get(id).is_none() {
                return Err(bad_data(format!(
                    "{questions_path} references record {id} absent from {records_path}"
                )));
            }
        }
    }
    let held_out: Vec<String> = config.data.cluster_attr.iter().cloned().collect();
    let attrs = serialization_attrs(&dataset, &held_out);
    if let Some(cluster_attr) = config.data.cluster_attr.as_deref() {
        for record in &dataset.records {
            let cluster = record.text(cluster_attr).ok_or_else(|| {
                bad_data(format!(
                    "record {} has no value for data.cluster_attr {cluster_attr:?}",
                    record.id
                ))
            })?;
            truth.set_cluster(serialize_record(record, &attrs, None), cluster);
        }
    }
    Ok(Workload::Resolve { dataset, questions, attrs })
}

/// Builds the impute workload. Query targets hold ground truth in the file;
/// they are stripped into the truth map and the records masked.
fn prepare_impute(
    config: &WorkflowConfig,
    truth: &mut GroundTruth,
) -> Result<Workload, ConfigError> {
    let labeled_path = config.data.labeled.as_deref().expect("validated");
    let queries_path = config.data.queries.as_deref().expect("validated");
    let target = config.data.target_attr.as_deref().expect("validated");
    let labeled = load_dataset(labeled_path, &config.data.missing_markers)?;
    let raw_queries = load_dataset(queries_path, &config.data.missing_markers)?;
    if !labeled.schema.contains(&target.to_owned()) {
        return Err(bad_data(format!(
            "data.target_attr {target:?} is not a column of {labeled_path}"
        )));
    }
    let mut queries = Dataset::new(raw_queries.name.clone(), raw_queries.schema.clone());
    let mut truth_map: BTreeMap<RecordId, String> = BTreeMap::new();
    for record in raw_queries.records {
        let value = record.text(target).map(str::to_owned);
        let masked = record.with_attr(target, AttrValue::Missing);
        match value {
            Some(value) => {
                let serialized = serialize_record(&masked, &raw_queries.schema, Some(target));
                truth.set_value(serialized, target, &value);
                truth_map.insert(masked.id.clone(), value);
            }
            None if config.oracle.backend == Backend::Simulated => {
                return Err(bad_data(format!(
                    "query record {} has no ground-truth value for {target:?}; \
                     the simulated backend needs one",
                    masked.id
                )));
            }
            None => {}
        }
        queries.push(masked).map_err(|e| bad_data(format!("{queries_path}: {e}")))?;
    }
    for record in &labeled.records {
        let value = record.text(target).ok_or_else(|| {
            bad_data(format!("labeled record {} is missing {target:?}", record.id))
        })?;
        truth.add_domain_value(target, value);
    }
    for value in truth_map.values() {
        truth.add_domain_value(target, value);
    }
    let job = ImputationJob {
        labeled,
        queries,
        target_attr: target.to_owned(),
        k: config.impute.k,
        num_examples: config.impute.num_examples,
    };
    job.validate().map_err(|e| bad_data(e.to_string()))?;
    Ok(Workload::Impute { job, truth: truth_map })
}

fn prepare(config: &WorkflowConfig, parallelism: usize) -> Result<PreparedRun, ConfigError> {
    let mut truth = GroundTruth::new();
    let workload = match config.workflow.primitive {
        Primitive::Sort => prepare_sort(config, &mut truth)?,
        Primitive::Resolve => prepare_resolve(config, &mut truth)?,
        Primitive::Impute => prepare_impute(config, &mut truth)?,
    };
    let session = match config.oracle.backend {
        Backend::Simulated => {
            let oracle =
                SimulatedOracle::new(config.workflow.seed, config.oracle.errors.clone(), truth)
                    .map_err(ConfigError::BadErrorModel)?;
            OracleSession::new(Arc::new(oracle))
        }
        Backend::Remote => {
            let remote = config.oracle.remote.clone().expect("validated");
            let oracle =
                RemoteOracle::new(remote).map_err(|e| bad_data(format!("oracle.remote: {e}")))?;
            let session = OracleSession::new(Arc::new(oracle));
            match &config.oracle.cache {
                Some(path) => {
                    let cache = ResponseCache::with_file(path)
                        .map_err(|e| bad_data(format!("oracle.cache {path}: {e}")))?;
                    session.with_cache(Arc::new(cache))
                }
                None => session,
            }
        }
    };
    Ok(PreparedRun {
        session: session.with_pool(Arc::new(WorkerPool::new(parallelism))),
        workload,
    })
}

/// First `size` units of the workload: items for sort, questions for resolve,
/// query records for impute. A size at or past the end is the full workload.
fn validation_slice(workload: &Workload, size: u64) -> Workload {
    let size = size as usize;
    match workload {
        Workload::Sort { items, truth, options, seed } => {
            let kept: Vec<String> = items.iter().take(size).cloned().collect();
            let truth = truth.iter().filter(|item| kept.contains(item)).cloned().collect();
            Workload::Sort { items: kept, truth, options: *options, seed: *seed }
        }
        Workload::Resolve { dataset, questions, attrs } => Workload::Resolve {
            dataset: dataset.clone(),
            questions: QuestionSet::new(questions.questions.iter().take(size).cloned().collect()),
            attrs: attrs.clone(),
        },
        Workload::Impute { job, truth } => {
            let mut queries = Dataset::new(job.queries.name.clone(), job.queries.schema.clone());
            for record in job.queries.records.iter().take(size) {
                queries.push(record.clone()).expect("subset of a valid dataset");
            }
            Workload::Impute {
                job: ImputationJob { queries, ..job.clone() },
                truth: truth.clone(),
            }
        }
    }
}

/// Accuracy lines for the report beside the headline metric: PRF1 for
/// resolve, exact match under both normalizations for impute.
fn accuracy_details(
    outcome: &WorkloadOutcome,
    workload: &Workload,
    metric: f64,
) -> BTreeMap<String, f64> {
    let mut details = BTreeMap::new();
    match (outcome, workload) {
        (WorkloadOutcome::Sort(_), _) => {
            details.insert("tau_b".to_owned(), metric);
        }
        (WorkloadOutcome::Resolve(resolve), _) => {
            details.insert("precision".to_owned(), resolve.scores.precision);
            details.insert("recall".to_owned(), resolve.scores.recall);
            details.insert("f1".to_owned(), resolve.scores.f1);
        }
        (WorkloadOutcome::Impute(impute), Workload::Impute { truth, .. }) => {
            details.insert(
                "exact_match".to_owned(),
                exact_match_accuracy(&impute.values, truth, Normalization::Trim),
            );
            details.insert(
                "exact_match_folded".to_owned(),
                exact_match_accuracy(&impute.values, truth, Normalization::FoldAndCollapse),
            );
        }
        (WorkloadOutcome::Impute(_), _) => unreachable!("impute outcome from impute workload"),
    }
    details
}

pub fn execute(config: &WorkflowConfig, parallelism: usize) -> Result<Executed, RunError> {
    config.validate()?;
    let prepared = prepare(config, parallelism)?;
    let PreparedRun { session, workload } = prepared;
    let budget = config.budget;
    let primitive = config.workflow.primitive;

    let mut report = RunReport {
        config: config.clone(),
        templates: TemplateStore::with_defaults().versions(),
        evaluations: Vec::new(),
        frontier: None,
        recommendation: None,
        final_run: None,
        accuracy: None,
        outcome: None,
    };
    let mut truncated = false;
    let mut unanswered = 0;
    let mut no_feasible = false;

    let full_size = workload.size();
    let candidates_needed = config.workflow.mode != RunMode::Run || config.is_auto();
    if candidates_needed {
        let validation = match config.evaluate.validation_size {
            Some(size) => validation_slice(&workload, size),
            None => workload.clone(),
        };
        for id in &config.evaluate.strategies {
            let spec = parse_strategy(primitive, id)?;
            let (strategy_report, outcome) =
                evaluate_with_outcome(&spec, &validation, &session, budget)?;
            truncated |= outcome.truncated();
            unanswered += outcome.unanswered();
            report.evaluations.push(strategy_report);
        }
        report.frontier = Some(
            pareto_frontier(&report.evaluations)?
                .into_iter()
                .map(|r| r.strategy)
                .collect(),
        );
        let wants_recommendation = config.workflow.mode == RunMode::Recommend || config.is_auto();
        if wants_recommendation {
            let validation_size = validation.size();
            let projected_full = config.evaluate.full_size.unwrap_or(full_size);
            match recommend(&report.evaluations, &budget, validation_size, projected_full) {
                Ok(pick) => report.recommendation = Some(pick),
                Err(HarnessError::NoFeasibleStrategy) => no_feasible = true,
                Err(other) => return Err(other.into()),
            }
        }
    }

    let final_strategy = match config.workflow.mode {
        RunMode::Run if config.is_auto() => {
            report.recommendation.as_ref().map(|pick| pick.strategy.clone())
        }
        RunMode::Run => config.workflow.strategy.clone(),
        RunMode::Evaluate | RunMode::Recommend => None,
    };
    if let Some(id) = final_strategy {
        let spec = parse_strategy(primitive, &id)?;
        let (strategy_report, outcome) = evaluate_with_outcome(&spec, &workload, &session, budget)?;
        truncated |= outcome.truncated();
        unanswered += outcome.unanswered();
        report.accuracy = Some(accuracy_details(&outcome, &workload, strategy_report.metric));
        report.final_run = Some(strategy_report);
        report.outcome = Some(outcome);
    }

    Ok(Executed { report, truncated, unanswered, no_feasible })
}
