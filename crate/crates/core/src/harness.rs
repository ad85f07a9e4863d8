//! Strategy evaluation on a validation split, cost-accuracy Pareto analysis,
//! and budgeted recommendation via complexity-scaled cost projection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{Budget, CostLedger};
use crate::imputation::{
    exact_match_accuracy, impute_hybrid, impute_with_knn, impute_with_oracle, ImputationJob,
    ImputationOutcome, ImputeError, ImputeStrategy, Normalization,
};
use crate::oracle::embed::TrigramEmbedder;
use crate::record::{Dataset, RecordId};
use crate::resolution::{augment_and_repair, QuestionSet, ResolveError, ResolveOutcome};
use crate::session::OracleSession;
use crate::sorting::{
    kendall_tau_b, scored_ranking, sort_by_rating, sort_pairwise, sort_single_prompt,
    sort_then_insert, SortError, SortOptions, SortResult, SortStrategy, TauError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Sort,
    Resolve,
    Impute,
}

impl Primitive {
    pub fn id(&self) -> &'static str {
        match self {
            Primitive::Sort => "sort",
            Primitive::Resolve => "resolve",
            Primitive::Impute => "impute",
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self {
            Primitive::Sort => "tau_b",
            Primitive::Resolve => "f1",
            Primitive::Impute => "exact_match",
        }
    }
}

/// How a strategy's oracle cost scales with workload size, used to project a
/// validation-split ledger onto the full dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplexityClass {
    Constant,
    Linear,
    Quadratic,
}

impl ComplexityClass {
    /// Multiplier from a validation split of `validation` items to a full set
    /// of `full`. Quadratic scales by unordered-pair counts, so projecting a
    /// split onto itself is exactly 1.
    pub fn projection_ratio(&self, full: u64, validation: u64) -> f64 {
        match self {
            ComplexityClass::Constant => 1.0,
            ComplexityClass::Linear => full as f64 / validation as f64,
            ComplexityClass::Quadratic => {
                (full * full.saturating_sub(1)) as f64
                    / (validation * validation.saturating_sub(1)) as f64
            }
        }
    }
}

/// One strategy's measured accuracy and cost on a validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub primitive: Primitive,
    pub metric_name: String,
    pub metric: f64,
    pub ledger: CostLedger,
    pub complexity: ComplexityClass,
    pub config: BTreeMap<String, String>,
}

impl StrategyReport {
    pub fn cost(&self) -> u64 {
        self.ledger.total_tokens()
    }

    /// The measured ledger scaled to the full dataset, each counter rounded
    /// up. Zero counters stay zero whatever the ratio.
    pub fn projected_ledger(&self, full_size: u64, validation_size: u64) -> CostLedger {
        let ratio = self.complexity.projection_ratio(full_size, validation_size);
        let scale = |counter: u64| {
            if counter == 0 {
                0
            } else {
                (counter as f64 * ratio).ceil() as u64
            }
        };
        CostLedger {
            prompt_tokens: scale(self.ledger.prompt_tokens),
            completion_tokens: scale(self.ledger.completion_tokens),
            calls: scale(self.ledger.calls),
        }
    }
}

/// A strategy choice for one primitive. The resolve arm's k is the neighbor
/// count for augmentation; 0 means the plain pairwise baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategySpec {
    Sort(SortStrategy),
    Resolve { k: usize },
    Impute(ImputeStrategy),
}

impl StrategySpec {
    pub fn id(&self) -> String {
        match self {
            StrategySpec::Sort(strategy) => strategy.id().to_owned(),
            StrategySpec::Resolve { k: 0 } => "baseline".to_owned(),
            StrategySpec::Resolve { k } => format!("knn_k{k}"),
            StrategySpec::Impute(strategy) => strategy.id().to_owned(),
        }
    }

    pub fn primitive(&self) -> Primitive {
        match self {
            StrategySpec::Sort(_) => Primitive::Sort,
            StrategySpec::Resolve { .. } => Primitive::Resolve,
            StrategySpec::Impute(_) => Primitive::Impute,
        }
    }

    /// Call-count growth with workload size: items for sort, questions for
    /// resolve, query records for impute.
    pub fn complexity(&self) -> ComplexityClass {
        match self {
            StrategySpec::Sort(SortStrategy::SinglePrompt) => ComplexityClass::Linear,
            StrategySpec::Sort(SortStrategy::Rating) => ComplexityClass::Linear,
            StrategySpec::Sort(SortStrategy::Pairwise) => ComplexityClass::Quadratic,
            StrategySpec::Sort(SortStrategy::SortThenInsert) => ComplexityClass::Quadratic,
            StrategySpec::Resolve { .. } => ComplexityClass::Linear,
            StrategySpec::Impute(ImputeStrategy::Knn) => ComplexityClass::Constant,
            StrategySpec::Impute(_) => ComplexityClass::Linear,
        }
    }
}

/// A validation workload with its ground truth, ready to evaluate.
#[derive(Debug, Clone)]
pub enum Workload {
    Sort {
        items: Vec<String>,
        truth: Vec<String>,
        options: SortOptions,
        /// Seed for the random placement of unrecovered items when scoring.
        seed: u64,
    },
    Resolve {
        dataset: Dataset,
        questions: QuestionSet,
        attrs: Vec<String>,
    },
    Impute {
        job: ImputationJob,
        truth: BTreeMap<RecordId, String>,
    },
}

impl Workload {
    pub fn primitive(&self) -> Primitive {
        match self {
            Workload::Sort { .. } => Primitive::Sort,
            Workload::Resolve { .. } => Primitive::Resolve,
            Workload::Impute { .. } => Primitive::Impute,
        }
    }

    /// Workload size in the units the complexity classes scale over.
    pub fn size(&self) -> u64 {
        match self {
            Workload::Sort { items, .. } => items.len() as u64,
            Workload::Resolve { questions, .. } => questions.questions.len() as u64,
            Workload::Impute { job, .. } => job.queries.len() as u64,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("strategy {strategy:?} does not apply to a {workload:?} workload")]
    PrimitiveMismatch { strategy: String, workload: Primitive },
    #[error("no reports to analyze")]
    EmptyReports,
    #[error("reports span multiple primitives")]
    MixedPrimitives,
    #[error("validation split is empty")]
    EmptyValidation,
    #[error("no strategy fits the budget")]
    NoFeasibleStrategy,
    #[error(transparent)]
    Sort(#[from] SortError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Tau(#[from] TauError),
}

/// What a strategy actually produced, alongside its scored report. Gives
/// callers the full payload (rankings, match graphs, imputed values) that the
/// summary metric collapses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadOutcome {
    Sort(SortResult),
    Resolve(ResolveOutcome),
    Impute(ImputationOutcome),
}

impl WorkloadOutcome {
    pub fn truncated(&self) -> bool {
        match self {
            WorkloadOutcome::Sort(result) => result.truncated,
            WorkloadOutcome::Resolve(outcome) => outcome.truncated,
            WorkloadOutcome::Impute(outcome) => outcome.truncated,
        }
    }

    pub fn unanswered(&self) -> u64 {
        match self {
            WorkloadOutcome::Sort(result) => result.unanswered,
            WorkloadOutcome::Resolve(outcome) => outcome.unanswered,
            WorkloadOutcome::Impute(outcome) => outcome.unanswered,
        }
    }
}

/// Run one strategy end-to-end on the validation workload. Each evaluation
/// starts a fresh run, so ledgers are independent while the session's cache
/// is shared; only batch size 1 is implemented, recorded in the config.
pub fn evaluate(
    spec: &StrategySpec,
    workload: &Workload,
    session: &OracleSession,
    budget: Budget,
) -> Result<StrategyReport, HarnessError> {
    evaluate_with_outcome(spec, workload, session, budget).map(|(report, _)| report)
}

/// As `evaluate`, but also returns the primitive's raw result.
pub fn evaluate_with_outcome(
    spec: &StrategySpec,
    workload: &Workload,
    session: &OracleSession,
    budget: Budget,
) -> Result<(StrategyReport, WorkloadOutcome), HarnessError> {
    if spec.primitive() != workload.primitive() {
        return Err(HarnessError::PrimitiveMismatch {
            strategy: spec.id(),
            workload: workload.primitive(),
        });
    }
    let run = session.start_run(budget);
    let embedder = TrigramEmbedder::default();
    let mut config: BTreeMap<String, String> = BTreeMap::new();
    config.insert("batch_size".to_owned(), "1".to_owned());
    let (metric, outcome) = match (spec, workload) {
        (StrategySpec::Sort(strategy), Workload::Sort { items, truth, options, seed }) => {
            let result = match strategy {
                SortStrategy::SinglePrompt => sort_single_prompt(items, &run)?,
                SortStrategy::Pairwise => {
                    config.insert(
                        "pairwise_both_orders".to_owned(),
                        options.pairwise_both_orders.to_string(),
                    );
                    sort_pairwise(items, &run, options.pairwise_both_orders)?
                }
                SortStrategy::Rating => {
                    config.insert("scale_min".to_owned(), options.scale_min.to_string());
                    config.insert("scale_max".to_owned(), options.scale_max.to_string());
                    sort_by_rating(items, &run, options.scale_min, options.scale_max)?
                }
                SortStrategy::SortThenInsert => {
                    config.insert(
                        "insert_both_orders".to_owned(),
                        options.insert_both_orders.to_string(),
                    );
                    sort_then_insert(items, &run, options)?
                }
            };
            config.insert("score_seed".to_owned(), seed.to_string());
            let metric = kendall_tau_b(&scored_ranking(&result, *seed), truth)?;
            (metric, WorkloadOutcome::Sort(result))
        }
        (StrategySpec::Resolve { k }, Workload::Resolve { dataset, questions, attrs }) => {
            config.insert("k".to_owned(), k.to_string());
            let outcome = augment_and_repair(questions, dataset, attrs, &embedder, *k, &run)?;
            (outcome.scores.f1, WorkloadOutcome::Resolve(outcome))
        }
        (StrategySpec::Impute(strategy), Workload::Impute { job, truth }) => {
            config.insert("k".to_owned(), job.k.to_string());
            config.insert("num_examples".to_owned(), job.num_examples.to_string());
            let outcome = match strategy {
                ImputeStrategy::Knn => impute_with_knn(job, &embedder)?,
                ImputeStrategy::OracleOnly => impute_with_oracle(job, &embedder, &run)?,
                ImputeStrategy::Hybrid => impute_hybrid(job, &embedder, &run)?,
            };
            let metric = exact_match_accuracy(&outcome.values, truth, Normalization::Trim);
            (metric, WorkloadOutcome::Impute(outcome))
        }
        _ => unreachable!("primitive equality checked above"),
    };
    let ledger = match &outcome {
        WorkloadOutcome::Sort(result) => result.ledger,
        WorkloadOutcome::Resolve(resolve) => resolve.ledger,
        WorkloadOutcome::Impute(impute) => impute.ledger,
    };
    let report = StrategyReport {
        strategy: spec.id(),
        primitive: spec.primitive(),
        metric_name: spec.primitive().metric_name().to_owned(),
        metric,
        ledger,
        complexity: spec.complexity(),
        config,
    };
    Ok((report, outcome))
}

fn check_same_primitive(reports: &[StrategyReport]) -> Result<(), HarnessError> {
    match reports.first() {
        None => Err(HarnessError::EmptyReports),
        Some(first) => {
            if reports.iter().any(|r| r.primitive != first.primitive) {
                Err(HarnessError::MixedPrimitives)
            } else {
                Ok(())
            }
        }
    }
}

/// Reports not strictly dominated: no other report has cost ≤ and metric ≥
/// with at least one strict. Identical points survive together. Output is
/// sorted by ascending cost, then strategy id.
pub fn pareto_frontier(reports: &[StrategyReport]) -> Result<Vec<StrategyReport>, HarnessError> {
    check_same_primitive(reports)?;
    let mut frontier: Vec<StrategyReport> = reports
        .iter()
        .filter(|report| {
            !reports.iter().any(|other| {
                other.cost() <= report.cost()
                    && other.metric >= report.metric
                    && (other.cost() < report.cost() || other.metric > report.metric)
            })
        })
        .cloned()
        .collect();
    frontier.sort_by(|a, b| a.cost().cmp(&b.cost()).then_with(|| a.strategy.cmp(&b.strategy)));
    Ok(frontier)
}

/// The pick of `recommend`: the chosen strategy with its projected ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub strategy: String,
    pub metric: f64,
    pub projected: CostLedger,
}

/// Highest-accuracy strategy whose projected full-dataset ledger fits the
/// budget; ties go to the lower projected cost, then the strategy id.
pub fn recommend(
    reports: &[StrategyReport],
    budget: &Budget,
    validation_size: u64,
    full_size: u64,
) -> Result<Recommendation, HarnessError> {
    check_same_primitive(reports)?;
    if validation_size == 0 {
        return Err(HarnessError::EmptyValidation);
    }
    let mut best: Option<Recommendation> = None;
    for report in reports {
        let projected = report.projected_ledger(full_size, validation_size);
        if budget.is_exceeded_by(&projected) {
            continue;
        }
        let candidate = Recommendation {
            strategy: report.strategy.clone(),
            metric: report.metric,
            projected,
        };
        let wins = match &best {
            None => true,
            Some(current) => {
                let by_metric = candidate.metric.total_cmp(&current.metric);
                let by_cost = current.projected.total_tokens().cmp(&candidate.projected.total_tokens());
                let by_id = current.strategy.cmp(&candidate.strategy);
                by_metric.then(by_cost).then(by_id) == std::cmp::Ordering::Greater
            }
        };
        if wins {
            best = Some(candidate);
        }
    }
    best.ok_or(HarnessError::NoFeasibleStrategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::sim::{GroundTruth, SimulatedOracle};
    use crate::record::Record;
    use std::sync::Arc;

    fn sort_workload(n: usize) -> (Workload, OracleSession) {
        let items: Vec<String> = (0..n).map(|i| format!("item{i:02}")).collect();
        let mut truth = GroundTruth::new();
        truth.set_ordering(&items);
        let oracle = SimulatedOracle::perfect(1, truth);
        (
            Workload::Sort {
                truth: items.clone(),
                items,
                options: SortOptions::default(),
                seed: 7,
            },
            OracleSession::new(Arc::new(oracle)),
        )
    }

    fn report(
        strategy: &str,
        metric: f64,
        prompt_tokens: u64,
        complexity: ComplexityClass,
    ) -> StrategyReport {
        StrategyReport {
            strategy: strategy.to_owned(),
            primitive: Primitive::Sort,
            metric_name: "tau_b".to_owned(),
            metric,
            ledger: CostLedger { prompt_tokens, completion_tokens: 0, calls: 1 },
            complexity,
            config: BTreeMap::new(),
        }
    }

    #[test]
    fn pairwise_on_ten_items_costs_forty_five_calls() {
        let (workload, session) = sort_workload(10);
        let spec = StrategySpec::Sort(SortStrategy::Pairwise);
        let result = evaluate(&spec, &workload, &session, Budget::unlimited()).unwrap();
        assert_eq!(result.metric, 1.0);
        assert_eq!(result.ledger.calls, 45);
        assert_eq!(result.metric_name, "tau_b");
        assert_eq!(result.complexity, ComplexityClass::Quadratic);
    }

    #[test]
    fn evaluations_share_cache_across_strategies() {
        let (workload, session) = sort_workload(8);
        let pairwise = StrategySpec::Sort(SortStrategy::Pairwise);
        let first = evaluate(&pairwise, &workload, &session, Budget::unlimited()).unwrap();
        let second = evaluate(&pairwise, &workload, &session, Budget::unlimited()).unwrap();
        assert_eq!(first.ledger.calls, 28);
        // Same tasks, warm cache: the second evaluation is free.
        assert_eq!(second.ledger.calls, 0);
        assert_eq!(second.metric, 1.0);
    }

    #[test]
    fn mismatched_primitive_is_rejected() {
        let (workload, session) = sort_workload(4);
        let spec = StrategySpec::Impute(ImputeStrategy::Knn);
        let err = evaluate(&spec, &workload, &session, Budget::unlimited()).unwrap_err();
        assert!(matches!(err, HarnessError::PrimitiveMismatch { .. }));
    }

    #[test]
    fn impute_workload_reports_exact_match() {
        let mut labeled = Dataset::new("l", vec!["name".to_owned(), "city".to_owned()]);
        labeled.push(Record::new("l1").with_text("name", "tom tom grill").with_text("city", "ny")).unwrap();
        labeled.push(Record::new("l2").with_text("name", "tom tom diner").with_text("city", "ny")).unwrap();
        let mut queries = Dataset::new("q", vec!["name".to_owned(), "city".to_owned()]);
        queries
            .push(
                Record::new("q1")
                    .with_text("name", "tom tom grill house")
                    .with_attr("city", crate::record::AttrValue::Missing),
            )
            .unwrap();
        let job = ImputationJob {
            labeled,
            queries,
            target_attr: "city".to_owned(),
            k: 2,
            num_examples: 0,
        };
        let truth = BTreeMap::from([(RecordId::from("q1"), "ny".to_owned())]);
        let workload = Workload::Impute { job, truth };
        let oracle = SimulatedOracle::perfect(1, GroundTruth::new());
        let session = OracleSession::new(Arc::new(oracle));
        let spec = StrategySpec::Impute(ImputeStrategy::Knn);
        let result = evaluate(&spec, &workload, &session, Budget::unlimited()).unwrap();
        assert_eq!(result.metric, 1.0);
        assert_eq!(result.ledger, CostLedger::new());
        assert_eq!(result.metric_name, "exact_match");
        assert_eq!(result.complexity, ComplexityClass::Constant);
    }

    #[test]
    fn frontier_drops_dominated_reports() {
        let reports = vec![
            report("a", 0.5, 10, ComplexityClass::Linear),
            report("b", 0.9, 20, ComplexityClass::Linear),
            report("c", 0.4, 15, ComplexityClass::Linear),
        ];
        let frontier = pareto_frontier(&reports).unwrap();
        let ids: Vec<&str> = frontier.iter().map(|r| r.strategy.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn frontier_keeps_singletons_and_identical_points() {
        let single = vec![report("only", 0.2, 5, ComplexityClass::Linear)];
        assert_eq!(pareto_frontier(&single).unwrap().len(), 1);
        let twins = vec![
            report("x", 0.5, 10, ComplexityClass::Linear),
            report("y", 0.5, 10, ComplexityClass::Linear),
        ];
        assert_eq!(pareto_frontier(&twins).unwrap().len(), 2);
    }

    #[test]
    fn frontier_rejects_mixed_primitives() {
        let mut other = report("z", 0.5, 10, ComplexityClass::Linear);
        other.primitive = Primitive::Impute;
        let reports = vec![report("a", 0.5, 10, ComplexityClass::Linear), other];
        assert!(matches!(pareto_frontier(&reports), Err(HarnessError::MixedPrimitives)));
        assert!(matches!(pareto_frontier(&[]), Err(HarnessError::EmptyReports)));
    }

    #[test]
    fn projection_to_same_size_is_identity() {
        let measured = report("a", 0.5, 123, ComplexityClass::Quadratic);
        assert_eq!(measured.projected_ledger(20, 20), measured.ledger);
        let linear = report("b", 0.5, 123, ComplexityClass::Linear);
        assert_eq!(linear.projected_ledger(40, 20).prompt_tokens, 246);
    }

    #[test]
    fn recommend_unlimited_budget_takes_max_accuracy() {
        let reports = vec![
            report("cheap", 0.6, 10, ComplexityClass::Linear),
            report("best", 0.9, 100, ComplexityClass::Quadratic),
        ];
        let pick = recommend(&reports, &Budget::unlimited(), 20, 200).unwrap();
        assert_eq!(pick.strategy, "best");
        // The unconstrained pick always sits on the frontier.
        let frontier = pareto_frontier(&reports).unwrap();
        assert!(frontier.iter().any(|r| r.strategy == pick.strategy));
    }

    #[test]
    fn recommend_respects_projected_budget() {
        // Quadratic 100 tokens on 20 items projects to 100·(200·199)/(20·19)
        // = 10474 on 200; linear 60 projects to 600.
        let reports = vec![
            report("single", 0.4, 30, ComplexityClass::Linear),
            report("rating", 0.7, 60, ComplexityClass::Linear),
            report("pairwise", 0.95, 100, ComplexityClass::Quadratic),
        ];
        let budget = Budget::total_tokens(5000);
        let pick = recommend(&reports, &budget, 20, 200).unwrap();
        assert_eq!(pick.strategy, "rating");
        assert_eq!(pick.projected.total_tokens(), 600);
    }

    #[test]
    fn recommend_ties_break_by_cost_then_id() {
        let reports = vec![
            report("zeta", 0.8, 50, ComplexityClass::Linear),
            report("alpha", 0.8, 50, ComplexityClass::Linear),
            report("mid", 0.8, 80, ComplexityClass::Linear),
        ];
        let pick = recommend(&reports, &Budget::unlimited(), 10, 10).unwrap();
        assert_eq!(pick.strategy, "alpha");
    }

    #[test]
    fn recommend_fails_when_nothing_fits() {
        let reports = vec![report("a", 0.9, 1000, ComplexityClass::Linear)];
        let budget = Budget::total_tokens(10);
        assert!(matches!(
            recommend(&reports, &budget, 10, 100),
            Err(HarnessError::NoFeasibleStrategy)
        ));
    }
}
