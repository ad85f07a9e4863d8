//! Orchestration of oracle calls: deduplication, caching, bounded-parallel
//! dispatch, parse retries, and budget enforcement.
//!
//! Batches are processed in fixed-size chunks of distinct tasks. A chunk is
//! issued only while the ledger is within budget; invocation runs on the
//! worker pool but charging is sequential in task order. The chunk layout
//! depends only on the input, so outcomes are identical at any parallelism.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;

use crate::cost::{Budget, CostLedger};
use crate::exec::WorkerPool;
use crate::oracle::cache::ResponseCache;
use crate::oracle::{parse_answer, whitespace_tokens, Oracle, OracleError, OracleResponse};
use crate::template::{RenderError, TemplateStore, UnitTask};

#[derive(Debug, Clone, Copy)]
pub struct SessionSettings {
    /// Extra attempts after a parse failure before the task is recorded as
    /// unanswered.
    pub parse_retries: u32,
    /// Distinct tasks issued between budget checkpoints.
    pub chunk_size: usize,
    /// Charge cache hits as if they were real calls (worst-case costing).
    pub charge_cache_hits: bool,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings { parse_retries: 2, chunk_size: 64, charge_cache_hits: false }
    }
}

/// Long-lived bundle of oracle, cache, templates, and pool. Runs started from
/// the same session share the cache but keep independent ledgers.
pub struct OracleSession {
    oracle: Arc<dyn Oracle>,
    cache: Arc<ResponseCache>,
    templates: Arc<TemplateStore>,
    pool: Arc<WorkerPool>,
    settings: SessionSettings,
}

impl OracleSession {
    pub fn new(oracle: Arc<dyn Oracle>) -> Self {
        OracleSession {
            oracle,
            cache: Arc::new(ResponseCache::in_memory()),
            templates: Arc::new(TemplateStore::with_defaults()),
            pool: Arc::new(WorkerPool::default()),
            settings: SessionSettings::default(),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_templates(mut self, templates: Arc<TemplateStore>) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_pool(mut self, pool: Arc<WorkerPool>) -> Self {
        self.pool = pool;
        self
    }

    pub fn with_settings(mut self, settings: SessionSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn templates(&self) -> &TemplateStore {
        &self.templates
    }

    pub fn start_run(&self, budget: Budget) -> OracleRun {
        OracleRun {
            oracle: Arc::clone(&self.oracle),
            cache: Arc::clone(&self.cache),
            templates: Arc::clone(&self.templates),
            pool: Arc::clone(&self.pool),
            settings: self.settings,
            budget,
            ledger: Mutex::new(CostLedger::new()),
            truncated: AtomicBool::new(false),
            unanswered: AtomicU64::new(0),
        }
    }
}

/// One budgeted execution. Accumulates a ledger and diagnostic counters.
pub struct OracleRun {
    oracle: Arc<dyn Oracle>,
    cache: Arc<ResponseCache>,
    templates: Arc<TemplateStore>,
    pool: Arc<WorkerPool>,
    settings: SessionSettings,
    budget: Budget,
    ledger: Mutex<CostLedger>,
    truncated: AtomicBool,
    unanswered: AtomicU64,
}

/// Outcome of one batch. `responses[i]` is None when task i was withheld
/// because the budget was already exceeded; an unparseable reply is a present
/// response whose `parsed` is None.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub responses: Vec<Option<OracleResponse>>,
    pub truncated: bool,
}

enum Prepared {
    Hit(OracleResponse),
    Miss,
}

impl OracleRun {
    pub fn render(&self, template_id: &str, inputs: Vec<String>) -> Result<UnitTask, RenderError> {
        self.templates.render_task(template_id, inputs)
    }

    pub fn templates(&self) -> &TemplateStore {
        &self.templates
    }

    pub fn ledger(&self) -> CostLedger {
        *self.ledger.lock().expect("ledger lock")
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn truncated(&self) -> bool {
        self.truncated.load(Ordering::SeqCst)
    }

    /// Tasks whose replies failed to parse after all retries.
    pub fn unanswered(&self) -> u64 {
        self.unanswered.load(Ordering::SeqCst)
    }

    pub fn ask(&self, task: UnitTask) -> Result<Option<OracleResponse>, OracleError> {
        let mut outcome = self.run_batch(vec![task])?;
        Ok(outcome.responses.pop().flatten())
    }

    /// Execute a batch of tasks. Duplicate tasks (same cache key) are issued
    /// once and share a response.
    pub fn run_batch(&self, tasks: Vec<UnitTask>) -> Result<BatchOutcome, OracleError> {
        let fingerprint = self.oracle.fingerprint();
        let use_cache = self.oracle.temperature() == 0.0;
        let keys: Vec<String> = tasks
            .iter()
            .map(|task| ResponseCache::key(task, &fingerprint))
            .collect();

        let mut slots: IndexMap<&str, usize> = IndexMap::new();
        let mut unique_tasks: Vec<&UnitTask> = Vec::new();
        let mut slot_of: Vec<usize> = Vec::with_capacity(tasks.len());
        for (task, key) in tasks.iter().zip(&keys) {
            let slot = *slots.entry(key.as_str()).or_insert_with(|| {
                unique_tasks.push(task);
                unique_tasks.len() - 1
            });
            slot_of.push(slot);
        }

        let mut resolved: Vec<Option<OracleResponse>> = vec![None; unique_tasks.len()];
        let mut batch_truncated = false;
        let mut failure: Option<OracleError> = None;

        let mut next = 0;
        while next < unique_tasks.len() {
            if self.budget.is_exceeded_by(&self.ledger()) {
                batch_truncated = true;
                break;
            }
            let chunk_end = (next + self.settings.chunk_size).min(unique_tasks.len());
            let chunk: Vec<usize> = (next..chunk_end).collect();
            let computed = self.pool.map(chunk, |slot| {
                let task = unique_tasks[slot];
                let key = slots.get_index(slot).expect("slot exists").0.to_string();
                match use_cache.then(|| self.cache.get(&key)).flatten() {
                    Some(hit) => (slot, Prepared::Hit(hit), Vec::new(), None),
                    None => {
                        let (attempts, error) = self.invoke_with_retries(task);
                        (slot, Prepared::Miss, attempts, error)
                    }
                }
            });

            for (slot, prepared, attempts, error) in computed {
                match prepared {
                    Prepared::Hit(hit) => {
                        if self.settings.charge_cache_hits {
                            self.charge(hit.prompt_tokens, hit.completion_tokens, &mut batch_truncated);
                        }
                        resolved[slot] = Some(hit);
                    }
                    Prepared::Miss => {
                        for attempt in &attempts {
                            self.charge(attempt.prompt_tokens, attempt.completion_tokens, &mut batch_truncated);
                        }
                        if let Some(err) = error {
                            if failure.is_none() {
                                failure = Some(err);
                            }
                            continue;
                        }
                        let response = attempts.into_iter().last().expect("at least one attempt");
                        if response.parsed.is_none() {
                            self.unanswered.fetch_add(1, Ordering::SeqCst);
                        } else if use_cache {
                            let key = slots.get_index(slot).expect("slot exists").0.to_string();
                            self.cache.put(key, response.clone());
                        }
                        resolved[slot] = Some(response);
                    }
                }
            }
            if let Some(err) = failure.take() {
                return Err(err);
            }
            next = chunk_end;
        }

        if batch_truncated {
            self.truncated.store(true, Ordering::SeqCst);
        }
        let responses = slot_of.iter().map(|&slot| resolved[slot].clone()).collect();
        Ok(BatchOutcome { responses, truncated: batch_truncated })
    }

    fn charge(&self, prompt_tokens: u64, completion_tokens: u64, truncated: &mut bool) {
        let mut ledger = self.ledger.lock().expect("ledger lock");
        if ledger.charge(prompt_tokens, completion_tokens, &self.budget).is_err() {
            *truncated = true;
        }
    }

    fn invoke_with_retries(&self, task: &UnitTask) -> (Vec<OracleResponse>, Option<OracleError>) {
        let mut attempts = Vec::new();
        for _ in 0..=self.settings.parse_retries {
            match self.oracle.invoke(task) {
                Err(err) => return (attempts, Some(err)),
                Ok(raw) => {
                    let prompt_tokens = raw
                        .prompt_tokens
                        .unwrap_or_else(|| whitespace_tokens(&task.rendered_text));
                    let completion_tokens =
                        raw.completion_tokens.unwrap_or_else(|| whitespace_tokens(&raw.text));
                    let parsed = parse_answer(task, &raw.text);
                    let done = parsed.is_some();
                    attempts.push(OracleResponse {
                        raw_text: raw.text,
                        parsed,
                        prompt_tokens,
                        completion_tokens,
                    });
                    if done {
                        break;
                    }
                }
            }
        }
        (attempts, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::sim::{ErrorModel, GroundTruth, SimulatedOracle};
    use crate::oracle::{BackendKind, RawResponse};
    use crate::template::PAIR_COMPARE_TEMPLATE;

    fn session_over(items: &[&str]) -> OracleSession {
        let mut truth = GroundTruth::new();
        truth.set_ordering(items);
        let oracle = SimulatedOracle::perfect(1, truth);
        OracleSession::new(Arc::new(oracle))
    }

    fn compare(run: &OracleRun, a: &str, b: &str) -> UnitTask {
        run.render(PAIR_COMPARE_TEMPLATE, vec![a.to_owned(), b.to_owned()]).unwrap()
    }

    #[test]
    fn repeated_task_is_a_cache_hit() {
        let session = session_over(&["apple", "zebra"]);
        let run = session.start_run(Budget::unlimited());
        let task = compare(&run, "apple", "zebra");
        run.ask(task.clone()).unwrap();
        run.ask(task).unwrap();
        assert_eq!(run.ledger().calls, 1);
    }

    #[test]
    fn cache_hits_can_be_charged_for_worst_case_costing() {
        let session = session_over(&["apple", "zebra"]).with_settings(SessionSettings {
            charge_cache_hits: true,
            ..SessionSettings::default()
        });
        let run = session.start_run(Budget::unlimited());
        let task = compare(&run, "apple", "zebra");
        run.ask(task.clone()).unwrap();
        let after_first = run.ledger();
        run.ask(task).unwrap();
        let after_second = run.ledger();
        assert_eq!(after_second.calls, 2);
        assert_eq!(after_second.total_tokens(), 2 * after_first.total_tokens());
    }

    #[test]
    fn duplicates_within_a_batch_are_issued_once() {
        let session = session_over(&["apple", "zebra"]);
        let run = session.start_run(Budget::unlimited());
        let task = compare(&run, "apple", "zebra");
        let outcome = run.run_batch(vec![task.clone(), task.clone(), task]).unwrap();
        assert_eq!(run.ledger().calls, 1);
        assert_eq!(outcome.responses.len(), 3);
        assert!(outcome.responses.iter().all(|r| r.is_some()));
        let texts: Vec<_> = outcome.responses.iter().map(|r| r.as_ref().unwrap().raw_text.clone()).collect();
        assert_eq!(texts[0], texts[1]);
        assert_eq!(texts[1], texts[2]);
    }

    #[test]
    fn runs_share_the_cache_but_not_ledgers() {
        let session = session_over(&["apple", "zebra"]);
        let first = session.start_run(Budget::unlimited());
        first.ask(compare(&first, "apple", "zebra")).unwrap();
        let second = session.start_run(Budget::unlimited());
        second.ask(compare(&second, "apple", "zebra")).unwrap();
        assert_eq!(first.ledger().calls, 1);
        assert_eq!(second.ledger().calls, 0);
    }

    #[test]
    fn budget_cuts_off_later_tasks_and_flags_truncation() {
        let items: Vec<String> = (0..40).map(|i| format!("w{i:02}")).collect();
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        let session = session_over(&refs).with_settings(SessionSettings {
            chunk_size: 4,
            ..SessionSettings::default()
        });
        let run = session.start_run(Budget { max_calls: Some(6), ..Budget::default() });
        let tasks: Vec<UnitTask> = (0..20)
            .map(|i| compare(&run, &items[i], &items[i + 20]))
            .collect();
        let outcome = run.run_batch(tasks).unwrap();
        assert!(outcome.truncated);
        assert!(run.truncated());
        // Chunks of 4: the boundary check stops issuing after the chunk that
        // crossed the 6-call limit, so exactly two chunks run.
        assert_eq!(run.ledger().calls, 8);
        let issued = outcome.responses.iter().filter(|r| r.is_some()).count();
        assert_eq!(issued, 8);
        assert!(outcome.responses[8..].iter().all(|r| r.is_none()));
    }

    #[test]
    fn exhausted_run_issues_nothing() {
        let session = session_over(&["apple", "zebra"]);
        let run = session.start_run(Budget { max_calls: Some(0), ..Budget::default() });
        run.ask(compare(&run, "apple", "zebra")).unwrap();
        assert_eq!(run.ledger().calls, 1);
        let outcome = run.run_batch(vec![compare(&run, "zebra", "apple")]).unwrap();
        assert!(outcome.truncated);
        assert!(outcome.responses[0].is_none());
        assert_eq!(run.ledger().calls, 1);
    }

    #[test]
    fn batch_outcome_is_parallelism_independent() {
        let items: Vec<String> = (0..30).map(|i| format!("w{i:02}")).collect();
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        let mut truth = GroundTruth::new();
        truth.set_ordering(&refs);
        let errors = ErrorModel { p_compare_flip: 0.4, ..ErrorModel::default() };

        let outcome_at = |workers: usize| {
            let oracle = SimulatedOracle::new(5, errors.clone(), truth.clone()).unwrap();
            let session = OracleSession::new(Arc::new(oracle))
                .with_pool(Arc::new(WorkerPool::new(workers)))
                .with_settings(SessionSettings { chunk_size: 7, ..SessionSettings::default() });
            let run = session.start_run(Budget { max_calls: Some(11), ..Budget::default() });
            let tasks: Vec<UnitTask> = (0..15)
                .map(|i| compare(&run, &items[i], &items[i + 15]))
                .collect();
            let outcome = run.run_batch(tasks).unwrap();
            (outcome.responses, run.ledger())
        };

        let base = outcome_at(1);
        assert_eq!(base, outcome_at(4));
        assert_eq!(base, outcome_at(16));
    }

    struct FlakyOracle {
        temperature: f64,
        invocations: AtomicU64,
        parse_after: u64,
    }

    impl Oracle for FlakyOracle {
        fn invoke(&self, _task: &UnitTask) -> Result<RawResponse, OracleError> {
            let n = self.invocations.fetch_add(1, Ordering::SeqCst) + 1;
            let text = if n >= self.parse_after { "apple" } else { "mumble" };
            Ok(RawResponse { text: text.to_owned(), prompt_tokens: None, completion_tokens: None })
        }

        fn backend(&self) -> BackendKind {
            BackendKind::Remote
        }

        fn fingerprint(&self) -> String {
            "flaky".to_owned()
        }

        fn temperature(&self) -> f64 {
            self.temperature
        }
    }

    #[test]
    fn parse_failures_retry_then_succeed() {
        let oracle = FlakyOracle { temperature: 0.0, invocations: AtomicU64::new(0), parse_after: 3 };
        let session = OracleSession::new(Arc::new(oracle));
        let run = session.start_run(Budget::unlimited());
        let task = run
            .render(PAIR_COMPARE_TEMPLATE, vec!["apple".to_owned(), "zebra".to_owned()])
            .unwrap();
        let response = run.ask(task).unwrap().unwrap();
        assert!(response.parsed.is_some());
        assert_eq!(run.ledger().calls, 3);
        assert_eq!(run.unanswered(), 0);
    }

    #[test]
    fn exhausted_retries_record_unanswered() {
        let oracle = FlakyOracle { temperature: 0.0, invocations: AtomicU64::new(0), parse_after: 100 };
        let session = OracleSession::new(Arc::new(oracle));
        let run = session.start_run(Budget::unlimited());
        let task = run
            .render(PAIR_COMPARE_TEMPLATE, vec!["apple".to_owned(), "zebra".to_owned()])
            .unwrap();
        let response = run.ask(task).unwrap().unwrap();
        assert!(response.parsed.is_none());
        assert_eq!(run.ledger().calls, 3);
        assert_eq!(run.unanswered(), 1);
    }

    #[test]
    fn nonzero_temperature_bypasses_the_cache() {
        let oracle = FlakyOracle { temperature: 0.7, invocations: AtomicU64::new(0), parse_after: 0 };
        let session = OracleSession::new(Arc::new(oracle));
        let run = session.start_run(Budget::unlimited());
        let task = run
            .render(PAIR_COMPARE_TEMPLATE, vec!["apple".to_owned(), "zebra".to_owned()])
            .unwrap();
        run.ask(task.clone()).unwrap();
        run.ask(task).unwrap();
        assert_eq!(run.ledger().calls, 2);
    }
}
