//! Sorting strategies over a noisy oracle and ranking-quality metrics.
//!
//! Four decompositions of the same primitive: one list-sort prompt, all-pairs
//! comparisons tallied by wins, per-item ratings, and a hybrid that list-sorts
//! once then reinserts omitted items at the position inverting the fewest
//! pairwise verdicts. Ties break by ascending input index everywhere.

use std::cmp::Reverse;
use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostLedger;
use crate::oracle::{OracleError, PairVerdict, ParsedAnswer};
use crate::session::OracleRun;
use crate::template::{RenderError, UnitTask, PAIR_COMPARE_TEMPLATE, RATE_TEMPLATE, SORT_LIST_TEMPLATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortStrategy {
    SinglePrompt,
    Pairwise,
    Rating,
    SortThenInsert,
}

impl SortStrategy {
    pub fn id(&self) -> &'static str {
        match self {
            SortStrategy::SinglePrompt => "single_prompt",
            SortStrategy::Pairwise => "pairwise",
            SortStrategy::Rating => "rating",
            SortStrategy::SortThenInsert => "sort_then_insert",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SortOptions {
    pub scale_min: i64,
    pub scale_max: i64,
    /// Ask each insertion comparison in both prompt orders to cancel
    /// position-in-prompt bias; on by default for the hybrid only.
    pub insert_both_orders: bool,
    pub pairwise_both_orders: bool,
}

impl Default for SortOptions {
    fn default() -> Self {
        SortOptions {
            scale_min: 1,
            scale_max: 7,
            insert_both_orders: true,
            pairwise_both_orders: false,
        }
    }
}

/// Outcome of one sorting run. `missing` and `hallucinated` are the defects
/// left in the strategy's answer: for the single-prompt strategy that answer
/// is the raw oracle list, so both can be non-empty, while the hybrid drops
/// inventions and reinserts omissions during repair and so reports neither
/// (barring budget truncation). `reinserted` lists items the hybrid
/// recovered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortResult {
    pub strategy: SortStrategy,
    pub ranking: Vec<String>,
    pub missing: Vec<String>,
    pub hallucinated: Vec<String>,
    pub reinserted: Vec<String>,
    pub ledger: CostLedger,
    pub truncated: bool,
    pub unanswered: u64,
}

#[derive(Debug, Error)]
pub enum SortError {
    #[error("no items to sort")]
    EmptyInput,
    #[error("duplicate item {0:?}")]
    DuplicateItem(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn check_distinct(items: &[String]) -> Result<(), SortError> {
    if items.is_empty() {
        return Err(SortError::EmptyInput);
    }
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item.as_str()) {
            return Err(SortError::DuplicateItem(item.clone()));
        }
    }
    Ok(())
}

/// Tracks per-run counters so a result reports only its own share of a
/// possibly reused run.
struct RunScope<'a> {
    run: &'a OracleRun,
    ledger_start: CostLedger,
    unanswered_start: u64,
}

impl<'a> RunScope<'a> {
    fn open(run: &'a OracleRun) -> Self {
        RunScope { run, ledger_start: run.ledger(), unanswered_start: run.unanswered() }
    }

    fn ledger(&self) -> CostLedger {
        self.run.ledger().since(self.ledger_start)
    }

    fn unanswered(&self) -> u64 {
        self.run.unanswered() - self.unanswered_start
    }
}

struct ListSortStep {
    kept: Vec<String>,
    missing: Vec<String>,
    hallucinated: Vec<String>,
    truncated: bool,
}

/// Issue one list-sort task and split the reply into input items (first
/// occurrence only) and hallucinations. Items are compared exactly after
/// trimming surrounding whitespace.
fn list_sort_once(items: &[String], run: &OracleRun) -> Result<ListSortStep, SortError> {
    let task = run.render(SORT_LIST_TEMPLATE, vec![items.join("\n")])?;
    let mut outcome = run.run_batch(vec![task])?;
    let response = outcome.responses.pop().flatten();
    let lines = match response.as_ref().and_then(|r| r.parsed.as_ref()) {
        Some(ParsedAnswer::Ranking(lines)) => lines.clone(),
        _ => Vec::new(),
    };
    let input_set: HashSet<&str> = items.iter().map(|s| s.trim()).collect();
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut hallucinated = Vec::new();
    for line in lines {
        if !seen.insert(line.clone()) {
            continue;
        }
        if input_set.contains(line.as_str()) {
            kept.push(line);
        } else {
            hallucinated.push(line);
        }
    }
    let kept_set: HashSet<&str> = kept.iter().map(String::as_str).collect();
    let missing: Vec<String> = items
        .iter()
        .filter(|item| !kept_set.contains(item.trim()))
        .cloned()
        .collect();
    Ok(ListSortStep { kept, missing, hallucinated, truncated: outcome.truncated })
}

/// One prompt holding the whole list; omissions and fabrications in the reply
/// are reported, not repaired.
pub fn sort_single_prompt(items: &[String], run: &OracleRun) -> Result<SortResult, SortError> {
    check_distinct(items)?;
    let scope = RunScope::open(run);
    let step = list_sort_once(items, run)?;
    Ok(SortResult {
        strategy: SortStrategy::SinglePrompt,
        ranking: step.kept,
        missing: step.missing,
        hallucinated: step.hallucinated,
        reinserted: Vec::new(),
        ledger: scope.ledger(),
        truncated: step.truncated,
        unanswered: scope.unanswered(),
    })
}

/// All-pairs comparisons; items ranked by how many comparisons they won.
pub fn sort_pairwise(items: &[String], run: &OracleRun, both_orders: bool) -> Result<SortResult, SortError> {
    check_distinct(items)?;
    let scope = RunScope::open(run);
    let n = items.len();
    let mut tasks: Vec<UnitTask> = Vec::new();
    let mut pair_of: Vec<(usize, usize, bool)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            tasks.push(run.render(PAIR_COMPARE_TEMPLATE, vec![items[i].clone(), items[j].clone()])?);
            pair_of.push((i, j, false));
            if both_orders {
                tasks.push(run.render(PAIR_COMPARE_TEMPLATE, vec![items[j].clone(), items[i].clone()])?);
                pair_of.push((i, j, true));
            }
        }
    }
    let outcome = run.run_batch(tasks)?;
    let mut wins = vec![0u32; n];
    for (response, &(i, j, reversed)) in outcome.responses.iter().zip(&pair_of) {
        if let Some(ParsedAnswer::Ordering(verdict)) = response.as_ref().and_then(|r| r.parsed.as_ref()) {
            let first_wins = matches!(verdict, PairVerdict::FirstPrecedes) != reversed;
            if first_wins {
                wins[i] += 1;
            } else {
                wins[j] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (Reverse(wins[i]), i));
    Ok(SortResult {
        strategy: SortStrategy::Pairwise,
        ranking: order.into_iter().map(|i| items[i].clone()).collect(),
        missing: Vec::new(),
        hallucinated: Vec::new(),
        reinserted: Vec::new(),
        ledger: scope.ledger(),
        truncated: outcome.truncated,
        unanswered: scope.unanswered(),
    })
}

/// One rating task per item; items ranked by descending rating. Items whose
/// rating is unavailable sort last.
pub fn sort_by_rating(
    items: &[String],
    run: &OracleRun,
    scale_min: i64,
    scale_max: i64,
) -> Result<SortResult, SortError> {
    check_distinct(items)?;
    let scope = RunScope::open(run);
    let mut tasks = Vec::with_capacity(items.len());
    for item in items {
        tasks.push(run.render(
            RATE_TEMPLATE,
            vec![item.clone(), scale_min.to_string(), scale_max.to_string()],
        )?);
    }
    let outcome = run.run_batch(tasks)?;
    let ratings: Vec<Option<i64>> = outcome
        .responses
        .iter()
        .map(|response| match response.as_ref().and_then(|r| r.parsed.as_ref()) {
            Some(ParsedAnswer::Rating(value)) => Some(*value),
            _ => None,
        })
        .collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| (Reverse(ratings[i].unwrap_or(i64::MIN)), i));
    Ok(SortResult {
        strategy: SortStrategy::Rating,
        ranking: order.into_iter().map(|i| items[i].clone()).collect(),
        missing: Vec::new(),
        hallucinated: Vec::new(),
        reinserted: Vec::new(),
        ledger: scope.ledger(),
        truncated: outcome.truncated,
        unanswered: scope.unanswered(),
    })
}

/// Vote tallies for inserting one word relative to one list item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsertionVotes {
    pub word_first: u32,
    pub item_first: u32,
}

/// Position in 0..=m minimizing the number of verdicts the placement inverts:
/// placing the word at j inverts every "word first" vote on items before j
/// and every "item first" vote on items at or after j. A contradictory vote
/// pair adds one inversion everywhere, so it cannot move the argmin. Ties
/// resolve to the smallest position.
pub fn alignment_index(votes: &[InsertionVotes]) -> usize {
    let mut cost: i64 = votes.iter().map(|v| i64::from(v.item_first)).sum();
    let mut best_cost = cost;
    let mut best_position = 0;
    for (i, vote) in votes.iter().enumerate() {
        cost += i64::from(vote.word_first) - i64::from(vote.item_first);
        if cost < best_cost {
            best_cost = cost;
            best_position = i + 1;
        }
    }
    best_position
}

/// Hybrid strategy: one list-sort, drop hallucinations, then compare each
/// omitted word against the partial list and reinsert it at its alignment
/// position. Words are processed in input order; same-position collisions
/// keep that order.
pub fn sort_then_insert(items: &[String], run: &OracleRun, opts: &SortOptions) -> Result<SortResult, SortError> {
    check_distinct(items)?;
    let scope = RunScope::open(run);
    let step = list_sort_once(items, run)?;
    if step.truncated {
        return Ok(SortResult {
            strategy: SortStrategy::SortThenInsert,
            ranking: step.kept,
            missing: step.missing,
            hallucinated: Vec::new(),
            reinserted: Vec::new(),
            ledger: scope.ledger(),
            truncated: true,
            unanswered: scope.unanswered(),
        });
    }
    let list = step.kept;
    let absent = step.missing;
    let mut tasks: Vec<UnitTask> = Vec::new();
    let mut vote_target: Vec<(usize, usize, bool)> = Vec::new();
    for (w, word) in absent.iter().enumerate() {
        for (s, item) in list.iter().enumerate() {
            tasks.push(run.render(PAIR_COMPARE_TEMPLATE, vec![word.clone(), item.clone()])?);
            vote_target.push((w, s, false));
            if opts.insert_both_orders {
                tasks.push(run.render(PAIR_COMPARE_TEMPLATE, vec![item.clone(), word.clone()])?);
                vote_target.push((w, s, true));
            }
        }
    }
    let outcome = run.run_batch(tasks)?;
    let mut votes: Vec<Vec<InsertionVotes>> = vec![vec![InsertionVotes::default(); list.len()]; absent.len()];
    let mut voted: Vec<bool> = vec![list.is_empty(); absent.len()];
    for (response, &(w, s, reversed)) in outcome.responses.iter().zip(&vote_target) {
        if let Some(ParsedAnswer::Ordering(verdict)) = response.as_ref().and_then(|r| r.parsed.as_ref()) {
            let word_first = matches!(verdict, PairVerdict::FirstPrecedes) != reversed;
            if word_first {
                votes[w][s].word_first += 1;
            } else {
                votes[w][s].item_first += 1;
            }
            voted[w] = true;
        }
    }
    // Under truncation a word with no verdicts at all stays missing rather
    // than being planted at an arbitrary position.
    let mut buckets: Vec<Vec<&String>> = vec![Vec::new(); list.len() + 1];
    let mut reinserted = Vec::new();
    let mut still_missing = Vec::new();
    for (w, word) in absent.iter().enumerate() {
        if voted[w] {
            buckets[alignment_index(&votes[w])].push(word);
            reinserted.push(word.clone());
        } else {
            still_missing.push(word.clone());
        }
    }
    let mut ranking: Vec<String> = Vec::with_capacity(items.len());
    for (position, bucket) in buckets.iter().enumerate() {
        ranking.extend(bucket.iter().map(|w| (*w).clone()));
        if position < list.len() {
            ranking.push(list[position].clone());
        }
    }
    Ok(SortResult {
        strategy: SortStrategy::SortThenInsert,
        ranking,
        missing: still_missing,
        // Inventions were dropped before insertion, so none survive.
        hallucinated: Vec::new(),
        reinserted,
        ledger: scope.ledger(),
        truncated: outcome.truncated,
        unanswered: scope.unanswered(),
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TauError {
    #[error("rankings cover different item sets")]
    DomainMismatch,
}

/// Kendall tau-b between two orderings of the same items:
/// (C - D) / sqrt((C + D + Ta)(C + D + Tb)) over concordant, discordant, and
/// single-side-tied pair counts. Sequences carry no ties, so this reduces to
/// (C - D) / C(n, 2); the general form is kept for clarity against the
/// definition.
pub fn kendall_tau_b<S: AsRef<str>>(ranking: &[S], ground_truth: &[S]) -> Result<f64, TauError> {
    if ranking.len() != ground_truth.len() {
        return Err(TauError::DomainMismatch);
    }
    let mut position: HashMap<&str, usize> = HashMap::with_capacity(ground_truth.len());
    for (i, item) in ground_truth.iter().enumerate() {
        if position.insert(item.as_ref(), i).is_some() {
            return Err(TauError::DomainMismatch);
        }
    }
    let mut projected = Vec::with_capacity(ranking.len());
    let mut seen = HashSet::new();
    for item in ranking {
        let &pos = position.get(item.as_ref()).ok_or(TauError::DomainMismatch)?;
        if !seen.insert(pos) {
            return Err(TauError::DomainMismatch);
        }
        projected.push(pos);
    }
    let n = projected.len() as u64;
    if n < 2 {
        return Ok(1.0);
    }
    let total = n * (n - 1) / 2;
    let discordant = count_inversions(&mut projected);
    let concordant = total - discordant;
    Ok((concordant as f64 - discordant as f64) / total as f64)
}

/// Inversions via mergesort, counting crossings during the merge.
fn count_inversions(seq: &mut [usize]) -> u64 {
    let len = seq.len();
    if len < 2 {
        return 0;
    }
    let mid = len / 2;
    let mut count = {
        let (left, right) = seq.split_at_mut(mid);
        count_inversions(left) + count_inversions(right)
    };
    let mut merged = Vec::with_capacity(len);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < len {
        if seq[i] <= seq[j] {
            merged.push(seq[i]);
            i += 1;
        } else {
            merged.push(seq[j]);
            count += (mid - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&seq[i..mid]);
    merged.extend_from_slice(&seq[j..len]);
    seq.copy_from_slice(&merged);
    count
}

/// Ranking to score a result against ground truth. Items the oracle omitted
/// are slotted in at seeded-random positions first, so an incomplete reply is
/// penalized through expected misplacement instead of being ignored.
pub fn scored_ranking(result: &SortResult, seed: u64) -> Vec<String> {
    let mut ranking = result.ranking.clone();
    if result.missing.is_empty() {
        return ranking;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for item in &result.missing {
        let at = rng.gen_range(0..=ranking.len());
        ranking.insert(at, item.clone());
    }
    ranking
}
