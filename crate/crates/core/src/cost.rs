//! Token accounting: cumulative usage counters and budget enforcement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Monetary price per token. Both rates default to 1, so with default rates
/// the monetary cost equals the total token count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRates {
    pub rate_in: f64,
    pub rate_out: f64,
}

impl Default for TokenRates {
    fn default() -> Self {
        Self { rate_in: 1.0, rate_out: 1.0 }
    }
}

/// Cumulative usage counters for one run. Counters only ever increase;
/// monetary cost is derived from the counters and a rate card on demand.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn monetary_cost(&self, rates: TokenRates) -> f64 {
        self.prompt_tokens as f64 * rates.rate_in + self.completion_tokens as f64 * rates.rate_out
    }

    /// Merge another ledger's counters into this one.
    pub fn absorb(&mut self, other: CostLedger) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.calls += other.calls;
    }

    /// Counters accumulated since an earlier snapshot of this ledger.
    pub fn since(&self, start: CostLedger) -> CostLedger {
        CostLedger {
            prompt_tokens: self.prompt_tokens - start.prompt_tokens,
            completion_tokens: self.completion_tokens - start.completion_tokens,
            calls: self.calls - start.calls,
        }
    }

    /// Record one call's usage. The charge is always applied, even when it
    /// pushes the ledger over the budget; the error tells the orchestrator to
    /// stop issuing further calls and return partial results.
    pub fn charge(
        &mut self,
        prompt_tokens: u64,
        completion_tokens: u64,
        budget: &Budget,
    ) -> Result<(), BudgetExceeded> {
        self.prompt_tokens += prompt_tokens;
        self.completion_tokens += completion_tokens;
        self.calls += 1;
        match budget.violation(self) {
            Some(err) => Err(err),
            None => Ok(()),
        }
    }
}

/// Optional ceilings on a run. A ledger exceeds the budget only when a set
/// limit is strictly surpassed; hitting a limit exactly is still within budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_prompt_tokens: Option<u64>,
    pub max_completion_tokens: Option<u64>,
    pub max_total_tokens: Option<u64>,
    pub max_calls: Option<u64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn total_tokens(limit: u64) -> Self {
        Self { max_total_tokens: Some(limit), ..Self::default() }
    }

    pub fn is_exceeded_by(&self, ledger: &CostLedger) -> bool {
        self.violation(ledger).is_some()
    }

    /// First strictly exceeded limit, checked in field order.
    pub fn violation(&self, ledger: &CostLedger) -> Option<BudgetExceeded> {
        let checks = [
            ("prompt tokens", self.max_prompt_tokens, ledger.prompt_tokens),
            ("completion tokens", self.max_completion_tokens, ledger.completion_tokens),
            ("total tokens", self.max_total_tokens, ledger.total_tokens()),
            ("calls", self.max_calls, ledger.calls),
        ];
        for (counter, limit, used) in checks {
            if let Some(limit) = limit {
                if used > limit {
                    return Some(BudgetExceeded { counter, used, limit });
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{counter} budget exceeded: {used} over limit {limit}")]
pub struct BudgetExceeded {
    pub counter: &'static str,
    pub used: u64,
    pub limit: u64,
}
