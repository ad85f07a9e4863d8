//! Decomposes high-level data-processing primitives (sort, entity-resolve,
//! impute) into unit tasks for a noisy oracle, either a real LLM endpoint or
//! a deterministic simulated stand-in. Calls are orchestrated under a token
//! budget, inconsistent answers are repaired, and every run reports accuracy
//! and cost per strategy.

pub mod cost;
pub mod exec;
pub mod harness;
pub mod imputation;
pub mod oracle;
pub mod record;
pub mod resolution;
pub mod session;
pub mod sorting;
pub mod template;

pub use cost::{Budget, BudgetExceeded, CostLedger, TokenRates};
pub use record::{AttrValue, Dataset, Record, RecordId};
pub use session::{BatchOutcome, OracleRun, OracleSession};
pub use template::{TaskKind, TemplateStore, UnitTask};
