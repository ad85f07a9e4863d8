//! Deterministic simulated oracle. Answers are derived from registered ground
//! truth and perturbed by a configurable error model; randomness is keyed by
//! (seed, content hash of the rendered prompt) so a response depends only on
//! the task itself, never on call order or parallelism.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{BackendKind, Oracle, OracleError, RawResponse};
use crate::template::{TaskKind, UnitTask};

/// Error knobs for the simulated backend. All zeros is a perfect oracle.
///
/// The two match-specific overrides split the symmetric flip into one-sided
/// rates (true duplicates missed vs spurious matches); both fall back to
/// `p_compare_flip` when unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorModel {
    pub p_compare_flip: f64,
    pub rating_noise_sd: f64,
    pub p_omit: f64,
    pub p_hallucinate: f64,
    pub p_impute_wrong: f64,
    pub p_match_miss: Option<f64>,
    pub p_match_spurious: Option<f64>,
    /// Multiplier applied to `p_impute_wrong` once per few-shot example.
    pub example_error_factor: f64,
}

impl Default for ErrorModel {
    fn default() -> Self {
        ErrorModel {
            p_compare_flip: 0.0,
            rating_noise_sd: 0.0,
            p_omit: 0.0,
            p_hallucinate: 0.0,
            p_impute_wrong: 0.0,
            p_match_miss: None,
            p_match_spurious: None,
            example_error_factor: 0.5,
        }
    }
}

impl ErrorModel {
    pub fn perfect() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), ErrorModelError> {
        let probabilities = [
            ("p_compare_flip", self.p_compare_flip),
            ("p_omit", self.p_omit),
            ("p_hallucinate", self.p_hallucinate),
            ("p_impute_wrong", self.p_impute_wrong),
            ("p_match_miss", self.p_match_miss.unwrap_or(0.0)),
            ("p_match_spurious", self.p_match_spurious.unwrap_or(0.0)),
            ("example_error_factor", self.example_error_factor),
        ];
        for (field, p) in probabilities {
            if !(0.0..=1.0).contains(&p) {
                return Err(ErrorModelError::OutOfRange { field, value: p });
            }
        }
        if self.rating_noise_sd < 0.0 || !self.rating_noise_sd.is_finite() {
            return Err(ErrorModelError::OutOfRange {
                field: "rating_noise_sd",
                value: self.rating_noise_sd,
            });
        }
        Ok(())
    }

    fn match_miss(&self) -> f64 {
        self.p_match_miss.unwrap_or(self.p_compare_flip)
    }

    fn match_spurious(&self) -> f64 {
        self.p_match_spurious.unwrap_or(self.p_compare_flip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ErrorModelError {
    #[error("{field} = {value} is out of range")]
    OutOfRange { field: &'static str, value: f64 },
}

/// What the simulated oracle knows to be true, keyed by the literal strings
/// that appear as task inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Item text to rank, 0 meaning first in the target ordering.
    ordering: BTreeMap<String, usize>,
    /// Serialized record to duplicate-cluster key.
    clusters: BTreeMap<String, String>,
    /// (serialized record, attribute) to the true attribute value.
    values: BTreeMap<(String, String), String>,
    /// Attribute to the pool of plausible values, for wrong-value sampling.
    domains: BTreeMap<String, Vec<String>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register the true ordering, first item first.
    pub fn set_ordering<S: AsRef<str>>(&mut self, ordered_items: &[S]) {
        self.ordering = ordered_items
            .iter()
            .enumerate()
            .map(|(rank, item)| (item.as_ref().to_owned(), rank))
            .collect();
    }

    pub fn set_cluster(&mut self, serialized: impl Into<String>, cluster: impl Into<String>) {
        self.clusters.insert(serialized.into(), cluster.into());
    }

    pub fn set_value(
        &mut self,
        serialized: impl Into<String>,
        attr: impl Into<String>,
        value: impl Into<String>,
    ) {
        self.values.insert((serialized.into(), attr.into()), value.into());
    }

    pub fn add_domain_value(&mut self, attr: impl Into<String>, value: impl Into<String>) {
        let entry = self.domains.entry(attr.into()).or_default();
        let value = value.into();
        if !entry.contains(&value) {
            entry.push(value);
        }
    }

    pub fn rank_of(&self, item: &str) -> Option<usize> {
        self.ordering.get(item).copied()
    }

    pub fn ordering_len(&self) -> usize {
        self.ordering.len()
    }

    /// Stable digest of everything registered, mixed into the fingerprint so
    /// that cached responses are never reused across different truths.
    fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (item, rank) in &self.ordering {
            hasher.update(item.as_bytes());
            hasher.update(rank.to_le_bytes());
        }
        for (key, cluster) in &self.clusters {
            hasher.update(key.as_bytes());
            hasher.update([0]);
            hasher.update(cluster.as_bytes());
        }
        for ((key, attr), value) in &self.values {
            hasher.update(key.as_bytes());
            hasher.update([0]);
            hasher.update(attr.as_bytes());
            hasher.update([0]);
            hasher.update(value.as_bytes());
        }
        for (attr, values) in &self.domains {
            hasher.update(attr.as_bytes());
            for value in values {
                hasher.update([0]);
                hasher.update(value.as_bytes());
            }
        }
        hex(&hasher.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic noisy oracle over registered ground truth.
pub struct SimulatedOracle {
    seed: u64,
    errors: ErrorModel,
    truth: GroundTruth,
    fingerprint: String,
}

impl SimulatedOracle {
    pub fn new(seed: u64, errors: ErrorModel, truth: GroundTruth) -> Result<Self, ErrorModelError> {
        errors.validate()?;
        let errors_json = serde_json::to_string(&errors).expect("error model serializes");
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(errors_json.as_bytes());
        hasher.update(truth.content_hash().as_bytes());
        let fingerprint = format!("sim-{}", &hex(&hasher.finalize())[..16]);
        Ok(SimulatedOracle { seed, errors, truth, fingerprint })
    }

    pub fn perfect(seed: u64, truth: GroundTruth) -> Self {
        Self::new(seed, ErrorModel::perfect(), truth).expect("perfect model validates")
    }

    /// Task-keyed RNG: same task and seed, same stream, at any parallelism.
    fn task_rng(&self, rendered_text: &str) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(rendered_text.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }

    fn rank_or_err(&self, item: &str) -> Result<usize, OracleError> {
        self.truth
            .rank_of(item)
            .ok_or_else(|| OracleError::MissingGroundTruth(item.to_owned()))
    }

    fn answer_compare(&self, task: &UnitTask, rng: &mut ChaCha8Rng) -> Result<String, OracleError> {
        let first = &task.inputs[0];
        let second = &task.inputs[1];
        let first_precedes = self.rank_or_err(first)? < self.rank_or_err(second)?;
        let flip = self.errors.p_compare_flip > 0.0 && rng.gen::<f64>() < self.errors.p_compare_flip;
        let winner = if first_precedes != flip { first } else { second };
        Ok(winner.clone())
    }

    fn answer_sort(&self, task: &UnitTask, rng: &mut ChaCha8Rng) -> Result<String, OracleError> {
        let items: Vec<&str> = task.inputs[0].split('\n').collect();
        let mut ranked: Vec<(usize, &str)> = Vec::with_capacity(items.len());
        for item in &items {
            ranked.push((self.rank_or_err(item)?, item));
        }
        ranked.sort_unstable_by_key(|(rank, _)| *rank);
        let mut output: Vec<String> = Vec::with_capacity(ranked.len());
        for (_, item) in ranked {
            if self.errors.p_omit > 0.0 && rng.gen::<f64>() < self.errors.p_omit {
                continue;
            }
            output.push(item.to_owned());
        }
        // Disorder scales with the flip rate: one candidate transposition per
        // unordered pair keeps the expected rank quality near 1 - 2p at any n.
        if output.len() >= 2 && self.errors.p_compare_flip > 0.0 {
            let pairs = output.len() as u64 * (output.len() as u64 - 1) / 2;
            let swaps = Binomial::new(pairs, self.errors.p_compare_flip)
                .expect("validated probability")
                .sample(rng);
            for _ in 0..swaps {
                let at = rng.gen_range(0..output.len() - 1);
                output.swap(at, at + 1);
            }
        }
        if self.errors.p_hallucinate > 0.0 {
            let lambda = self.errors.p_hallucinate * items.len() as f64;
            let fabricated = Poisson::new(lambda).expect("positive lambda").sample(rng) as usize;
            for _ in 0..fabricated {
                let ghost = loop {
                    let candidate = format!("entry{:06x}", rng.gen::<u32>() & 0xff_ffff);
                    if !items.contains(&candidate.as_str()) && !output.contains(&candidate) {
                        break candidate;
                    }
                };
                let at = rng.gen_range(0..=output.len());
                output.insert(at, ghost);
            }
        }
        Ok(output.join("\n"))
    }

    fn answer_rate(&self, task: &UnitTask, rng: &mut ChaCha8Rng) -> Result<String, OracleError> {
        let item = &task.inputs[0];
        let scale_min: i64 = task.inputs[1]
            .parse()
            .map_err(|_| OracleError::MissingGroundTruth(task.inputs[1].clone()))?;
        let scale_max: i64 = task.inputs[2]
            .parse()
            .map_err(|_| OracleError::MissingGroundTruth(task.inputs[2].clone()))?;
        let rank = self.rank_or_err(item)?;
        let n = self.truth.ordering_len();
        let mut rating = if n <= 1 {
            scale_max
        } else {
            let span = (scale_max - scale_min) as f64;
            let position = (n - 1 - rank) as f64 / (n - 1) as f64;
            scale_min + (position * span).round() as i64
        };
        if self.errors.rating_noise_sd > 0.0 {
            let noise = Normal::new(0.0, self.errors.rating_noise_sd)
                .expect("validated sd")
                .sample(rng);
            rating += noise.round() as i64;
        }
        Ok(rating.clamp(scale_min, scale_max).to_string())
    }

    fn answer_match(&self, task: &UnitTask, rng: &mut ChaCha8Rng) -> Result<String, OracleError> {
        let cluster = |key: &String| {
            self.truth
                .clusters
                .get(key)
                .ok_or_else(|| OracleError::MissingGroundTruth(key.clone()))
        };
        let truly_same = cluster(&task.inputs[0])? == cluster(&task.inputs[1])?;
        let flip_rate = if truly_same {
            self.errors.match_miss()
        } else {
            self.errors.match_spurious()
        };
        let flip = flip_rate > 0.0 && rng.gen::<f64>() < flip_rate;
        Ok(if truly_same != flip { "Yes" } else { "No" }.to_owned())
    }

    fn answer_impute(&self, task: &UnitTask, rng: &mut ChaCha8Rng) -> Result<String, OracleError> {
        let examples = task.inputs[0].lines().filter(|l| !l.trim().is_empty()).count();
        let serialized = &task.inputs[1];
        let attr = &task.inputs[2];
        let truth = self
            .truth
            .values
            .get(&(serialized.clone(), attr.clone()))
            .ok_or_else(|| OracleError::MissingGroundTruth(serialized.clone()))?;
        let p_wrong =
            self.errors.p_impute_wrong * self.errors.example_error_factor.powi(examples as i32);
        if p_wrong > 0.0 && rng.gen::<f64>() < p_wrong {
            let pool: Vec<&String> = self
                .truth
                .domains
                .get(attr)
                .map(|values| values.iter().filter(|v| *v != truth).collect())
                .unwrap_or_default();
            if !pool.is_empty() {
                return Ok(pool[rng.gen_range(0..pool.len())].clone());
            }
        }
        Ok(truth.clone())
    }
}

impl Oracle for SimulatedOracle {
    fn invoke(&self, task: &UnitTask) -> Result<RawResponse, OracleError> {
        let mut rng = self.task_rng(&task.rendered_text);
        let text = match task.kind {
            TaskKind::PairCompare => self.answer_compare(task, &mut rng)?,
            TaskKind::ListSort => self.answer_sort(task, &mut rng)?,
            TaskKind::Rate => self.answer_rate(task, &mut rng)?,
            TaskKind::PairMatch => self.answer_match(task, &mut rng)?,
            TaskKind::Impute => self.answer_impute(task, &mut rng)?,
        };
        Ok(RawResponse { text, prompt_tokens: None, completion_tokens: None })
    }

    fn backend(&self) -> BackendKind {
        BackendKind::Simulated
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn temperature(&self) -> f64 {
        0.0
    }
}
