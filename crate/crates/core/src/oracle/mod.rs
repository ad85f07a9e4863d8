//! Oracle interface and implementations: answer types, shared response
//! parsers, a deterministic simulated backend, a remote HTTP backend, an
//! embedding stand-in, and a response cache.

pub mod cache;
pub mod embed;
pub mod remote;
pub mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::{TaskKind, UnitTask};

/// Which of a compared pair comes first in the target ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairVerdict {
    FirstPrecedes,
    SecondPrecedes,
}

/// A parsed oracle answer, by task kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParsedAnswer {
    Ordering(PairVerdict),
    Ranking(Vec<String>),
    Rating(i64),
    Match(bool),
    Value(String),
}

/// One oracle reply: the raw text, the parse outcome, and token usage.
/// `parsed` is None exactly when parsing failed; a failure is never silently
/// replaced by a default answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub raw_text: String,
    pub parsed: Option<ParsedAnswer>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Raw backend output before parsing. Token counts are filled from provider
/// usage data when available, otherwise from the whitespace tokenizer.
#[derive(Debug, Clone)]
pub struct RawResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Simulated,
    Remote,
}

/// An answer source. Implementations must be safe to invoke concurrently.
pub trait Oracle: Send + Sync {
    fn invoke(&self, task: &UnitTask) -> Result<RawResponse, OracleError>;
    fn backend(&self) -> BackendKind;
    /// Stable identity of the backend configuration, mixed into cache keys.
    fn fingerprint(&self) -> String;
    fn temperature(&self) -> f64;
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no ground truth registered for {0:?}")]
    MissingGroundTruth(String),
    #[error("oracle endpoint error: {0}")]
    Endpoint(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
}

/// Whitespace token count, the stand-in tokenizer. Strictly positive for any
/// non-empty text so that degenerate replies still cost something.
pub fn whitespace_tokens(text: &str) -> u64 {
    let count = text.split_whitespace().count() as u64;
    if count == 0 && !text.is_empty() {
        1
    } else {
        count
    }
}

/// First maximal run of alphabetic characters, used by the yes/no parser.
fn first_alphabetic_token(text: &str) -> Option<&str> {
    let start = text.find(|c: char| c.is_alphabetic())?;
    let rest = &text[start..];
    let end = rest
        .find(|c: char| !c.is_alphabetic())
        .unwrap_or(rest.len());
    Some(&rest[..end])
}

/// Case-insensitive prefix policy: the first alphabetic token must be yes or
/// no. Anything else, including hedged chain-of-thought answers, fails.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    match first_alphabetic_token(text)? {
        t if t.eq_ignore_ascii_case("yes") => Some(true),
        t if t.eq_ignore_ascii_case("no") => Some(false),
        _ => None,
    }
}

/// First integer in the text, allowing surrounding prose.
pub fn parse_rating(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() || (bytes[i] == b'-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            return text[start..i].parse().ok();
        }
        i += 1;
    }
    None
}

/// Non-empty trimmed lines, in response order.
pub fn parse_ranking(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

/// The reply must name one of the two compared items; the first non-empty
/// line is matched exactly after trimming.
pub fn parse_compare(text: &str, first: &str, second: &str) -> Option<PairVerdict> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    if line == first.trim() {
        Some(PairVerdict::FirstPrecedes)
    } else if line == second.trim() {
        Some(PairVerdict::SecondPrecedes)
    } else {
        None
    }
}

/// Imputed value: the first non-empty line, trimmed.
pub fn parse_value(text: &str) -> Option<String> {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_owned)
}

/// Parse raw text according to the task kind. Returns None on failure.
pub fn parse_answer(task: &UnitTask, text: &str) -> Option<ParsedAnswer> {
    match task.kind {
        TaskKind::ListSort => Some(ParsedAnswer::Ranking(parse_ranking(text))),
        TaskKind::PairCompare => {
            parse_compare(text, &task.inputs[0], &task.inputs[1]).map(ParsedAnswer::Ordering)
        }
        TaskKind::Rate => parse_rating(text).map(ParsedAnswer::Rating),
        TaskKind::PairMatch => parse_yes_no(text).map(ParsedAnswer::Match),
        TaskKind::Impute => parse_value(text).map(ParsedAnswer::Value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yes_no_parses_leading_token_case_insensitively() {
        assert_eq!(parse_yes_no("Yes, they match."), Some(true));
        assert_eq!(parse_yes_no("  nO"), Some(false));
        assert_eq!(parse_yes_no("YES."), Some(true));
    }

    #[test]
    fn hedged_answer_fails_to_parse() {
        let text = "They are not the same...[explanation]...They are the same.";
        assert_eq!(parse_yes_no(text), None);
    }

    #[test]
    fn yes_no_rejects_numeric_or_empty() {
        assert_eq!(parse_yes_no("42"), None);
        assert_eq!(parse_yes_no(""), None);
        assert_eq!(parse_yes_no("Yesterday was fine"), None);
    }

    #[test]
    fn rating_parser_finds_first_integer() {
        assert_eq!(parse_rating("5"), Some(5));
        assert_eq!(parse_rating("Rating: 7 out of 7"), Some(7));
        assert_eq!(parse_rating("minus -3 allowed"), Some(-3));
        assert_eq!(parse_rating("no digits here"), None);
    }

    #[test]
    fn ranking_parser_keeps_order_and_drops_blanks() {
        assert_eq!(parse_ranking("b\n\n  a  \nc\n"), vec!["b", "a", "c"]);
        assert!(parse_ranking("  \n").is_empty());
    }

    #[test]
    fn compare_parser_matches_one_of_the_items() {
        assert_eq!(parse_compare("apple\n", "apple", "zebra"), Some(PairVerdict::FirstPrecedes));
        assert_eq!(parse_compare(" zebra ", "apple", "zebra"), Some(PairVerdict::SecondPrecedes));
        assert_eq!(parse_compare("banana", "apple", "zebra"), None);
    }

    #[test]
    fn whitespace_tokens_positive_for_non_empty() {
        assert_eq!(whitespace_tokens(""), 0);
        assert_eq!(whitespace_tokens("   "), 1);
        assert_eq!(whitespace_tokens("one two  three"), 3);
    }
}
