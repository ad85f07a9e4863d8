//! Entity resolution: pairwise match questions against the oracle, optional
//! embedding-neighborhood augmentation, and transitivity repair that flips a
//! direct No to Yes when a path of Yes edges already connects the pair.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostLedger;
use crate::oracle::embed::{l2_distance, Embedder};
use crate::oracle::{OracleError, ParsedAnswer};
use crate::record::{serialize_record, Dataset, RecordId};
use crate::session::OracleRun;
use crate::template::{RenderError, UnitTask, PAIR_MATCH_TEMPLATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchVerdict {
    Yes,
    No,
    Unanswered,
}

/// How an edge got its verdict: asked because it was a question, asked to
/// probe the embedding neighborhood, or flipped by transitivity repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeOrigin {
    Direct,
    Augmented,
    Flipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEdge {
    pub verdict: MatchVerdict,
    pub origin: EdgeOrigin,
    /// Yes-path seen at flip time, endpoints included; present iff flipped.
    pub witness: Option<Vec<RecordId>>,
}

/// Records as nodes, answered comparisons as edges. Pair keys are stored with
/// the lower dataset index first, so each unordered pair has one slot.
/// Serializes as a list of (a, b, edge) rows; tuple keys have no JSON form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<EdgeRow>", into = "Vec<EdgeRow>")]
pub struct MatchGraph {
    pub edges: BTreeMap<(RecordId, RecordId), MatchEdge>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    a: RecordId,
    b: RecordId,
    #[serde(flatten)]
    edge: MatchEdge,
}

impl From<Vec<EdgeRow>> for MatchGraph {
    fn from(rows: Vec<EdgeRow>) -> Self {
        MatchGraph {
            edges: rows.into_iter().map(|row| ((row.a, row.b), row.edge)).collect(),
        }
    }
}

impl From<MatchGraph> for Vec<EdgeRow> {
    fn from(graph: MatchGraph) -> Self {
        graph
            .edges
            .into_iter()
            .map(|((a, b), edge)| EdgeRow { a, b, edge })
            .collect()
    }
}

impl MatchGraph {
    pub fn edge(&self, a: &RecordId, b: &RecordId) -> Option<&MatchEdge> {
        self.edges
            .get(&(a.clone(), b.clone()))
            .or_else(|| self.edges.get(&(b.clone(), a.clone())))
    }

    pub fn count_by_origin(&self, origin: EdgeOrigin) -> usize {
        self.edges.values().filter(|e| e.origin == origin).count()
    }

    fn yes_adjacency(&self) -> HashMap<&RecordId, Vec<&RecordId>> {
        let mut adjacency: HashMap<&RecordId, Vec<&RecordId>> = HashMap::new();
        for ((a, b), edge) in &self.edges {
            if edge.verdict == MatchVerdict::Yes {
                adjacency.entry(a).or_default().push(b);
                adjacency.entry(b).or_default().push(a);
            }
        }
        adjacency
    }

    /// True iff a chain of Yes edges connects the two records.
    pub fn yes_path_exists(&self, a: &RecordId, b: &RecordId) -> bool {
        if a == b {
            return true;
        }
        let mut union_find = UnionFind::new();
        for ((x, y), edge) in &self.edges {
            if edge.verdict == MatchVerdict::Yes {
                union_find.union(x, y);
            }
        }
        union_find.connected(a, b)
    }

    /// Shortest Yes-path from a to b, endpoints included, by breadth-first
    /// search with neighbors visited in edge-map order.
    pub fn yes_path(&self, a: &RecordId, b: &RecordId) -> Option<Vec<RecordId>> {
        if a == b {
            return Some(vec![a.clone()]);
        }
        let adjacency = self.yes_adjacency();
        let mut previous: HashMap<&RecordId, &RecordId> = HashMap::new();
        let mut queue = VecDeque::from([a]);
        let mut seen: HashSet<&RecordId> = HashSet::from([a]);
        while let Some(node) = queue.pop_front() {
            for &next in adjacency.get(node).into_iter().flatten() {
                if seen.insert(next) {
                    previous.insert(next, node);
                    if next == b {
                        let mut path = vec![b.clone()];
                        let mut cursor = next;
                        while let Some(&back) = previous.get(cursor) {
                            path.push(back.clone());
                            cursor = back;
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

/// Union-find with path compression and union by rank over record ids.
struct UnionFind {
    index: HashMap<RecordId, usize>,
    parent: Vec<usize>,
    rank: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { index: HashMap::new(), parent: Vec::new(), rank: Vec::new() }
    }

    fn slot(&mut self, id: &RecordId) -> usize {
        if let Some(&slot) = self.index.get(id) {
            return slot;
        }
        let slot = self.parent.len();
        self.index.insert(id.clone(), slot);
        self.parent.push(slot);
        self.rank.push(0);
        slot
    }

    fn find(&mut self, mut at: usize) -> usize {
        while self.parent[at] != at {
            self.parent[at] = self.parent[self.parent[at]];
            at = self.parent[at];
        }
        at
    }

    fn union(&mut self, a: &RecordId, b: &RecordId) {
        let (a, b) = (self.slot(a), self.slot(b));
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }

    fn connected(&mut self, a: &RecordId, b: &RecordId) -> bool {
        if !self.index.contains_key(a) || !self.index.contains_key(b) {
            return false;
        }
        let (a, b) = (self.slot(a), self.slot(b));
        self.find(a) == self.find(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub a: RecordId,
    pub b: RecordId,
    pub label: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub questions: Vec<Question>,
}

impl QuestionSet {
    pub fn new(questions: Vec<Question>) -> Self {
        QuestionSet { questions }
    }

    /// CSV with columns id_a, id_b, label; label may be empty, 0, or 1.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, ResolveError> {
        let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = csv_reader.headers()?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| ResolveError::MissingColumn(name.to_owned()))
        };
        let (a_pos, b_pos) = (column("id_a")?, column("id_b")?);
        let label_pos = headers.iter().position(|h| h == "label");
        let mut questions = Vec::new();
        for row in csv_reader.records() {
            let row = row?;
            let label = match label_pos.and_then(|pos| row.get(pos)) {
                None | Some("") => None,
                Some("0") => Some(false),
                Some("1") => Some(true),
                Some(other) => return Err(ResolveError::BadLabel(other.to_owned())),
            };
            questions.push(Question {
                a: RecordId::from(row.get(a_pos).unwrap_or_default()),
                b: RecordId::from(row.get(b_pos).unwrap_or_default()),
                label,
            });
        }
        Ok(QuestionSet { questions })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, ResolveError> {
        Ok(Self::from_csv_reader(std::fs::File::open(path.as_ref())?)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveOutcome {
    pub graph: MatchGraph,
    pub scores: PrF1,
    pub direct_edges: usize,
    pub augmented_edges: usize,
    pub flipped_edges: usize,
    pub unanswered: u64,
    pub ledger: CostLedger,
    pub truncated: bool,
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("no questions to resolve")]
    EmptyQuestionSet,
    #[error("question references unknown record {0:?}")]
    UnknownRecord(String),
    #[error("question set is missing column {0:?}")]
    MissingColumn(String),
    #[error("label {0:?} is not 0, 1, or empty")]
    BadLabel(String),
    #[error("need more than k = {k} records for neighbor search, have {have}")]
    NotEnoughRecords { k: usize, have: usize },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Attribute names used when serializing records for prompts and embeddings:
/// the dataset schema minus any held-out truth columns.
pub fn serialization_attrs(dataset: &Dataset, held_out: &[String]) -> Vec<String> {
    dataset
        .schema
        .iter()
        .filter(|attr| !held_out.contains(attr))
        .cloned()
        .collect()
}

fn canonical_pair(
    dataset: &Dataset,
    a: &RecordId,
    b: &RecordId,
) -> Result<(RecordId, RecordId), ResolveError> {
    let a_index = dataset
        .index_of(a)
        .ok_or_else(|| ResolveError::UnknownRecord(a.to_string()))?;
    let b_index = dataset
        .index_of(b)
        .ok_or_else(|| ResolveError::UnknownRecord(b.to_string()))?;
    if a_index <= b_index {
        Ok((a.clone(), b.clone()))
    } else {
        Ok((b.clone(), a.clone()))
    }
}

/// Each record's k nearest others by L2 distance between serialization
/// embeddings; distance ties break by ascending dataset index.
pub fn knn_neighbors(
    dataset: &Dataset,
    attrs: &[String],
    embedder: &dyn Embedder,
    k: usize,
) -> Result<IndexMap<RecordId, Vec<RecordId>>, ResolveError> {
    if dataset.len() <= k {
        return Err(ResolveError::NotEnoughRecords { k, have: dataset.len() });
    }
    let vectors: Vec<Vec<f32>> = dataset
        .records
        .iter()
        .map(|record| embedder.embed(&serialize_record(record, attrs, None)))
        .collect();
    let mut neighbors = IndexMap::with_capacity(dataset.len());
    for (i, record) in dataset.records.iter().enumerate() {
        let mut candidates: Vec<(f64, usize)> = (0..dataset.len())
            .filter(|&j| j != i)
            .map(|j| (l2_distance(&vectors[i], &vectors[j]), j))
            .collect();
        candidates.sort_by(|(da, ja), (db, jb)| da.total_cmp(db).then(ja.cmp(jb)));
        neighbors.insert(
            record.id.clone(),
            candidates
                .into_iter()
                .take(k)
                .map(|(_, j)| dataset.records[j].id.clone())
                .collect(),
        );
    }
    Ok(neighbors)
}

fn ask_pairs(
    dataset: &Dataset,
    attrs: &[String],
    pairs: &[(RecordId, RecordId)],
    origin: EdgeOrigin,
    run: &OracleRun,
    graph: &mut MatchGraph,
) -> Result<bool, ResolveError> {
    let mut tasks: Vec<UnitTask> = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let left = serialize_record(dataset.get(a).expect("validated id"), attrs, None);
        let right = serialize_record(dataset.get(b).expect("validated id"), attrs, None);
        tasks.push(run.render(PAIR_MATCH_TEMPLATE, vec![left, right])?);
    }
    let outcome = run.run_batch(tasks)?;
    for (response, (a, b)) in outcome.responses.iter().zip(pairs) {
        let verdict = match response.as_ref().map(|r| r.parsed.as_ref()) {
            Some(Some(ParsedAnswer::Match(true))) => MatchVerdict::Yes,
            Some(Some(ParsedAnswer::Match(false))) => MatchVerdict::No,
            // Parse failure after retries: recorded, excluded from scoring.
            Some(_) => MatchVerdict::Unanswered,
            // Withheld by the budget: no edge at all.
            None => continue,
        };
        graph
            .edges
            .insert((a.clone(), b.clone()), MatchEdge { verdict, origin, witness: None });
    }
    Ok(outcome.truncated)
}

/// Ask the oracle each question directly and score the answers.
pub fn pairwise_match_baseline(
    questions: &QuestionSet,
    dataset: &Dataset,
    attrs: &[String],
    run: &OracleRun,
) -> Result<ResolveOutcome, ResolveError> {
    if questions.questions.is_empty() {
        return Err(ResolveError::EmptyQuestionSet);
    }
    let ledger_start = run.ledger();
    let unanswered_start = run.unanswered();
    let mut graph = MatchGraph::default();
    let mut direct_pairs: Vec<(RecordId, RecordId)> = Vec::new();
    let mut seen = HashSet::new();
    for question in &questions.questions {
        let pair = canonical_pair(dataset, &question.a, &question.b)?;
        if seen.insert(pair.clone()) {
            direct_pairs.push(pair);
        }
    }
    let truncated = ask_pairs(dataset, attrs, &direct_pairs, EdgeOrigin::Direct, run, &mut graph)?;
    let scores = precision_recall_f1(&graph, questions);
    Ok(ResolveOutcome {
        direct_edges: graph.count_by_origin(EdgeOrigin::Direct),
        augmented_edges: 0,
        flipped_edges: 0,
        unanswered: run.unanswered() - unanswered_start,
        ledger: run.ledger().since(ledger_start),
        truncated,
        scores,
        graph,
    })
}

/// Resolution with embedding augmentation and transitivity repair. For each
/// question the candidate set is the two endpoints plus both k-neighborhoods;
/// every unordered candidate pair is asked once. After all edges are in, a
/// direct No on a question pair flips to Yes when the Yes subgraph already
/// connects the endpoints. With k = 0 this is exactly the baseline.
pub fn augment_and_repair(
    questions: &QuestionSet,
    dataset: &Dataset,
    attrs: &[String],
    embedder: &dyn Embedder,
    k: usize,
    run: &OracleRun,
) -> Result<ResolveOutcome, ResolveError> {
    if k == 0 {
        return pairwise_match_baseline(questions, dataset, attrs, run);
    }
    if questions.questions.is_empty() {
        return Err(ResolveError::EmptyQuestionSet);
    }
    let ledger_start = run.ledger();
    let unanswered_start = run.unanswered();
    let neighbors = knn_neighbors(dataset, attrs, embedder, k)?;

    let mut question_pairs: Vec<(RecordId, RecordId)> = Vec::new();
    let mut question_pair_set: HashSet<(RecordId, RecordId)> = HashSet::new();
    for question in &questions.questions {
        let pair = canonical_pair(dataset, &question.a, &question.b)?;
        if question_pair_set.insert(pair.clone()) {
            question_pairs.push(pair);
        }
    }

    let mut augmented_pairs: Vec<(RecordId, RecordId)> = Vec::new();
    let mut augmented_seen: HashSet<(RecordId, RecordId)> = HashSet::new();
    for question in &questions.questions {
        let mut candidates: Vec<&RecordId> = vec![&question.a, &question.b];
        for endpoint in [&question.a, &question.b] {
            let near = neighbors
                .get(endpoint)
                .ok_or_else(|| ResolveError::UnknownRecord(endpoint.to_string()))?;
            for id in near {
                if !candidates.contains(&id) {
                    candidates.push(id);
                }
            }
        }
        for (i, &a) in candidates.iter().enumerate() {
            for &b in &candidates[i + 1..] {
                let pair = canonical_pair(dataset, a, b)?;
                if question_pair_set.contains(&pair) || augmented_seen.contains(&pair) {
                    continue;
                }
                augmented_seen.insert(pair.clone());
                augmented_pairs.push(pair);
            }
        }
    }

    let mut graph = MatchGraph::default();
    let direct_truncated =
        ask_pairs(dataset, attrs, &question_pairs, EdgeOrigin::Direct, run, &mut graph)?;
    let augmented_truncated =
        ask_pairs(dataset, attrs, &augmented_pairs, EdgeOrigin::Augmented, run, &mut graph)?;

    // Repair pass over the final graph: one sweep, no cascading through
    // freshly flipped edges, so question order cannot matter.
    let mut union_find = UnionFind::new();
    for ((a, b), edge) in &graph.edges {
        if edge.verdict == MatchVerdict::Yes {
            union_find.union(a, b);
        }
    }
    let mut flips: Vec<((RecordId, RecordId), Vec<RecordId>)> = Vec::new();
    for pair in &question_pairs {
        let Some(edge) = graph.edges.get(pair) else { continue };
        if edge.origin == EdgeOrigin::Direct
            && edge.verdict == MatchVerdict::No
            && union_find.connected(&pair.0, &pair.1)
        {
            let witness = graph
                .yes_path(&pair.0, &pair.1)
                .expect("connected pair has a yes path");
            flips.push((pair.clone(), witness));
        }
    }
    let flipped_edges = flips.len();
    for (pair, witness) in flips {
        graph.edges.insert(
            pair,
            MatchEdge { verdict: MatchVerdict::Yes, origin: EdgeOrigin::Flipped, witness: Some(witness) },
        );
    }

    let scores = precision_recall_f1(&graph, questions);
    Ok(ResolveOutcome {
        direct_edges: graph.count_by_origin(EdgeOrigin::Direct),
        augmented_edges: graph.count_by_origin(EdgeOrigin::Augmented),
        flipped_edges,
        unanswered: run.unanswered() - unanswered_start,
        ledger: run.ledger().since(ledger_start),
        truncated: direct_truncated || augmented_truncated,
        scores,
        graph,
    })
}

/// Precision, recall, and F1 over labeled question pairs, Yes as positive.
/// Augmented edges are instruments, not predictions: only the question pairs
/// are scored, and unanswered or withheld pairs are excluded. Zero
/// denominators score 0.
pub fn precision_recall_f1(graph: &MatchGraph, questions: &QuestionSet) -> PrF1 {
    let (mut hits, mut spurious, mut misses) = (0u64, 0u64, 0u64);
    let mut scored = HashSet::new();
    for question in &questions.questions {
        let Some(label) = question.label else { continue };
        let key = (question.a.clone(), question.b.clone());
        let normalized = if key.0 <= key.1 { key } else { (key.1, key.0) };
        if !scored.insert(normalized) {
            continue;
        }
        let Some(edge) = graph.edge(&question.a, &question.b) else { continue };
        let predicted = match edge.verdict {
            MatchVerdict::Yes => true,
            MatchVerdict::No => false,
            MatchVerdict::Unanswered => continue,
        };
        match (predicted, label) {
            (true, true) => hits += 1,
            (true, false) => spurious += 1,
            (false, true) => misses += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(hits, hits + spurious);
    let recall = ratio(hits, hits + misses);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrF1 { precision, recall, f1 }
}
