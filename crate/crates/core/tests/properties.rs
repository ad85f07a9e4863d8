//! Property tests: brute-force reimplementations for the rank metric and the
//! insertion minimizer, serializer injectivity, budget bookkeeping, repair
//! invariants, and parallelism independence.

use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use noracle_core::cost::Budget;
use noracle_core::exec::WorkerPool;
use noracle_core::oracle::embed::TrigramEmbedder;
use noracle_core::oracle::sim::{ErrorModel, GroundTruth, SimulatedOracle};
use noracle_core::oracle::whitespace_tokens;
use noracle_core::record::{serialize_record, Dataset, Record};
use noracle_core::resolution::{
    augment_and_repair, pairwise_match_baseline, EdgeOrigin, MatchVerdict, Question, QuestionSet,
};
use noracle_core::session::{OracleSession, SessionSettings};
use noracle_core::sorting::{alignment_index, kendall_tau_b, InsertionVotes};
use noracle_core::template::{TemplateStore, PAIR_COMPARE_TEMPLATE};

fn shuffled(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<String> = (0..n).map(|i| format!("it{i:03}")).collect();
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
    items
}

/// O(n²) pair counter straight from the definition.
fn brute_force_tau(ranking: &[String], truth: &[String]) -> f64 {
    let place = |items: &[String]| -> HashMap<String, usize> {
        items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
    };
    let in_ranking = place(ranking);
    let in_truth = place(truth);
    let (mut concordant, mut discordant) = (0i64, 0i64);
    for i in 0..truth.len() {
        for j in (i + 1)..truth.len() {
            let a = &truth[i];
            let b = &truth[j];
            let same_way = (in_ranking[a] < in_ranking[b]) == (in_truth[a] < in_truth[b]);
            if same_way {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (concordant + discordant) as f64
}

/// Cost of every insertion position, evaluated independently of the
/// incremental scan in the library.
fn brute_force_alignment(votes: &[InsertionVotes]) -> usize {
    (0..=votes.len())
        .min_by_key(|&position| {
            let violated_before: u32 = votes[..position].iter().map(|v| v.word_first).sum();
            let violated_after: u32 = votes[position..].iter().map(|v| v.item_first).sum();
            (violated_before + violated_after, position)
        })
        .expect("at least one position")
}

proptest! {
    #[test]
    fn tau_matches_brute_force(n in 2usize..11, seed in any::<u64>()) {
        let truth = shuffled(n, seed);
        let ranking = shuffled(n, seed.wrapping_add(1));
        let fast = kendall_tau_b(&ranking, &truth).unwrap();
        let slow = brute_force_tau(&ranking, &truth);
        prop_assert!((fast - slow).abs() < 1e-12, "fast {fast} slow {slow}");
    }

    #[test]
    fn alignment_matches_brute_force(
        raw in prop::collection::vec((0u32..4, 0u32..4), 0..8)
    ) {
        let votes: Vec<InsertionVotes> = raw
            .iter()
            .map(|&(word_first, item_first)| InsertionVotes { word_first, item_first })
            .collect();
        prop_assert_eq!(alignment_index(&votes), brute_force_alignment(&votes));
    }

    #[test]
    fn serialization_is_injective(
        width in 1usize..5,
        left in prop::collection::vec("[a-zA-Z0-9 .,-]{1,10}", 4),
        right in prop::collection::vec("[a-zA-Z0-9 .,-]{1,10}", 4),
    ) {
        let attrs: Vec<String> =
            ["alpha", "beta", "gamma", "delta"][..width].iter().map(|s| (*s).to_owned()).collect();
        let build = |values: &[String]| {
            let mut record = Record::new("r");
            for (attr, value) in attrs.iter().zip(values) {
                record = record.with_text(attr.clone(), value.clone());
            }
            record
        };
        prop_assume!(left[..width] != right[..width]);
        let a = serialize_record(&build(&left), &attrs, None);
        let b = serialize_record(&build(&right), &attrs, None);
        prop_assert_ne!(a, b);
    }

    #[test]
    fn token_count_is_positive_for_non_empty(text in ".{0,40}") {
        let tokens = whitespace_tokens(&text);
        if text.is_empty() {
            prop_assert_eq!(tokens, 0);
        } else {
            prop_assert!(tokens >= 1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn budget_overshoot_is_bounded_by_one_chunk(
        limit in 0u64..40,
        task_count in 1usize..60,
        chunk in 1usize..9,
    ) {
        let items: Vec<String> = (0..120).map(|i| format!("w{i:03}")).collect();
        let mut truth = GroundTruth::new();
        truth.set_ordering(&items);
        let oracle = SimulatedOracle::perfect(1, truth);
        let session = OracleSession::new(Arc::new(oracle)).with_settings(SessionSettings {
            chunk_size: chunk,
            ..SessionSettings::default()
        });
        let run = session.start_run(Budget { max_calls: Some(limit), ..Budget::default() });
        let tasks: Vec<_> = (0..task_count)
            .map(|i| {
                run.render(PAIR_COMPARE_TEMPLATE, vec![items[i].clone(), items[i + 60].clone()])
                    .unwrap()
            })
            .collect();
        let outcome = run.run_batch(tasks).unwrap();

        let answered = outcome.responses.iter().filter(|r| r.is_some()).count();
        prop_assert_eq!(run.ledger().calls as usize, answered);
        prop_assert!(run.ledger().calls <= limit + chunk as u64);
        prop_assert_eq!(outcome.truncated, task_count as u64 > limit);
        if !outcome.truncated {
            prop_assert_eq!(answered, task_count);
        }
        // Withheld tasks form a suffix: issuance stops, never skips.
        let first_withheld =
            outcome.responses.iter().position(|r| r.is_none()).unwrap_or(task_count);
        prop_assert!(outcome.responses[first_withheld..].iter().all(|r| r.is_none()));
    }

    #[test]
    fn batches_are_parallelism_independent(
        workers in prop::sample::select(vec![2usize, 4, 8]),
        chunk in 1usize..9,
        limit in 0u64..30,
        task_count in 1usize..40,
        flip in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let items: Vec<String> = (0..80).map(|i| format!("w{i:03}")).collect();
        let mut truth = GroundTruth::new();
        truth.set_ordering(&items);
        let errors = ErrorModel { p_compare_flip: flip, ..ErrorModel::default() };

        let run_at = |pool_size: usize| {
            let oracle = SimulatedOracle::new(seed, errors.clone(), truth.clone()).unwrap();
            let session = OracleSession::new(Arc::new(oracle))
                .with_pool(Arc::new(WorkerPool::new(pool_size)))
                .with_settings(SessionSettings { chunk_size: chunk, ..SessionSettings::default() });
            let run = session.start_run(Budget { max_calls: Some(limit), ..Budget::default() });
            let tasks: Vec<_> = (0..task_count)
                .map(|i| {
                    run.render(PAIR_COMPARE_TEMPLATE, vec![items[i].clone(), items[i + 40].clone()])
                        .unwrap()
                })
                .collect();
            let outcome = run.run_batch(tasks).unwrap();
            (outcome.responses, outcome.truncated, run.ledger())
        };

        prop_assert_eq!(run_at(1), run_at(workers));
    }
}

fn cluster_fixture(
    num_records: usize,
    clusters: usize,
) -> (Dataset, Vec<String>, QuestionSet, GroundTruth) {
    let mut dataset = Dataset::new("fixture", vec!["name".to_owned()]);
    let tags = ["alpha", "beta", "gamma"];
    let mut memberships = Vec::new();
    for i in 0..num_records {
        let cluster = i % clusters;
        dataset
            .push(Record::new(format!("r{i}")).with_text(
                "name",
                format!("{} establishment number {i}", tags[cluster]),
            ))
            .unwrap();
        memberships.push(cluster);
    }
    let attrs = vec!["name".to_owned()];
    let mut truth = GroundTruth::new();
    for (record, &cluster) in dataset.records.iter().zip(&memberships) {
        truth.set_cluster(serialize_record(record, &attrs, None), format!("c{cluster}"));
    }
    let mut questions = Vec::new();
    for i in 0..num_records {
        for j in (i + 1)..num_records {
            questions.push(Question {
                a: dataset.records[i].id.clone(),
                b: dataset.records[j].id.clone(),
                label: Some(memberships[i] == memberships[j]),
            });
        }
    }
    (dataset, attrs, QuestionSet::new(questions), truth)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn repair_invariants_hold_on_random_graphs(
        num_records in 6usize..11,
        clusters in 2usize..4,
        miss in 0.0f64..0.6,
        seed in any::<u64>(),
    ) {
        let (dataset, attrs, questions, truth) = cluster_fixture(num_records, clusters);
        let errors = ErrorModel { p_match_miss: Some(miss), ..ErrorModel::default() };
        let embedder = TrigramEmbedder::default();

        let oracle = SimulatedOracle::new(seed, errors.clone(), truth.clone()).unwrap();
        let session = OracleSession::new(Arc::new(oracle));
        let run = session.start_run(Budget::unlimited());
        let baseline = pairwise_match_baseline(&questions, &dataset, &attrs, &run).unwrap();

        let oracle = SimulatedOracle::new(seed, errors, truth).unwrap();
        let session = OracleSession::new(Arc::new(oracle));
        let run = session.start_run(Budget::unlimited());
        let repaired =
            augment_and_repair(&questions, &dataset, &attrs, &embedder, 2, &run).unwrap();

        // Repair can only add Yes answers, so recall never drops.
        prop_assert!(repaired.scores.recall >= baseline.scores.recall - 1e-12);

        for question in &questions.questions {
            let before = baseline.graph.edge(&question.a, &question.b).unwrap();
            let after = repaired.graph.edge(&question.a, &question.b).unwrap();
            if before.verdict == MatchVerdict::Yes {
                prop_assert_eq!(after.verdict, MatchVerdict::Yes, "yes edge was lost");
            }
        }

        for ((a, b), edge) in &repaired.graph.edges {
            prop_assert!(
                !(edge.origin == EdgeOrigin::Flipped && edge.verdict == MatchVerdict::No),
                "flip produced a No"
            );
            if edge.origin == EdgeOrigin::Flipped {
                let witness = edge.witness.as_ref().expect("flip carries a witness");
                prop_assert_eq!(witness.first(), Some(a));
                prop_assert_eq!(witness.last(), Some(b));
                prop_assert!(witness.len() >= 3, "witness must route around the pair");
                for hop in witness.windows(2) {
                    let step = repaired.graph.edge(&hop[0], &hop[1]).expect("witness edge");
                    prop_assert_eq!(step.verdict, MatchVerdict::Yes, "witness hop is not Yes");
                }
            }
        }
    }
}

#[test]
fn tau_rejects_mismatched_domains() {
    let a = vec!["x".to_owned(), "y".to_owned()];
    let b = vec!["x".to_owned(), "z".to_owned()];
    assert!(kendall_tau_b(&a, &b).is_err());
    let shorter = vec!["x".to_owned()];
    assert!(kendall_tau_b(&shorter, &a).is_err());
}

#[test]
fn duplicate_tasks_charge_once_whatever_the_template() {
    let store = TemplateStore::with_defaults();
    let mut truth = GroundTruth::new();
    truth.set_ordering(&["a", "b"]);
    let oracle = SimulatedOracle::perfect(1, truth);
    let session = OracleSession::new(Arc::new(oracle));
    let run = session.start_run(Budget::unlimited());
    let task = store
        .render_task(PAIR_COMPARE_TEMPLATE, vec!["a".to_owned(), "b".to_owned()])
        .unwrap();
    let outcome = run.run_batch(vec![task.clone(), task.clone(), task]).unwrap();
    assert_eq!(run.ledger().calls, 1);
    assert_eq!(outcome.responses.iter().filter(|r| r.is_some()).count(), 3);
}
