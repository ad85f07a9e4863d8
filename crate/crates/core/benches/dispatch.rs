//! Compares batch dispatch through the data-parallel worker pool against the
//! sequential fallback on oracle-bound workloads. A pool of one worker takes
//! the sequential path even when the `parallel` feature is on; build with
//! `--no-default-features` to measure the fallback at every width. Sessions
//! are rebuilt per iteration so the response cache never short-circuits the
//! dispatch under test.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};

use noracle_core::cost::Budget;
use noracle_core::exec::WorkerPool;
use noracle_core::oracle::embed::TrigramEmbedder;
use noracle_core::oracle::sim::{ErrorModel, GroundTruth, SimulatedOracle};
use noracle_core::record::{serialize_record, Dataset, Record, RecordId};
use noracle_core::resolution::{augment_and_repair, serialization_attrs, Question, QuestionSet};
use noracle_core::session::OracleSession;
use noracle_core::sorting::sort_pairwise;

fn session_with(truth: &GroundTruth, errors: &ErrorModel, workers: usize) -> OracleSession {
    let oracle = SimulatedOracle::new(7, errors.clone(), truth.clone()).unwrap();
    OracleSession::new(Arc::new(oracle)).with_pool(Arc::new(WorkerPool::new(workers)))
}

fn bench_pairwise_sort(c: &mut Criterion) {
    let items: Vec<String> = (0..40).map(|i| format!("entry number {i:02}")).collect();
    let mut truth = GroundTruth::new();
    truth.set_ordering(&items);
    let errors = ErrorModel { p_compare_flip: 0.05, ..ErrorModel::perfect() };

    let mut group = c.benchmark_group("pairwise_sort_40_items");
    for workers in [1usize, 8] {
        group.bench_with_input(BenchmarkId::new("workers", workers), &workers, |b, &workers| {
            b.iter_batched(
                || session_with(&truth, &errors, workers),
                |session| {
                    let run = session.start_run(Budget::unlimited());
                    sort_pairwise(&items, &run, false).unwrap()
                },
                BatchSize::SmallInput,
            );
        });
    }
    group.finish();
}

fn bench_resolve_repair(c: &mut Criterion) {
    let stems = [
        "tom tom grill", "golden dragon", "oak street diner", "blue lagoon cafe",
        "mountain top lodge", "river bend bistro", "sunset terrace", "green garden deli",
    ];
    let variants = ["", " house", " and co", " restaurant", " place"];
    let mut dataset = Dataset::new("duplicates", vec!["name".to_owned()]);
    let mut members: Vec<Vec<RecordId>> = Vec::new();
    for (c, stem) in stems.iter().enumerate() {
        let mut ids = Vec::new();
        for (r, variant) in variants.iter().enumerate() {
            let id = RecordId::from(format!("c{c}r{r}"));
            dataset
                .push(Record::new(id.clone()).with_text("name", format!("{stem}{variant}")))
                .unwrap();
            ids.push(id);
        }
        members.push(ids);
    }
    let attrs = serialization_attrs(&dataset, &[]);
    let mut truth = GroundTruth::new();
    for (c, ids) in members.iter().enumerate() {
        for id in ids {
            let record = dataset.get(id).unwrap();
            truth.set_cluster(serialize_record(record, &attrs, None), format!("k{c}"));
        }
    }
    let mut questions = Vec::new();
    for ids in &members {
        for r in 0..ids.len() {
            questions.push(Question {
                a: ids[r].clone(),
                b: ids[(r + 1) % ids.len()].clone(),
                label: Some(true),
            });
        }
    }
    let questions = QuestionSet::new(questions);
    let errors = ErrorModel { p_match_miss: Some(0.2), ..ErrorModel::perfect() };
    let embedder = TrigramEmbedder::default();

    let mut group = c.benchmark_group("resolve_repair_40_records");
    for workers in [1usize, 8] {
        group.bench_with_input(BenchmarkId::new("workers", workers), &workers, |b, &workers| {
            b.iter_batched(
                || session_with(&truth, &errors, workers),
                |session| {
                    let run = session.start_run(Budget::unlimited());
                    augment_and_repair(&questions, &dataset, &attrs, &embedder, 2, &run).unwrap()
                },
                BatchSize::SmallInput,
            );
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pairwise_sort, bench_resolve_repair);
criterion_main!(benches);
