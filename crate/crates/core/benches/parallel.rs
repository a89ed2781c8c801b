//! Sequential vs parallel execution of the hot stages. With the `parallel`
//! feature the sequential variant runs inside a one-thread rayon pool;
//! without it only the sequential fallback is measured.

use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cdsm::ingest::{categorize, EventSequence, Scheme};
use cdsm::model::{median_split, Label};
use cdsm::pipeline::{evaluate_cdsm, CdsmParams};
use cdsm::seqmine::{collect_stats, enumerate_frequent, mine_groups, MiningParams};
use cdsm::stats::PatternClass;
use cdsm::synth::{generate, PlantSpec, SynthConfig};

struct Fixture {
    sequences: Vec<EventSequence>,
    labels: BTreeMap<String, Label>,
}

fn fixture(n_per_group: usize, length: f64) -> Fixture {
    let data = generate(&SynthConfig {
        n_high: n_per_group,
        n_low: n_per_group,
        assignments: vec!["A1".into()],
        length_mean: length,
        length_spread: length / 10.0,
        plants: vec![
            PlantSpec::frequent(
                "EDIT-PST VAR FILE EDIT-PST".parse().unwrap(),
                PatternClass::FH,
                0.8,
                0.2,
            ),
            PlantSpec::dependent(
                "EDIT-DEL FILE EDIT-DEL".parse().unwrap(),
                PatternClass::DL,
                1.0,
                0.0,
                2.0,
            ),
        ],
        seed: 42,
        ..SynthConfig::default()
    })
    .unwrap();
    Fixture {
        sequences: categorize(&data.events, Scheme::General),
        labels: median_split(&data.grades.final_grades()).unwrap(),
    }
}

fn split(f: &Fixture) -> (Vec<EventSequence>, Vec<EventSequence>) {
    f.sequences
        .iter()
        .cloned()
        .partition(|s| f.labels[&s.subject_id] == Label::High)
}

#[cfg(feature = "parallel")]
fn variants() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    vec![("sequential", Some(one)), ("parallel", None)]
}

#[cfg(not(feature = "parallel"))]
fn variants() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

macro_rules! in_variant {
    ($pool:expr, $body:expr) => {{
        #[cfg(feature = "parallel")]
        match $pool {
            Some(pool) => pool.install(|| $body),
            None => $body,
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = $pool;
            $body
        }
    }};
}

fn bench_mining(c: &mut Criterion) {
    let f = fixture(50, 300.0);
    let (high, low) = split(&f);
    let params = MiningParams::default();
    let patterns = mine_groups(&high, &low, &params).unwrap();
    let mut group = c.benchmark_group("mining");
    group.sample_size(10);
    for (name, pool) in variants() {
        group.bench_function(BenchmarkId::new("enumerate_frequent", name), |b| {
            b.iter(|| {
                in_variant!(
                    &pool,
                    black_box(enumerate_frequent(&high, &params).unwrap())
                )
            })
        });
        group.bench_function(BenchmarkId::new("collect_stats", name), |b| {
            b.iter(|| {
                in_variant!(
                    &pool,
                    black_box(collect_stats(&patterns, &high, &low, params.max_gap))
                )
            })
        });
    }
    group.finish();
}

fn bench_cross_validation(c: &mut Criterion) {
    let f = fixture(20, 120.0);
    let params = CdsmParams {
        mining: MiningParams {
            max_length: 4,
            ..MiningParams::default()
        },
        rounds: 20,
        ..CdsmParams::default()
    };
    let trial = vec!["A1".to_string()];
    let mut group = c.benchmark_group("cross_validation");
    group.sample_size(10);
    for (name, pool) in variants() {
        group.bench_function(BenchmarkId::new("evaluate_cdsm", name), |b| {
            b.iter(|| {
                in_variant!(
                    &pool,
                    black_box(evaluate_cdsm(&trial, &f.sequences, &f.labels, &params, 1).unwrap())
                )
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_mining, bench_cross_validation);
criterion_main!(benches);
