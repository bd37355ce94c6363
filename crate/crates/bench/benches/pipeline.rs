use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use conchain_core::sched::{schedule_conchain, HoldState};
use conchain_core::{build_conflict_graph, generate_workload, run_simulation, EngineConfig, Scheme, Transaction, WorkloadConfig};

fn stream(n_txs: usize) -> (WorkloadConfig, Vec<Transaction>) {
    let w = WorkloadConfig {
        n_txs,
        ..WorkloadConfig::default()
    };
    let txs = generate_workload(&w).unwrap().txs;
    (w, txs)
}

fn conflict_graph(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_conflict_graph");
    for n in [200, 1000, 4000] {
        let (_, txs) = stream(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &txs, |b, txs| {
            b.iter(|| build_conflict_graph(black_box(txs)).unwrap())
        });
    }
    group.finish();
}

fn conchain_assigner(c: &mut Criterion) {
    let mut group = c.benchmark_group("schedule_conchain");
    for n in [50, 200, 1000] {
        let (_, txs) = stream(n);
        let graph = build_conflict_graph(&txs).unwrap();
        let pending: Vec<&Transaction> = txs.iter().collect();
        let hold = HoldState::new(10);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pending, |b, pending| {
            b.iter(|| schedule_conchain(black_box(pending), 4, &graph, &hold, None).unwrap())
        });
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_simulation");
    group.sample_size(10);
    let w = WorkloadConfig {
        n_txs: 2000,
        ..WorkloadConfig::default()
    };
    let s = generate_workload(&w).unwrap();
    let initial = w.initial_state();
    for scheme in [Scheme::Fifo, Scheme::Conchain] {
        group.bench_function(scheme.token(), |b| {
            b.iter(|| run_simulation(&s, scheme, &initial, &EngineConfig::default(), "RW").unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, conflict_graph, conchain_assigner, simulation);
criterion_main!(benches);
