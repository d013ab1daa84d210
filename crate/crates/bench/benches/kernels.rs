use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use trades_bench::{metropolis_graph, voltage_case, warm_state};
use trades_core::trades::step;
use trades_core::{consensus_step, pseudo_gradient, AgentStack, TradesConfig};

fn consensus(c: &mut Criterion) {
    let mut group = c.benchmark_group("consensus_step");
    for n in [10, 40, 160] {
        let graph = metropolis_graph(n, 0.7);
        // One tracker block per agent, sized like the case study aggregate.
        let blocks: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..360).map(|k| ((i * 360 + k) as f64).sin()).collect())
            .collect();
        let z = AgentStack::from_blocks(&blocks).unwrap();
        let phi = z.clone();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| consensus_step(black_box(&graph), black_box(&z), black_box(&phi)).unwrap())
        });
    }
    group.finish();
}

fn projection(c: &mut Criterion) {
    let case = voltage_case(40);
    let graph = metropolis_graph(40, 0.7);
    let state = warm_state(&case, &graph, 50);
    let inputs: Vec<Vec<f64>> = (0..case.game.n_agents())
        .map(|i| state.x.agent(i).iter().map(|v| v + 0.001).collect())
        .collect();
    c.bench_function("ev_projection_40_agents", |b| {
        b.iter(|| {
            for (i, v) in inputs.iter().enumerate() {
                black_box(case.game.player(i).projector.project(v).unwrap());
            }
        })
    });
}

fn trades_step(c: &mut Criterion) {
    let case = voltage_case(40);
    let graph = metropolis_graph(40, 0.7);
    let state = warm_state(&case, &graph, 50);
    let cfg = TradesConfig::default();
    c.bench_function("pseudo_gradient_voltage", |b| {
        b.iter(|| pseudo_gradient(black_box(&case.game), black_box(&state.x)).unwrap())
    });
    c.bench_function("trades_step_voltage", |b| {
        b.iter(|| step(black_box(&case.game), &graph, &cfg, black_box(&state)).unwrap())
    });
}

criterion_group!(benches, consensus, projection, trades_step);
criterion_main!(benches);
