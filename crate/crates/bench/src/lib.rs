//! Fixtures shared by the benchmarks.

use trades_core::grid::{CaseStudy, CaseStudyConfig};
use trades_core::network::{gen_digraph, make_doubly_stochastic};
use trades_core::trades::{init, random_profile, TradesState};
use trades_core::{WeightMethod, WeightedDigraph};

/// The default feeder with `n_agents` chargers over 24 slots.
pub fn voltage_case(n_agents: usize) -> CaseStudy {
    CaseStudy::build(&CaseStudyConfig {
        n_agents,
        ..CaseStudyConfig::default()
    })
    .expect("default case study builds")
}

pub fn metropolis_graph(n: usize, eta: f64) -> WeightedDigraph {
    let g = gen_digraph(n, eta, 1).expect("graph");
    make_doubly_stochastic(&g, WeightMethod::MetropolisSymmetrized).expect("weights")
}

/// A state a few hundred iterations in, so projections see realistic inputs.
pub fn warm_state(case: &CaseStudy, graph: &WeightedDigraph, steps: usize) -> TradesState {
    let cfg = trades_core::TradesConfig::default();
    let mut state = init(&case.game, &random_profile(&case.game, 0)).expect("init");
    for _ in 0..steps {
        state = trades_core::trades::step(&case.game, graph, &cfg, &state).expect("step");
    }
    state
}
