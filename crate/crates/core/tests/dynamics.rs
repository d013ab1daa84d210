use trades_core::game::AffineFamily;
use trades_core::grid::{CaseStudy, CaseStudyConfig};
use trades_core::network::{gen_digraph, make_doubly_stochastic, spectrum};
use trades_core::trades::{
    self, baseline_diminishing, boundary_layer_probe, exact_tracker_run, random_profile,
    reduced_system_run, StopReason, Verdict,
};
use trades_core::{
    solve_ne_oracle, GameDefinition, OracleOptions, StepSchedule, TradesConfig, WeightMethod,
    WeightedDigraph,
};

fn affine() -> GameDefinition {
    AffineFamily::default().build().unwrap()
}

fn graph(n: usize, eta: f64, seed: u64, method: WeightMethod) -> WeightedDigraph {
    make_doubly_stochastic(&gen_digraph(n, eta, seed).unwrap(), method).unwrap()
}

fn max_diff(a: &[trades_core::StrategyProfile], b: &[trades_core::StrategyProfile]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.stacked() - y.stacked()).amax())
        .fold(0.0, f64::max)
}

#[test]
fn exact_trackers_reproduce_the_centralized_trajectory() {
    let game = affine();
    let cfg = TradesConfig::default();
    let x0 = random_profile(&game, 11);
    let reduced = reduced_system_run(&game, &cfg, &x0, 1000).unwrap();
    let exact = exact_tracker_run(&game, &cfg, &x0, 1000).unwrap();
    assert!(max_diff(&reduced, &exact) <= 1e-12);

    let case = CaseStudy::build(&CaseStudyConfig {
        n_agents: 8,
        horizon: 8,
        ..CaseStudyConfig::default()
    })
    .unwrap();
    let x0 = random_profile(&case.game, 12);
    let reduced = reduced_system_run(&case.game, &cfg, &x0, 200).unwrap();
    let exact = exact_tracker_run(&case.game, &cfg, &x0, 200).unwrap();
    assert!(max_diff(&reduced, &exact) <= 1e-12);
}

#[test]
fn frozen_strategies_give_geometric_tracking() {
    let game = affine();
    for seed in 1..=5 {
        let g = graph(10, 0.7, seed, WeightMethod::MetropolisSymmetrized);
        let rho = spectrum(&g).unwrap();
        let x = game.project(&random_profile(&game, seed)).unwrap();
        let steps = rho.steps_for_decades(10.0);
        let rep = boundary_layer_probe(&g, &game, &x, None, steps).unwrap();
        assert!(
            rep.est_err[steps] <= 1e-10,
            "seed {seed}: {:e} after {steps}",
            rep.est_err[steps]
        );
        let worst = rep.ratios[10..].iter().copied().fold(0.0, f64::max);
        assert!(
            worst <= rho.rho_disagreement + 0.01,
            "seed {seed}: ratio {worst}"
        );
    }
}

#[test]
fn sinkhorn_tracking_contracts_by_the_singular_value() {
    let game = affine();
    let g = graph(10, 0.4, 3, WeightMethod::Sinkhorn);
    let sp = spectrum(&g).unwrap();
    let x = game.project(&random_profile(&game, 3)).unwrap();
    let rep = boundary_layer_probe(&g, &game, &x, None, 200).unwrap();
    // Every single step is bounded by the largest singular value of W - 11'/N.
    for (k, r) in rep
        .ratios
        .iter()
        .enumerate()
        .take_while(|(k, _)| rep.disagreement[*k] > 1e-13)
    {
        assert!(*r <= sp.singular_disagreement + 1e-9, "step {k}: {r}");
    }
    assert!(*rep.est_err.last().unwrap() < 1e-11);
}

#[test]
fn run_keeps_tracker_sum_and_feasibility() {
    let game = affine();
    for method in [WeightMethod::Sinkhorn, WeightMethod::MetropolisSymmetrized] {
        let g = graph(10, 0.7, 1, method);
        let xs = solve_ne_oracle(&game, &OracleOptions::default()).unwrap().x;
        let out = trades::run(
            &game,
            &g,
            &TradesConfig::default(),
            &random_profile(&game, 0),
            Some(&xs),
        )
        .unwrap();
        assert_eq!(out.report.stop, StopReason::Converged);
        assert_eq!(out.report.verdict, Verdict::Pass);
        assert!(out.trace.max_tracker_sum_ratio() <= 1e-10);
        assert!(out.trace.max_feasibility() <= 1e-8);
        assert!(out.report.final_err_x.unwrap() <= 1e-8);
    }
}

#[test]
fn voltage_run_stays_feasible() {
    let case = CaseStudy::build(&CaseStudyConfig {
        n_agents: 10,
        horizon: 12,
        ..CaseStudyConfig::default()
    })
    .unwrap();
    let g = graph(10, 0.7, 2, WeightMethod::MetropolisSymmetrized);
    let cfg = TradesConfig {
        max_iter: 3000,
        ..TradesConfig::default()
    };
    let out = trades::run(&case.game, &g, &cfg, &random_profile(&case.game, 4), None).unwrap();
    assert!(out.trace.max_feasibility() <= 1e-8);
    assert!(out.trace.max_tracker_sum_ratio() <= 1e-10);
}

#[test]
fn identical_inputs_give_identical_traces() {
    let game = affine();
    let g = graph(10, 0.7, 1, WeightMethod::Sinkhorn);
    let cfg = TradesConfig {
        max_iter: 500,
        trace_stride: 7,
        ..TradesConfig::default()
    };
    let csv = || {
        let out = trades::run(&game, &g, &cfg, &random_profile(&game, 5), None).unwrap();
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf).unwrap();
        buf
    };
    let first = csv();
    assert_eq!(first, csv());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("t,err_x,est_err_max,disagreement,step_norm\n0,NaN,"));
    // Rows at 0, 7, ..., 497 and the final iterate 500.
    assert_eq!(text.lines().count(), 1 + 72 + 1);
}

#[test]
fn diminishing_baseline_is_slower_than_trades() {
    let game = affine();
    let g = graph(10, 0.7, 1, WeightMethod::MetropolisSymmetrized);
    let xs = solve_ne_oracle(&game, &OracleOptions::default()).unwrap().x;
    let x0 = random_profile(&game, 0);
    let schedule = StepSchedule::Power {
        gamma0: 0.1,
        exponent: 0.6,
    };
    let base = baseline_diminishing(&game, &g, &schedule, &x0, 3000, 10, Some(&xs)).unwrap();
    let fast = trades::run(
        &game,
        &g,
        &TradesConfig {
            gamma: 0.1,
            ..TradesConfig::default()
        },
        &x0,
        Some(&xs),
    )
    .unwrap();
    let base_err = *base.err_x.last().unwrap();
    assert!(
        base_err < 0.1 * base.err_x[0],
        "baseline did not make progress"
    );
    assert!(fast.state.t < 3000);
    assert!(fast.report.final_err_x.unwrap() < 1e-3 * base_err);
    assert!(base.max_tracker_sum_ratio() <= 1e-10);
}
