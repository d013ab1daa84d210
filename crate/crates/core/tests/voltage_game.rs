mod common;

use common::gaussian;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trades_core::grid::{evaluate_voltages, CaseStudy, CaseStudyConfig};
use trades_core::trades::random_profile;
use trades_core::{
    aggregate, pseudo_gradient, solve_ne_oracle, validate_assumptions, OracleOptions,
    StrategyProfile,
};

fn case(n_agents: usize, horizon: usize) -> CaseStudy {
    CaseStudy::build(&CaseStudyConfig {
        n_agents,
        horizon,
        ..CaseStudyConfig::default()
    })
    .unwrap()
}

/// `Phi_i` written out entry by entry: row `b*T + t` picks up
/// `N * s * R[b, bus]` from `p_t` and `N * s * X[b, bus]` from `q_t`.
fn phi_matrix(c: &CaseStudy, i: usize) -> DMatrix<f64> {
    let t = c.model.horizon;
    let nb = c.model.n_buses();
    let k = c.agents.len() as f64 * c.model.units.injection_scale();
    let bus = c.agents[i].bus;
    let mut m = DMatrix::zeros(nb * t, 2 * t);
    for b in 0..nb {
        for s in 0..t {
            m[(b * t + s, s)] = k * c.model.rmat[(b, bus)];
            m[(b * t + s, t + s)] = k * c.model.xmat[(b, bus)];
        }
    }
    m
}

#[test]
fn pseudo_gradient_matches_hand_assembled_affine_map() {
    let c = case(5, 6);
    let n = c.agents.len();
    let t = c.model.horizon;
    let nf = n as f64;
    let cfg = &c.game_config;
    let phis: Vec<DMatrix<f64>> = (0..n).map(|i| phi_matrix(&c, i)).collect();
    // J_i = x'Lx - pi'p + |sigma - sigma_ref|_H^2
    //   => F_i = 2 L x_i - col(pi, 0) + (2/N) Phi_i' H (sigma - sigma_ref).
    let mut a = DMatrix::zeros(2 * t * n, 2 * t * n);
    let mut b = DVector::zeros(2 * t * n);
    for i in 0..n {
        for j in 0..n {
            let mut blk = phis[i].transpose() * &cfg.h * &phis[j] * (2.0 / (nf * nf));
            if i == j {
                blk += &cfg.lwm * 2.0;
            }
            a.view_mut((2 * t * i, 2 * t * j), (2 * t, 2 * t))
                .copy_from(&blk);
        }
        let mut bi = -(phis[i].transpose() * &cfg.h * &cfg.sigma_ref) * (2.0 / nf);
        for s in 0..t {
            bi[s] -= cfg.price[s];
        }
        b.rows_mut(2 * t * i, 2 * t).copy_from(&bi);
    }

    let spec = c.game.affine_form().unwrap();
    assert!((&spec.a - &a).amax() <= 1e-12 * a.amax());
    assert!((&spec.b - &b).amax() <= 1e-12 * b.amax().max(1.0));
    assert!(spec.is_symmetric());

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let x = DVector::from_fn(a.ncols(), |_, _| 0.01 * gaussian(&mut rng));
        let f = pseudo_gradient(
            &c.game,
            &StrategyProfile::new(x.clone(), &c.game.dims()).unwrap(),
        )
        .unwrap();
        let expected = &a * &x + &b;
        assert!((f - &expected).norm() <= 1e-12 * expected.norm().max(1.0));
    }
}

#[test]
fn aggregate_is_the_voltage_change() {
    let c = case(6, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let x = c
            .game
            .project(&random_profile(&c.game, rand::Rng::random(&mut rng)))
            .unwrap();
        let sigma = aggregate(&c.game, &x).unwrap();
        let v = evaluate_voltages(&c.model, &c.agents, &c.game_config, &x)
            .unwrap()
            .v;
        assert!((sigma - (v - &c.model.v0)).amax() <= 1e-12);
    }
}

#[test]
fn default_case_constants() {
    // Regression constants for the default 15-bus, 40-charger instance.
    let c = case(40, 24);
    let spec = c.game.affine_form().unwrap();
    let mu = spec.monotonicity_modulus();
    let lip = spec.lipschitz();
    assert!((mu - 2.0).abs() < 1e-8, "mu = {mu}");
    assert!((lip - 44.72).abs() < 0.01, "L = {lip}");
    let sampled = validate_assumptions(&c.game, 50, 1).unwrap();
    assert!(sampled.passed(), "{:?}", sampled.violations);
    assert!(sampled.mu_sampled >= mu * (1.0 - 1e-9));
}

#[test]
fn equilibrium_improves_on_the_base_load() {
    let c = case(40, 24);
    let sol = solve_ne_oracle(&c.game, &OracleOptions::default()).unwrap();
    let zero = StrategyProfile::zeros(&c.game.dims());
    let base = evaluate_voltages(&c.model, &c.agents, &c.game_config, &zero).unwrap();
    let ne = evaluate_voltages(&c.model, &c.agents, &c.game_config, &sol.x).unwrap();
    assert!(
        ne.deviation < base.deviation,
        "{} vs {}",
        ne.deviation,
        base.deviation
    );
    assert!(c.game.feasibility_residual(&sol.x) <= 1e-8);
    // Targets are met to the membership tolerance, which is in strategy
    // units (MW).
    let tol_kwh = 1e-8 * c.model.units.power_unit_kw;
    for (i, a) in c.agents.iter().enumerate() {
        let xi = sol.x.agent(i);
        let slot_hours = 24.0 / a.plugged.len() as f64;
        let kwh: f64 = -xi[..24].iter().sum::<f64>() * slot_hours * c.model.units.power_unit_kw;
        assert!(
            (kwh - a.target_kwh).abs() <= tol_kwh,
            "{kwh} vs {}",
            a.target_kwh
        );
    }
}
