//! The TRADES iteration: a damped projected pseudo-gradient step on the
//! strategies, driven by a perturbed-consensus estimate of the aggregate.
//!
//! ```text
//! x_i+ = x_i + delta (P_Xi[x_i - gamma F~_i(x_i, phi_i(x_i) + z_i)] - x_i)
//! z+   = W z + (W - I) phi(x)
//! ```
//!
//! Both lines read the old state, so all agents update simultaneously.

mod baseline;
mod diagnostics;
mod trace;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{local_operator_unchecked, GameDefinition, StrategyProfile};
use crate::network::{consensus_step, AgentStack, WeightedDigraph};

pub use baseline::{baseline_diminishing, StepSchedule};
pub use diagnostics::{
    boundary_layer_probe, decompose_tracker, exact_tracker_run, reduced_system_run,
    BoundaryLayerReport, TrackerBasis, TrackerDecomposition,
};
pub use trace::{fit_rate, ConvergenceReport, IterationTrace, RateFit, StopReason, Verdict};

/// Share of iterations discarded before fitting the rate (at least 50).
pub const TRANSIENT_FRACTION: f64 = 0.05;
pub const MIN_TRANSIENT: usize = 50;
/// Errors at or below this level are treated as floating-point floor.
pub const FIT_FLOOR: f64 = 1e-12;
pub const PASS_R_SQUARED: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TradesConfig {
    pub gamma: f64,
    pub delta: f64,
    pub max_iter: usize,
    /// Stop once `|x+ - x| / delta <= stop_tol`.
    pub stop_tol: f64,
    /// Record every `trace_stride`-th iterate (the first and last always are).
    pub trace_stride: usize,
    /// Seed for the random initial profile.
    pub seed: u64,
}

impl Default for TradesConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            delta: 0.5,
            max_iter: 50_000,
            stop_tol: 1e-12,
            trace_stride: 1,
            seed: 0,
        }
    }
}

impl TradesConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.stop_tol > 0.0) {
            return bad(format!("stop_tol must be positive, got {}", self.stop_tol));
        }
        if self.max_iter == 0 || self.trace_stride == 0 {
            return bad("max_iter and trace_stride must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradesState {
    pub x: StrategyProfile,
    pub z: AgentStack,
    pub t: usize,
}

/// Projects `x0` onto the feasible set and zeroes the trackers.
pub fn init(game: &GameDefinition, x0: &StrategyProfile) -> Result<TradesState> {
    Ok(TradesState {
        x: game.project(x0)?,
        z: AgentStack::zeros(game.n_agents(), game.aggregate_dim()),
        t: 0,
    })
}

/// Standard normal profile drawn from `seed` (not yet projected).
pub fn random_profile(game: &GameDefinition, seed: u64) -> StrategyProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = game.total_dim();
    let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    StrategyProfile::new(v, &game.dims()).expect("length matches game dimension")
}

pub fn step(
    game: &GameDefinition,
    graph: &WeightedDigraph,
    cfg: &TradesConfig,
    state: &TradesState,
) -> Result<TradesState> {
    cfg.validate()?;
    let phi = game.contributions(&state.x);
    advance(game, graph, cfg.gamma, cfg.delta, state, &phi)
}

/// One synchronous update with an explicit stepsize and damping. `delta = 1`
/// is allowed here so the baseline can share the code path.
pub(crate) fn advance(
    game: &GameDefinition,
    graph: &WeightedDigraph,
    gamma: f64,
    delta: f64,
    state: &TradesState,
    phi: &AgentStack,
) -> Result<TradesState> {
    let x = strategy_update(game, gamma, delta, &state.x, &state.z, phi)?;
    let z = consensus_step(graph, &state.z, phi)?;
    let t = state.t + 1;
    if !x
        .stacked()
        .iter()
        .chain(z.as_slice())
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFiniteDetected { iteration: t });
    }
    Ok(TradesState { x, z, t })
}

/// Strategy half of the update, with agent `i` evaluating its operator at
/// `phi_i + z_i`.
pub(crate) fn strategy_update(
    game: &GameDefinition,
    gamma: f64,
    delta: f64,
    x: &StrategyProfile,
    z: &AgentStack,
    phi: &AgentStack,
) -> Result<StrategyProfile> {
    let parts = (0..game.n_agents())
        .into_par_iter()
        .map(|i| {
            let xi = x.agent(i);
            let s: Vec<f64> = phi
                .block(i)
                .iter()
                .zip(z.block(i))
                .map(|(p, q)| p + q)
                .collect();
            let g = local_operator_unchecked(game, i, xi, &s);
            let trial: Vec<f64> = xi
                .iter()
                .zip(g.iter())
                .map(|(a, b)| a - gamma * b)
                .collect();
            let y = game.player(i).projector.project(&trial)?;
            Ok(DVector::from_iterator(
                xi.len(),
                xi.iter().zip(y.iter()).map(|(a, b)| a + delta * (b - a)),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StrategyProfile::from_parts(&parts))
}

/// `(max_i |phi_i + z_i - sigma|, |(I - 11'/N)(z + phi)|)`. The second
/// quantity equals `|z_perp - h(x)|` in the rotated coordinates.
pub(crate) fn tracking_errors(phi: &AgentStack, z: &AgentStack) -> (f64, f64) {
    let n = phi.n_agents();
    let sigma = phi.block_mean();
    let mut mean = vec![0.0; phi.dim()];
    for i in 0..n {
        for ((m, p), q) in mean.iter_mut().zip(phi.block(i)).zip(z.block(i)) {
            *m += p + q;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let (mut est, mut dis2) = (0.0_f64, 0.0);
    for i in 0..n {
        let (mut e2, mut d2) = (0.0, 0.0);
        for k in 0..phi.dim() {
            let y = phi.block(i)[k] + z.block(i)[k];
            e2 += (y - sigma[k]).powi(2);
            d2 += (y - mean[k]).powi(2);
        }
        est = est.max(e2.sqrt());
        dis2 += d2;
    }
    (est, dis2.sqrt())
}

pub(crate) fn record(
    trace: &mut IterationTrace,
    game: &GameDefinition,
    state: &TradesState,
    phi: &AgentStack,
    step_norm: f64,
    x_star: Option<&StrategyProfile>,
) {
    let (est, dis) = tracking_errors(phi, &state.z);
    let err = x_star.map_or(f64::NAN, |xs| (state.x.stacked() - xs.stacked()).norm());
    let sum: f64 = state
        .z
        .block_sum()
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    trace.push(
        state.t,
        err,
        est,
        dis,
        step_norm,
        sum,
        state.z.norm(),
        game.feasibility_residual(&state.x),
    );
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: TradesState,
    pub trace: IterationTrace,
    pub report: ConvergenceReport,
}

/// Iterates until `|x+ - x| / delta <= stop_tol` or `max_iter`, or until a
/// non-finite value shows up (reported as [`StopReason::NonFinite`]). With an
/// equilibrium `x_star` the error column is filled and the rate is fitted on
/// it; otherwise the fit uses the step norm.
pub fn run(
    game: &GameDefinition,
    graph: &WeightedDigraph,
    cfg: &TradesConfig,
    x0: &StrategyProfile,
    x_star: Option<&StrategyProfile>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if let Some(xs) = x_star {
        game.check_profile(xs)?;
    }
    let mut state = init(game, x0)?;
    let mut trace = IterationTrace::default();
    let mut phi = game.contributions(&state.x);
    record(&mut trace, game, &state, &phi, f64::NAN, x_star);

    let mut stop = StopReason::MaxIter;
    while state.t < cfg.max_iter {
        let next = match advance(game, graph, cfg.gamma, cfg.delta, &state, &phi) {
            Ok(next) => next,
            Err(Error::NonFiniteDetected { .. }) => {
                stop = StopReason::NonFinite;
                break;
            }
            Err(e) => return Err(e),
        };
        let step_norm = (next.x.stacked() - state.x.stacked()).norm();
        if !step_norm.is_finite() {
            stop = StopReason::NonFinite;
            break;
        }
        state = next;
        phi = game.contributions(&state.x);
        let done = step_norm / cfg.delta <= cfg.stop_tol;
        if done || state.t % cfg.trace_stride == 0 || state.t == cfg.max_iter {
            record(&mut trace, game, &state, &phi, step_norm, x_star);
        }
        if done {
            stop = StopReason::Converged;
            break;
        }
    }
    let report = ConvergenceReport::from_trace(&trace, stop);
    Ok(RunOutcome {
        state,
        trace,
        report,
    })
}
