use serde::{Deserialize, Serialize};

use super::{advance, init, record, IterationTrace};
use crate::error::{Error, Result};
use crate::game::{GameDefinition, StrategyProfile};
use crate::network::WeightedDigraph;

/// Stepsize sequence for the undamped baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `gamma_t = gamma0 / (1 + t)^exponent`, valid for `exponent` in
    /// `(0.5, 1]` (not summable, square summable).
    Power { gamma0: f64, exponent: f64 },
    /// Degenerate constant schedule; the baseline then coincides with TRADES
    /// at `delta = 1`.
    Constant { gamma: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self::Power {
            gamma0: 0.01,
            exponent: 0.6,
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Power { gamma0, exponent } => {
                if !(gamma0 > 0.0 && gamma0.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma0 must be positive, got {gamma0}"
                    )));
                }
                if !(exponent > 0.5 && exponent <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "schedule exponent {exponent} must lie in (0.5, 1] so that the steps sum to \
                         infinity while their squares stay summable"
                    )));
                }
            }
            Self::Constant { gamma } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma must be positive, got {gamma}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Self::Power { gamma0, exponent } => gamma0 / (1.0 + t as f64).powf(exponent),
            Self::Constant { gamma } => gamma,
        }
    }
}

/// Undamped tracking iteration with a diminishing stepsize, for comparison
/// plots. Runs exactly `steps` iterations and records every `stride`-th one.
pub fn baseline_diminishing(
    game: &GameDefinition,
    graph: &WeightedDigraph,
    schedule: &StepSchedule,
    x0: &StrategyProfile,
    steps: usize,
    stride: usize,
    x_star: Option<&StrategyProfile>,
) -> Result<IterationTrace> {
    schedule.validate()?;
    let stride = stride.max(1);
    let mut state = init(game, x0)?;
    let mut trace = IterationTrace::default();
    let mut phi = game.contributions(&state.x);
    record(&mut trace, game, &state, &phi, f64::NAN, x_star);
    for _ in 0..steps {
        let next = advance(game, graph, schedule.at(state.t), 1.0, &state, &phi)?;
        let step_norm = (next.x.stacked() - state.x.stacked()).norm();
        state = next;
        phi = game.contributions(&state.x);
        if state.t % stride == 0 || state.t == steps {
            record(&mut trace, game, &state, &phi, step_norm, x_star);
        }
    }
    Ok(trace)
}
