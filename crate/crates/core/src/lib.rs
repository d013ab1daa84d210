//! Fully distributed Nash equilibrium seeking for aggregative games.
//!
//! Each agent runs a damped projected pseudo-gradient step on its own
//! strategy while a perturbed average-consensus tracker reconstructs the
//! (generalized) aggregate from neighbor exchanges only. The crate also ships
//! the tooling needed to check that behavior: assumption validators, a
//! centralized equilibrium oracle, two-time-scale diagnostics and a synthetic
//! EV voltage-support case study.

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod game;
pub mod grid;
pub mod linalg;
pub mod network;
pub mod projection;
pub mod trades;

pub use error::{Error, Result};
pub use game::{
    aggregate, local_operator, pseudo_gradient, solve_ne_oracle, validate_assumptions,
    AffineGameSpec, AggregationRule, AssumptionReport, CostOracle, GameDefinition,
    LinearAggregation, OracleOptions, Player, QuadraticCost, StrategyProfile,
};
pub use network::{consensus_step, AgentStack, ConsensusSpectrum, WeightMethod, WeightedDigraph};
pub use projection::{build_ev_projector, ConvexSet, FeasibleSetProjector, SetKind};
pub use trades::{
    ConvergenceReport, IterationTrace, RunOutcome, StepSchedule, TradesConfig, TradesState,
};
