//! Aggregative games: every player's cost depends on its own strategy and on
//! the generalized aggregate `sigma(x) = (1/N) sum_i phi_i(x_i)`.

mod oracle;
mod quadratic;
mod validate;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::network::AgentStack;
use crate::projection::FeasibleSetProjector;

pub use oracle::{solve_ne_oracle, OracleOptions, OracleSolution};
pub use quadratic::{AffineFamily, AffineGameSpec, LinearAggregation, QuadraticCost};
pub use validate::{validate_assumptions, AssumptionReport, IDEMPOTENCE_TOL};

/// Stacked strategies `col(x_1, ..., x_N)` with per-agent slicing.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    stacked: DVector<f64>,
    offsets: Vec<usize>,
}

impl StrategyProfile {
    pub fn new(stacked: DVector<f64>, dims: &[usize]) -> Result<Self> {
        let offsets = offsets_of(dims);
        check_dim("strategy profile", *offsets.last().unwrap(), stacked.len())?;
        Ok(Self { stacked, offsets })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let offsets = offsets_of(dims);
        Self {
            stacked: DVector::zeros(*offsets.last().unwrap()),
            offsets,
        }
    }

    pub fn from_parts(parts: &[DVector<f64>]) -> Self {
        let dims: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        let mut out = Self::zeros(&dims);
        for (i, p) in parts.iter().enumerate() {
            out.agent_mut(i).copy_from_slice(p.as_slice());
        }
        out
    }

    pub fn n_agents(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_dim(&self) -> usize {
        self.stacked.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.stacked.as_slice()[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn agent_mut(&mut self, i: usize) -> &mut [f64] {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        &mut self.stacked.as_mut_slice()[a..b]
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.stacked
    }

    pub fn into_stacked(self) -> DVector<f64> {
        self.stacked
    }

    pub fn parts(&self) -> Vec<DVector<f64>> {
        (0..self.n_agents())
            .map(|i| DVector::from_column_slice(self.agent(i)))
            .collect()
    }

    /// Same layout, new values.
    pub fn with_stacked(&self, stacked: DVector<f64>) -> Result<Self> {
        check_dim("strategy profile", self.stacked.len(), stacked.len())?;
        Ok(Self {
            stacked,
            offsets: self.offsets.clone(),
        })
    }
}

fn offsets_of(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len() + 1);
    offsets.push(0);
    for d in dims {
        offsets.push(offsets.last().unwrap() + d);
    }
    offsets
}

/// Aggregation rule `phi_i : R^{n_i} -> R^d`.
///
/// The jacobian is the `d x n_i` matrix of partials; the chain-rule term of
/// the local operator uses its transpose.
pub trait AggregationRule: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, x: &[f64]) -> DVector<f64>;
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;

    fn jacobian_transpose_mul(&self, x: &[f64], v: &[f64]) -> DVector<f64> {
        self.jacobian(x).tr_mul(&DVector::from_column_slice(v))
    }

    /// Known Lipschitz constant of `eval`, if any.
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }

    /// The matrix of the rule when it is linear.
    fn linear_map(&self) -> Option<DMatrix<f64>> {
        None
    }
}

/// Partial gradients of `J_i(x_i, s)`.
pub trait CostOracle: Send + Sync {
    /// Gradient with respect to the player's own strategy.
    fn grad_own(&self, x: &[f64], s: &[f64]) -> DVector<f64>;
    /// Gradient with respect to the aggregate argument.
    fn grad_aggregate(&self, x: &[f64], s: &[f64]) -> DVector<f64>;

    fn value(&self, _x: &[f64], _s: &[f64]) -> Option<f64> {
        None
    }

    fn as_quadratic(&self) -> Option<&QuadraticCost> {
        None
    }
}

pub struct Player {
    pub cost: Box<dyn CostOracle>,
    pub aggregation: Box<dyn AggregationRule>,
    pub projector: FeasibleSetProjector,
}

impl Player {
    pub fn new(
        cost: impl CostOracle + 'static,
        aggregation: impl AggregationRule + 'static,
        projector: FeasibleSetProjector,
    ) -> Self {
        Self {
            cost: Box::new(cost),
            aggregation: Box::new(aggregation),
            projector,
        }
    }

    pub fn dim(&self) -> usize {
        self.aggregation.dim_in()
    }
}

pub struct GameDefinition {
    players: Vec<Player>,
    aggregate_dim: usize,
}

impl std::fmt::Debug for GameDefinition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameDefinition")
            .field("players", &self.players.len())
            .field("aggregate_dim", &self.aggregate_dim)
            .field("dims", &self.dims())
            .finish()
    }
}

impl GameDefinition {
    pub fn new(players: Vec<Player>) -> Result<Self> {
        let Some(first) = players.first() else {
            return Err(Error::InvalidParameter(
                "a game needs at least one player".into(),
            ));
        };
        let d = first.aggregation.dim_out();
        for p in &players {
            check_dim("aggregation output", d, p.aggregation.dim_out())?;
            check_dim(
                "projector dimension",
                p.aggregation.dim_in(),
                p.projector.dim(),
            )?;
        }
        Ok(Self {
            players,
            aggregate_dim: d,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.players.len()
    }

    pub fn aggregate_dim(&self) -> usize {
        self.aggregate_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        self.players.iter().map(Player::dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.players.iter().map(Player::dim).sum()
    }

    pub fn player(&self, i: usize) -> &Player {
        &self.players[i]
    }

    pub fn players(&self) -> &[Player] {
        &self.players
    }

    pub fn check_profile(&self, x: &StrategyProfile) -> Result<()> {
        check_dim("number of agents", self.n_agents(), x.n_agents())?;
        for (p, d) in self.players.iter().zip(x.dims()) {
            check_dim("agent strategy", p.dim(), d)?;
        }
        Ok(())
    }

    /// `phi(x) = col(phi_1(x_1), ..., phi_N(x_N))`.
    pub fn contributions(&self, x: &StrategyProfile) -> AgentStack {
        let mut out = AgentStack::zeros(self.n_agents(), self.aggregate_dim);
        for (i, p) in self.players.iter().enumerate() {
            out.block_mut(i)
                .copy_from_slice(p.aggregation.eval(x.agent(i)).as_slice());
        }
        out
    }

    /// Projects every agent's strategy onto its own feasible set.
    pub fn project(&self, x: &StrategyProfile) -> Result<StrategyProfile> {
        self.check_profile(x)?;
        let parts = self
            .players
            .par_iter()
            .enumerate()
            .map(|(i, p)| p.projector.project(x.agent(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(StrategyProfile::from_parts(&parts))
    }

    /// Largest membership residual across agents.
    pub fn feasibility_residual(&self, x: &StrategyProfile) -> f64 {
        self.players
            .iter()
            .enumerate()
            .map(|(i, p)| p.projector.membership_residual(x.agent(i)))
            .fold(0.0, f64::max)
    }

    /// Exact affine form `F(x) = A x + b` when every cost is quadratic and
    /// every aggregation rule is linear.
    pub fn affine_form(&self) -> Option<AffineGameSpec> {
        quadratic::assemble_affine(self)
    }
}

/// `sigma(x) = (1/N) sum_i phi_i(x_i)`.
pub fn aggregate(game: &GameDefinition, x: &StrategyProfile) -> Result<DVector<f64>> {
    game.check_profile(x)?;
    Ok(sigma_unchecked(game, x))
}

fn sigma_unchecked(game: &GameDefinition, x: &StrategyProfile) -> DVector<f64> {
    let mut s = DVector::zeros(game.aggregate_dim);
    for (i, p) in game.players.iter().enumerate() {
        s += p.aggregation.eval(x.agent(i));
    }
    s / game.n_agents() as f64
}

/// `F~_i(x_i, s) = grad_1 J_i(x_i, s) + (dphi_i(x_i)^T / N) grad_2 J_i(x_i, s)`.
pub fn local_operator(
    game: &GameDefinition,
    i: usize,
    x_i: &[f64],
    s: &[f64],
) -> Result<DVector<f64>> {
    if i >= game.n_agents() {
        return Err(Error::InvalidParameter(format!(
            "agent index {i} out of range"
        )));
    }
    let p = &game.players[i];
    check_dim("local strategy", p.dim(), x_i.len())?;
    check_dim("aggregate estimate", game.aggregate_dim, s.len())?;
    Ok(local_operator_unchecked(game, i, x_i, s))
}

pub(crate) fn local_operator_unchecked(
    game: &GameDefinition,
    i: usize,
    x_i: &[f64],
    s: &[f64],
) -> DVector<f64> {
    let p = &game.players[i];
    let mut g = p.cost.grad_own(x_i, s);
    let g2 = p.cost.grad_aggregate(x_i, s);
    let chain = p.aggregation.jacobian_transpose_mul(x_i, g2.as_slice());
    g.axpy(1.0 / game.n_agents() as f64, &chain, 1.0);
    g
}

/// Pseudo-gradient `F(x)`: the stack of local operators evaluated at the true
/// aggregate.
pub fn pseudo_gradient(game: &GameDefinition, x: &StrategyProfile) -> Result<DVector<f64>> {
    game.check_profile(x)?;
    let s = sigma_unchecked(game, x);
    let mut out = DVector::zeros(x.total_dim());
    let mut offset = 0;
    for i in 0..game.n_agents() {
        let g = local_operator_unchecked(game, i, x.agent(i), s.as_slice());
        out.rows_mut(offset, g.len()).copy_from(&g);
        offset += g.len();
    }
    Ok(out)
}
