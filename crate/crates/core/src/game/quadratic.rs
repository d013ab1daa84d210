use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{AggregationRule, CostOracle, GameDefinition, Player};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::projection::{ConvexSet, FeasibleSetProjector, SetKind};

/// `J(x, s) = 1/2 x'Qx + r'x + x'Cs + 1/2 (s - s_ref)' P (s - s_ref)`.
///
/// Penalty matrix and reference, shared across players.
type SharedPenalty = (Arc<DMatrix<f64>>, Arc<DVector<f64>>);

/// The coupling `C` (n x d) and the aggregate penalty `P` (d x d) are both
/// optional; `P` and `s_ref` are shared behind `Arc` since every player of a
/// large game usually carries the same ones.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    r: DVector<f64>,
    coupling: Option<DMatrix<f64>>,
    penalty: Option<SharedPenalty>,
    /// Diagonal of `P` when `P` is diagonal, used to skip dense products.
    penalty_diag: Option<Arc<DVector<f64>>>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DVector<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::InvalidParameter("Q must be square".into()));
        }
        check_dim("linear cost term", q.nrows(), r.len())?;
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(Error::InvalidParameter("Q must be symmetric".into()));
        }
        Ok(Self {
            q,
            r,
            coupling: None,
            penalty: None,
            penalty_diag: None,
        })
    }

    pub fn with_coupling(mut self, c: DMatrix<f64>) -> Result<Self> {
        check_dim("coupling rows", self.q.nrows(), c.nrows())?;
        if let Some((p, _)) = &self.penalty {
            check_dim("coupling columns", p.nrows(), c.ncols())?;
        }
        self.coupling = Some(c);
        Ok(self)
    }

    pub fn with_aggregate_penalty(
        mut self,
        penalty: Arc<DMatrix<f64>>,
        reference: Arc<DVector<f64>>,
    ) -> Result<Self> {
        if !penalty.is_square() {
            return Err(Error::InvalidParameter(
                "aggregate penalty must be square".into(),
            ));
        }
        check_dim("aggregate reference", penalty.nrows(), reference.len())?;
        if let Some(c) = &self.coupling {
            check_dim("coupling columns", penalty.nrows(), c.ncols())?;
        }
        let n = penalty.nrows();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || penalty[(i, j)] == 0.0));
        self.penalty_diag = diagonal.then(|| Arc::new(penalty.diagonal()));
        self.penalty = Some((penalty, reference));
        Ok(self)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn coupling(&self) -> Option<&DMatrix<f64>> {
        self.coupling.as_ref()
    }

    pub fn penalty(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.penalty.as_ref().map(|(p, r)| (p.as_ref(), r.as_ref()))
    }
}

impl CostOracle for QuadraticCost {
    fn grad_own(&self, x: &[f64], s: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(x);
        let mut g = &self.q * x + &self.r;
        if let Some(c) = &self.coupling {
            g += c * DVector::from_column_slice(s);
        }
        g
    }

    fn grad_aggregate(&self, x: &[f64], s: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(s.len());
        if let Some(c) = &self.coupling {
            g += c.tr_mul(&DVector::from_column_slice(x));
        }
        if let Some((p, reference)) = &self.penalty {
            let dev = DVector::from_column_slice(s) - reference.as_ref();
            match &self.penalty_diag {
                Some(diag) => g += diag.component_mul(&dev),
                None => g += p.as_ref() * dev,
            }
        }
        g
    }

    fn value(&self, x: &[f64], s: &[f64]) -> Option<f64> {
        let xv = DVector::from_column_slice(x);
        let sv = DVector::from_column_slice(s);
        let mut v = 0.5 * xv.dot(&(&self.q * &xv)) + self.r.dot(&xv);
        if let Some(c) = &self.coupling {
            v += xv.dot(&(c * &sv));
        }
        if let Some((p, reference)) = &self.penalty {
            let dev = sv - reference.as_ref();
            v += 0.5 * dev.dot(&(p.as_ref() * &dev));
        }
        Some(v)
    }

    fn as_quadratic(&self) -> Option<&QuadraticCost> {
        Some(self)
    }
}

/// `phi(x) = M x`.
#[derive(Debug, Clone)]
pub struct LinearAggregation {
    matrix: DMatrix<f64>,
    lipschitz: f64,
}

impl LinearAggregation {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let lipschitz = linalg::spectral_norm(&matrix);
        Self { matrix, lipschitz }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl AggregationRule for LinearAggregation {
    fn dim_in(&self) -> usize {
        self.matrix.ncols()
    }

    fn dim_out(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &[f64]) -> DVector<f64> {
        &self.matrix * DVector::from_column_slice(x)
    }

    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn jacobian_transpose_mul(&self, _x: &[f64], v: &[f64]) -> DVector<f64> {
        self.matrix.tr_mul(&DVector::from_column_slice(v))
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.lipschitz)
    }

    fn linear_map(&self) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}

/// Closed-form pseudo-gradient `F(x) = A x + b`, optionally with per-agent
/// box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGameSpec {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub boxes: Option<Vec<(DVector<f64>, DVector<f64>)>>,
}

impl AffineGameSpec {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidParameter("A must be square".into()));
        }
        check_dim("affine offset", a.nrows(), b.len())?;
        Ok(Self { a, b, boxes: None })
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    /// Strong-monotonicity modulus: smallest eigenvalue of `(A + A')/2`.
    pub fn monotonicity_modulus(&self) -> f64 {
        linalg::symmetric_extremes(&linalg::symmetric_part(&self.a)).0
    }

    /// Lipschitz constant `||A||_2`.
    pub fn lipschitz(&self) -> f64 {
        linalg::spectral_norm(&self.a)
    }

    pub fn is_symmetric(&self) -> bool {
        (&self.a - self.a.transpose()).amax() <= 1e-12 * self.a.amax().max(1.0)
    }
}

/// Expands `F_i = (Q_i + M_i'C_i'/N) x_i + (C_i + M_i'P_i/N) sigma + r_i - M_i'P_i s_ref/N`
/// with `sigma = (1/N) sum_j M_j x_j` into one dense matrix.
pub(super) fn assemble_affine(game: &GameDefinition) -> Option<AffineGameSpec> {
    let n_agents = game.n_agents();
    let nf = n_agents as f64;
    let d = game.aggregate_dim();
    let mut rules = Vec::with_capacity(n_agents);
    let mut costs = Vec::with_capacity(n_agents);
    for p in game.players() {
        rules.push(p.aggregation.linear_map()?);
        costs.push(p.cost.as_quadratic()?);
    }
    let dims = game.dims();
    let mut offsets = vec![0];
    for di in &dims {
        offsets.push(offsets.last().unwrap() + di);
    }
    let n = *offsets.last().unwrap();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);

    for i in 0..n_agents {
        let (m_i, cost) = (&rules[i], costs[i]);
        let ni = dims[i];
        let mut diag = cost.q.clone();
        let mut sigma_gain = cost
            .coupling
            .clone()
            .unwrap_or_else(|| DMatrix::zeros(ni, d));
        let mut offset = cost.r.clone();
        if let Some(c) = &cost.coupling {
            diag += m_i.tr_mul(&c.transpose()) / nf;
        }
        if let Some((p, reference)) = &cost.penalty {
            let mp = m_i.tr_mul(p.as_ref());
            offset -= &mp * reference.as_ref() / nf;
            sigma_gain += mp / nf;
        }
        sigma_gain /= nf;
        let mut block_row = a.rows_mut(offsets[i], ni);
        for j in 0..n_agents {
            let mut blk = block_row.columns_mut(offsets[j], dims[j]);
            blk += &sigma_gain * &rules[j];
            if i == j {
                blk += &diag;
            }
        }
        b.rows_mut(offsets[i], ni).copy_from(&offset);
    }

    let boxes = game
        .players()
        .iter()
        .map(|p| match p.projector.set.kind() {
            SetKind::Box { lower, upper } => Some((lower.clone(), upper.clone())),
            _ => None,
        })
        .collect::<Option<Vec<_>>>();
    Some(AffineGameSpec { a, b, boxes })
}

/// Random strongly monotone test family with quadratic costs
/// `J_i = 1/2 x_i'Q_i x_i + r_i'x_i + kappa x_i'C_i sigma`, linear rules
/// `phi_i = M_i x_i` and boxes `[-w, w]^{n_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFamily {
    pub agents: usize,
    pub strategy_dim: usize,
    pub aggregate_dim: usize,
    pub coupling: f64,
    /// Box half-width; `None` leaves strategies unconstrained.
    pub box_half_width: Option<f64>,
    pub seed: u64,
}

impl Default for AffineFamily {
    fn default() -> Self {
        Self {
            agents: 10,
            strategy_dim: 2,
            aggregate_dim: 2,
            coupling: 0.3,
            box_half_width: Some(1.0),
            seed: 7,
        }
    }
}

impl AffineFamily {
    pub fn build(&self) -> Result<GameDefinition> {
        if self.agents == 0 || self.strategy_dim == 0 || self.aggregate_dim == 0 {
            return Err(Error::InvalidParameter(
                "affine family dimensions must be positive".into(),
            ));
        }
        let (n, d) = (self.strategy_dim, self.aggregate_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut normal = |rows: usize, cols: usize| {
            DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
        };
        let mut players = Vec::with_capacity(self.agents);
        for _ in 0..self.agents {
            let b = normal(n, n);
            let q = b.tr_mul(&b) / n as f64 + DMatrix::identity(n, n);
            let q = linalg::symmetric_part(&q);
            let r = normal(n, 1).column(0) * 2.0;
            let c = normal(n, d) * (self.coupling / (d as f64).sqrt());
            let m = normal(d, n) / (n as f64).sqrt();
            let projector = match self.box_half_width {
                Some(w) => FeasibleSetProjector::new(ConvexSet::boxed(
                    DVector::from_element(n, -w),
                    DVector::from_element(n, w),
                )?),
                None => FeasibleSetProjector::unconstrained(n),
            };
            players.push(Player::new(
                QuadraticCost::new(q, r)?.with_coupling(c)?,
                LinearAggregation::new(m),
                projector,
            ));
        }
        let game = GameDefinition::new(players)?;
        let mu = game
            .affine_form()
            .expect("quadratic family is affine")
            .monotonicity_modulus();
        if mu <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "affine family instance is not strongly monotone (mu = {mu:.3e}); lower the coupling"
            )));
        }
        Ok(game)
    }
}
