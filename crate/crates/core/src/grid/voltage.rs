use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};

use super::{DistFlowModel, EvAgentSpec};
use crate::error::{check_dim, Error, Result};
use crate::game::{AggregationRule, GameDefinition, Player, QuadraticCost, StrategyProfile};
use crate::linalg::is_positive_definite;
use crate::projection::build_ev_projector_with;

/// `phi(x) = factor * ([rho xi] (x) I_T) x` for `x = (p, q)` in `R^{2T}`,
/// evaluated without forming the Kronecker product.
#[derive(Debug, Clone)]
pub struct KronAggregation {
    rho: DVector<f64>,
    xi: DVector<f64>,
    horizon: usize,
    factor: f64,
}

impl KronAggregation {
    pub fn new(rho: DVector<f64>, xi: DVector<f64>, horizon: usize, factor: f64) -> Result<Self> {
        check_dim("reactive sensitivity column", rho.len(), xi.len())?;
        Ok(Self {
            rho,
            xi,
            horizon,
            factor,
        })
    }
}

impl AggregationRule for KronAggregation {
    fn dim_in(&self) -> usize {
        2 * self.horizon
    }

    fn dim_out(&self) -> usize {
        self.rho.len() * self.horizon
    }

    fn eval(&self, x: &[f64]) -> DVector<f64> {
        let t_len = self.horizon;
        let (p, q) = x.split_at(t_len);
        DVector::from_fn(self.dim_out(), |k, _| {
            let (b, t) = (k / t_len, k % t_len);
            self.factor * (self.rho[b] * p[t] + self.xi[b] * q[t])
        })
    }

    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.linear_map().expect("rule is linear")
    }

    fn jacobian_transpose_mul(&self, _x: &[f64], v: &[f64]) -> DVector<f64> {
        let t_len = self.horizon;
        let mut out = DVector::zeros(2 * t_len);
        for b in 0..self.rho.len() {
            let row = &v[b * t_len..(b + 1) * t_len];
            for (t, vt) in row.iter().enumerate() {
                out[t] += self.rho[b] * vt;
                out[t_len + t] += self.xi[b] * vt;
            }
        }
        out * self.factor
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        // |[rho xi] (x) I| = |[rho xi]|, the root of the largest eigenvalue
        // of the 2x2 Gram matrix.
        let g = Matrix2::new(
            self.rho.dot(&self.rho),
            self.rho.dot(&self.xi),
            self.xi.dot(&self.rho),
            self.xi.dot(&self.xi),
        );
        let top = g.symmetric_eigenvalues().max().max(0.0);
        Some(self.factor.abs() * top.sqrt())
    }

    fn linear_map(&self) -> Option<DMatrix<f64>> {
        let t_len = self.horizon;
        let mut m = DMatrix::zeros(self.dim_out(), 2 * t_len);
        for b in 0..self.rho.len() {
            for t in 0..t_len {
                m[(b * t_len + t, t)] = self.factor * self.rho[b];
                m[(b * t_len + t, t_len + t)] = self.factor * self.xi[b];
            }
        }
        Some(m)
    }
}

/// Cost data shared by all chargers:
/// `J_i = -col(price, 0)' x_i + |sigma - sigma_ref|_H^2 + |x_i|_lwm^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageGameConfig {
    /// Price per strategy unit and slot, length `T`.
    pub price: DVector<f64>,
    /// `d x d` deviation penalty, `d = N_b T`.
    pub h: DMatrix<f64>,
    /// `2T x 2T` local weight.
    pub lwm: DMatrix<f64>,
    /// Target aggregate (voltage change), length `d`.
    pub sigma_ref: DVector<f64>,
    /// Whether reactive power may be provided while unplugged.
    pub reactive_always_on: bool,
}

impl VoltageGameConfig {
    /// `H = I`, `lwm = diag(1, 10) (x) I_T` and `sigma_ref = 1 - v0`, so the
    /// penalty pulls every bus towards 1 p.u.
    pub fn standard(model: &DistFlowModel, price: DVector<f64>) -> Self {
        let t = model.horizon;
        let lwm = DMatrix::from_fn(2 * t, 2 * t, |i, j| match (i == j, i < t) {
            (true, true) => 1.0,
            (true, false) => 10.0,
            _ => 0.0,
        });
        Self {
            price,
            h: DMatrix::identity(model.aggregate_dim(), model.aggregate_dim()),
            lwm,
            sigma_ref: model.v0.map(|v| 1.0 - v),
            reactive_always_on: true,
        }
    }

    pub fn validate(&self, model: &DistFlowModel) -> Result<()> {
        let d = model.aggregate_dim();
        let t = model.horizon;
        check_dim("price horizon", t, self.price.len())?;
        check_dim("deviation penalty rows", d, self.h.nrows())?;
        check_dim("deviation penalty cols", d, self.h.ncols())?;
        check_dim("local weight rows", 2 * t, self.lwm.nrows())?;
        check_dim("local weight cols", 2 * t, self.lwm.ncols())?;
        check_dim("voltage reference", d, self.sigma_ref.len())?;
        if !is_positive_definite(&self.h) {
            return Err(Error::NotPositiveDefinite { name: "H" });
        }
        if !is_positive_definite(&self.lwm) {
            return Err(Error::NotPositiveDefinite {
                name: "local weight matrix",
            });
        }
        Ok(())
    }
}

/// One player per charger with `phi_i = N s [rho_i xi_i] (x) I_T`, where `s`
/// is the per-unit injection scale, so that `sigma(x)` is the voltage change
/// caused by all chargers.
pub fn build_voltage_game(
    model: &DistFlowModel,
    agents: &[EvAgentSpec],
    cfg: &VoltageGameConfig,
) -> Result<GameDefinition> {
    cfg.validate(model)?;
    if agents.is_empty() {
        return Err(Error::InvalidParameter("no charging agents".into()));
    }
    let t = model.horizon;
    let n = agents.len() as f64;
    let unit = model.units.power_unit_kw;
    let slot_hours = 24.0 / t as f64;
    let penalty = Arc::new(&cfg.h * 2.0);
    let reference = Arc::new(cfg.sigma_ref.clone());
    let q = &cfg.lwm * 2.0;
    let mut r = DVector::zeros(2 * t);
    r.rows_mut(0, t).copy_from(&(-&cfg.price));

    let players = agents
        .iter()
        .map(|a| {
            if a.bus >= model.n_buses() {
                return Err(Error::InvalidParameter(format!(
                    "agent bus {} out of range",
                    a.bus
                )));
            }
            check_dim("plug-in profile", t, a.plugged.len())?;
            let rule = KronAggregation::new(
                model.rmat.column(a.bus).into_owned(),
                model.xmat.column(a.bus).into_owned(),
                t,
                n * model.units.injection_scale(),
            )?;
            let cost = QuadraticCost::new(q.clone(), r.clone())?
                .with_aggregate_penalty(Arc::clone(&penalty), Arc::clone(&reference))?;
            let projector = build_ev_projector_with(
                &a.plugged,
                a.target_kwh / (unit * slot_hours),
                a.s_max_kva / unit,
                cfg.reactive_always_on,
            )?;
            Ok(Player::new(cost, rule, projector))
        })
        .collect::<Result<Vec<_>>>()?;
    GameDefinition::new(players)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageEvaluation {
    /// Bus voltages, bus-major.
    pub v: DVector<f64>,
    /// `|v - v0 - sigma_ref|_H^2`.
    pub deviation: f64,
}

/// `v = v0 + s sum_i ([rho_i xi_i] (x) I_T) x_i` and the deviation score.
pub fn evaluate_voltages(
    model: &DistFlowModel,
    agents: &[EvAgentSpec],
    cfg: &VoltageGameConfig,
    x: &StrategyProfile,
) -> Result<VoltageEvaluation> {
    check_dim("number of agents", agents.len(), x.n_agents())?;
    let t = model.horizon;
    let s = model.units.injection_scale();
    let mut v = model.v0.clone();
    for (i, a) in agents.iter().enumerate() {
        let xi = x.agent(i);
        check_dim("agent strategy", 2 * t, xi.len())?;
        for b in 0..model.n_buses() {
            let (rb, xb) = (model.rmat[(b, a.bus)], model.xmat[(b, a.bus)]);
            for k in 0..t {
                v[b * t + k] += s * (rb * xi[k] + xb * xi[t + k]);
            }
        }
    }
    let dev = &v - &model.v0 - &cfg.sigma_ref;
    let deviation = dev.dot(&(&cfg.h * &dev));
    Ok(VoltageEvaluation { v, deviation })
}
