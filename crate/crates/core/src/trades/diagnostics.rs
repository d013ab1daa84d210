//! Two-time-scale diagnostics: the tracker coordinates `(z_bar, z_perp)`, the
//! boundary-layer system (x frozen) and the reduced system (exact aggregate).

use nalgebra::DVector;

use super::{init, strategy_update, TradesConfig, TradesState};
use crate::error::{check_dim, Result};
use crate::game::{pseudo_gradient, GameDefinition, StrategyProfile};
use crate::network::{consensus_step, AgentStack, WeightedDigraph};

/// Orthonormal basis `R` of the complement of `1/sqrt(N)`, taken as columns
/// `2..N` of the Householder reflection sending `e_1` to `1/sqrt(N)`. It is
/// applied implicitly; `R_d = R (x) I_d` acts blockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerBasis {
    n: usize,
    /// Householder vector `e_1 - 1/sqrt(N)`; zero when `N = 1`.
    v: Vec<f64>,
    vnorm2: f64,
}

impl TrackerBasis {
    pub fn new(n: usize) -> Self {
        let u = 1.0 / (n as f64).sqrt();
        let mut v = vec![-u; n];
        if n > 0 {
            v[0] += 1.0;
        }
        let vnorm2 = v.iter().map(|a| a * a).sum();
        Self { n, v, vnorm2 }
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    fn reflect(&self, y: &mut [f64]) {
        if self.vnorm2 == 0.0 {
            return;
        }
        let c = 2.0 * self.v.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() / self.vnorm2;
        y.iter_mut().zip(&self.v).for_each(|(yi, vi)| *yi -= c * vi);
    }

    /// `R_d^T z`, laid out as `N - 1` blocks of length `d`.
    pub fn project_out(&self, z: &AgentStack) -> Result<DVector<f64>> {
        check_dim("tracker stack agents", self.n, z.n_agents())?;
        let d = z.dim();
        let mut out = DVector::zeros((self.n - 1) * d);
        let mut col = vec![0.0; self.n];
        for k in 0..d {
            for (i, c) in col.iter_mut().enumerate() {
                *c = z.block(i)[k];
            }
            self.reflect(&mut col);
            for j in 1..self.n {
                out[(j - 1) * d + k] = col[j];
            }
        }
        Ok(out)
    }

    /// `R_d w` for `w` of length `(N - 1) d`.
    pub fn lift(&self, w: &DVector<f64>, d: usize) -> Result<AgentStack> {
        check_dim("disagreement vector", (self.n - 1) * d, w.len())?;
        let mut out = AgentStack::zeros(self.n, d);
        let mut col = vec![0.0; self.n];
        for k in 0..d {
            col[0] = 0.0;
            for j in 1..self.n {
                col[j] = w[(j - 1) * d + k];
            }
            self.reflect(&mut col);
            for (i, c) in col.iter().enumerate() {
                out.block_mut(i)[k] = *c;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerDecomposition {
    pub mean: DVector<f64>,
    pub perp: DVector<f64>,
    pub basis: TrackerBasis,
}

impl TrackerDecomposition {
    /// `1 (x) z_bar + R_d z_perp`.
    pub fn reconstruct(&self) -> AgentStack {
        let d = self.mean.len();
        let mut z = self
            .basis
            .lift(&self.perp, d)
            .expect("sizes fixed at construction");
        for i in 0..self.basis.n {
            z.block_mut(i)
                .iter_mut()
                .zip(self.mean.iter())
                .for_each(|(a, m)| *a += m);
        }
        z
    }
}

pub fn decompose_tracker(z: &AgentStack) -> TrackerDecomposition {
    let basis = TrackerBasis::new(z.n_agents());
    let perp = basis.project_out(z).expect("basis built for this stack");
    TrackerDecomposition {
        mean: DVector::from_vec(z.block_mean()),
        perp,
        basis,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryLayerReport {
    /// `|z_perp^(k+1) - h| / |z_perp^k - h|` for each step taken.
    pub ratios: Vec<f64>,
    /// `max_i |z_i^k + phi_i(x_i) - sigma(x)|` for `k = 0..=steps`.
    pub est_err: Vec<f64>,
    /// `|z_perp^k - h(x)|` for `k = 0..=steps`.
    pub disagreement: Vec<f64>,
    pub final_tracker: AgentStack,
}

impl BoundaryLayerReport {
    /// First step at which the estimate error is at most `tol`.
    pub fn steps_to(&self, tol: f64) -> Option<usize> {
        self.est_err.iter().position(|&e| e <= tol)
    }
}

/// Runs the tracker recursion with `x` frozen, starting from `z0` (zeros by
/// default). The equilibrium is `z_i = sigma(x) - phi_i(x_i)`, i.e.
/// `z_perp = h(x) = -R_d^T phi(x)`.
pub fn boundary_layer_probe(
    graph: &WeightedDigraph,
    game: &GameDefinition,
    x: &StrategyProfile,
    z0: Option<&AgentStack>,
    steps: usize,
) -> Result<BoundaryLayerReport> {
    game.check_profile(x)?;
    let phi = game.contributions(x);
    let basis = TrackerBasis::new(game.n_agents());
    let h = -basis.project_out(&phi)?;
    let mut z = match z0 {
        Some(z) => z.clone(),
        None => AgentStack::zeros(game.n_agents(), game.aggregate_dim()),
    };
    let mut report = BoundaryLayerReport::default();
    let mut dis = (basis.project_out(&z)? - &h).norm();
    report.disagreement.push(dis);
    report.est_err.push(super::tracking_errors(&phi, &z).0);
    for _ in 0..steps {
        z = consensus_step(graph, &z, &phi)?;
        let next = (basis.project_out(&z)? - &h).norm();
        report.ratios.push(if dis > 0.0 { next / dis } else { 0.0 });
        report.disagreement.push(next);
        report.est_err.push(super::tracking_errors(&phi, &z).0);
        dis = next;
    }
    report.final_tracker = z;
    Ok(report)
}

/// Centralized trajectory `x+ = x + delta (P_X[x - gamma F(x)] - x)` from the
/// projected `x0`; returns `steps + 1` iterates.
pub fn reduced_system_run(
    game: &GameDefinition,
    cfg: &TradesConfig,
    x0: &StrategyProfile,
    steps: usize,
) -> Result<Vec<StrategyProfile>> {
    cfg.validate()?;
    let mut x = game.project(x0)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x.clone());
    for t in 1..=steps {
        let f = pseudo_gradient(game, &x)?;
        let trial = x.with_stacked(x.stacked() - f * cfg.gamma)?;
        let y = game.project(&trial)?;
        let next = x.stacked() + (y.stacked() - x.stacked()) * cfg.delta;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(crate::Error::NonFiniteDetected { iteration: t });
        }
        x = x.with_stacked(next)?;
        out.push(x.clone());
    }
    Ok(out)
}

/// TRADES with each tracker overwritten by its exact value
/// `z_i = sigma(x) - phi_i(x_i)` before every step.
pub fn exact_tracker_run(
    game: &GameDefinition,
    cfg: &TradesConfig,
    x0: &StrategyProfile,
    steps: usize,
) -> Result<Vec<StrategyProfile>> {
    cfg.validate()?;
    let mut state: TradesState = init(game, x0)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state.x.clone());
    for _ in 0..steps {
        let phi = game.contributions(&state.x);
        let sigma = phi.block_mean();
        for i in 0..game.n_agents() {
            let zi = state.z.block_mut(i);
            for ((z, s), p) in zi.iter_mut().zip(&sigma).zip(phi.block(i)) {
                *z = s - p;
            }
        }
        state.x = strategy_update(game, cfg.gamma, cfg.delta, &state.x, &state.z, &phi)?;
        state.t += 1;
        out.push(state.x.clone());
    }
    Ok(out)
}
