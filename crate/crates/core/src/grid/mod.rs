//! Synthetic EV voltage-support case: a radial feeder, its linearized
//! DistFlow voltage sensitivities, an EV population and the resulting game.

mod agents;
mod case;
mod voltage;

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use agents::{gen_agents, gen_agents_with, AgentGenOptions, EvAgentSpec};
pub use case::{price_curve, read_price_csv, write_price_csv, CaseStudy, CaseStudyConfig};
pub use voltage::{
    build_voltage_game, evaluate_voltages, KronAggregation, VoltageEvaluation, VoltageGameConfig,
};

/// Line parameters are drawn log-uniformly from this range (p.u.).
pub const LINE_PARAM_RANGE: (f64, f64) = (0.001, 0.05);
/// Default per-bus peak baseline load range, kW.
pub const LOAD_PEAK_RANGE_KW: (f64, f64) = (20.0, 120.0);
/// Reactive baseline load as a fraction of active.
pub const LOAD_Q_RATIO: f64 = 0.33;

/// Radial feeder rooted at bus 0 (the substation). `line_r[b]`, `line_x[b]`
/// describe the line from `parent[b]` to `b`; entries at index 0 are unused
/// and zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialNetwork {
    parent: Vec<Option<usize>>,
    line_r: Vec<f64>,
    line_x: Vec<f64>,
    /// Peak active baseline load per bus, kW.
    baseline_peak_kw: Vec<f64>,
}

impl RadialNetwork {
    pub fn new(
        parent: Vec<Option<usize>>,
        line_r: Vec<f64>,
        line_x: Vec<f64>,
        baseline_peak_kw: Vec<f64>,
    ) -> Result<Self> {
        let n = parent.len();
        if n < 2 {
            return Err(Error::InvalidParameter(
                "a feeder needs at least two buses".into(),
            ));
        }
        check_dim("line resistances", n, line_r.len())?;
        check_dim("line reactances", n, line_x.len())?;
        check_dim("baseline loads", n, baseline_peak_kw.len())?;
        if parent[0].is_some() {
            return Err(Error::InvalidParameter("bus 0 must be the root".into()));
        }
        for b in 1..n {
            match parent[b] {
                Some(p) if p < n && p != b => {}
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "bus {b} has an invalid parent"
                    )))
                }
            }
            if !(line_r[b] > 0.0 && line_x[b] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "line into bus {b} needs r, x > 0"
                )));
            }
            if !(baseline_peak_kw[b] >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "bus {b} has negative baseline load"
                )));
            }
            // Walking up must reach the root within n hops.
            let mut cur = b;
            let mut hops = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                hops += 1;
                if hops > n {
                    return Err(Error::InvalidParameter(format!("bus {b} lies on a cycle")));
                }
            }
        }
        let mut line_r = line_r;
        let mut line_x = line_x;
        line_r[0] = 0.0;
        line_x[0] = 0.0;
        Ok(Self {
            parent,
            line_r,
            line_x,
            baseline_peak_kw,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, bus: usize) -> Option<usize> {
        self.parent[bus]
    }

    pub fn line_r(&self) -> &[f64] {
        &self.line_r
    }

    pub fn line_x(&self) -> &[f64] {
        &self.line_x
    }

    pub fn baseline_peak_kw(&self) -> &[f64] {
        &self.baseline_peak_kw
    }

    /// Buses on the path from `bus` up to (excluding) the root; each one
    /// names the line feeding it.
    pub fn root_path(&self, bus: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = bus;
        while let Some(p) = self.parent[cur] {
            path.push(cur);
            cur = p;
        }
        path
    }

    /// CSV with header `bus,parent,r,x,baseline_p`; the root's parent is -1.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "bus,parent,r,x,baseline_p")?;
        for b in 0..self.n_buses() {
            let p = self.parent[b].map_or(-1, |p| p as i64);
            writeln!(
                out,
                "{b},{p},{},{},{}",
                self.line_r[b], self.line_x[b], self.baseline_peak_kw[b]
            )?;
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<Self> {
        let bad = |m: String| Error::InvalidParameter(format!("network csv: {m}"));
        let mut rows = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || (k == 0 && line.starts_with("bus")) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let [bus, parent, r, x, load] = f[..] else {
                return Err(bad(format!("expected 5 fields in `{line}`")));
            };
            let num = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("`{v}`: {e}")));
            let bus: usize = bus.parse().map_err(|e| bad(format!("`{bus}`: {e}")))?;
            let parent: i64 = parent
                .parse()
                .map_err(|e| bad(format!("`{parent}`: {e}")))?;
            rows.push((bus, parent, num(r)?, num(x)?, num(load)?));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(k, r)| r.0 != k) {
            return Err(bad("bus ids must be 0..N-1, each listed once".into()));
        }
        let parent = rows.iter().map(|r| usize::try_from(r.1).ok()).collect();
        Self::new(
            parent,
            rows.iter().map(|r| r.2).collect(),
            rows.iter().map(|r| r.3).collect(),
            rows.iter().map(|r| r.4).collect(),
        )
    }
}

/// Random feeder: bus `k` attaches to a uniformly chosen earlier bus, line
/// parameters are log-uniform in [`LINE_PARAM_RANGE`] and peak loads uniform
/// in [`LOAD_PEAK_RANGE_KW`] (zero at the root).
pub fn build_radial_network(n_buses: usize, seed: u64) -> Result<RadialNetwork> {
    build_radial_network_with(n_buses, seed, LOAD_PEAK_RANGE_KW)
}

pub fn build_radial_network_with(
    n_buses: usize,
    seed: u64,
    load_peak_kw: (f64, f64),
) -> Result<RadialNetwork> {
    if n_buses < 2 {
        return Err(Error::InvalidParameter(
            "a feeder needs at least two buses".into(),
        ));
    }
    if !(load_peak_kw.0 >= 0.0 && load_peak_kw.0 <= load_peak_kw.1) {
        return Err(Error::InvalidParameter(format!(
            "bad load range {load_peak_kw:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (LINE_PARAM_RANGE.0.ln(), LINE_PARAM_RANGE.1.ln());
    let mut parent = vec![None];
    let mut r = vec![0.0];
    let mut x = vec![0.0];
    let mut load = vec![0.0];
    for k in 1..n_buses {
        parent.push(Some(rng.random_range(0..k)));
        r.push(rng.random_range(lo..hi).exp());
        x.push(rng.random_range(lo..hi).exp());
        load.push(load_peak_kw.0 + (load_peak_kw.1 - load_peak_kw.0) * rng.random::<f64>());
    }
    RadialNetwork::new(parent, r, x, load)
}

/// Daily load shape in `[0.2, 0.9]` with an evening peak, sampled at `T`
/// equally spaced hours.
pub fn load_shape(horizon: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    (0..horizon)
        .map(|t| {
            let h = t as f64 * 24.0 / horizon as f64;
            0.55 + 0.25 * (2.0 * PI * (h - 19.0) / 24.0).cos()
                + 0.1 * (4.0 * PI * (h - 13.0) / 24.0).cos()
        })
        .collect()
}

/// Active and reactive baseline consumption (kW, kvar), `N_b x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineLoad {
    pub p_kw: DMatrix<f64>,
    pub q_kvar: DMatrix<f64>,
}

impl BaselineLoad {
    pub fn from_network(net: &RadialNetwork, horizon: usize) -> Self {
        let shape = load_shape(horizon);
        let p = DMatrix::from_fn(net.n_buses(), horizon, |b, t| {
            net.baseline_peak_kw[b] * shape[t]
        });
        let q = &p * LOAD_Q_RATIO;
        Self { p_kw: p, q_kvar: q }
    }

    pub fn zeros(n_buses: usize, horizon: usize) -> Self {
        Self {
            p_kw: DMatrix::zeros(n_buses, horizon),
            q_kvar: DMatrix::zeros(n_buses, horizon),
        }
    }

    pub fn horizon(&self) -> usize {
        self.p_kw.ncols()
    }
}

/// Unit conventions linking agent strategies to per-unit voltages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridUnits {
    /// Base apparent power, kVA; `kW / base_kva` gives per-unit power.
    pub base_kva: f64,
    /// Size of one unit of agent strategy, kW (1000 means strategies in MW).
    pub power_unit_kw: f64,
}

impl Default for GridUnits {
    fn default() -> Self {
        Self {
            base_kva: 400.0,
            power_unit_kw: 1000.0,
        }
    }
}

impl GridUnits {
    /// Per-unit power carried by one unit of agent strategy.
    pub fn injection_scale(&self) -> f64 {
        self.power_unit_kw / self.base_kva
    }

    fn validate(&self) -> Result<()> {
        if !(self.base_kva > 0.0 && self.power_unit_kw > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid units must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Linearized DistFlow: `v = v0 + sum_k (R[:, k] p_k + X[:, k] q_k)` with
/// injections in per unit. `v0` and every voltage trajectory are stacked
/// bus-major (`bus * T + t`).
#[derive(Debug, Clone, PartialEq)]
pub struct DistFlowModel {
    pub rmat: DMatrix<f64>,
    pub xmat: DMatrix<f64>,
    pub v0: DVector<f64>,
    pub horizon: usize,
    pub units: GridUnits,
}

impl DistFlowModel {
    pub fn n_buses(&self) -> usize {
        self.rmat.nrows()
    }

    /// `N_b * T`.
    pub fn aggregate_dim(&self) -> usize {
        self.n_buses() * self.horizon
    }

    /// Voltage change from injecting `p`, `q` (agent units) at `bus` during
    /// slot `t`.
    pub fn injection_response(&self, bus: usize, t: usize, p: f64, q: f64) -> DVector<f64> {
        let s = self.units.injection_scale();
        let mut dv = DVector::zeros(self.aggregate_dim());
        for k in 0..self.n_buses() {
            dv[k * self.horizon + t] = s * (self.rmat[(k, bus)] * p + self.xmat[(k, bus)] * q);
        }
        dv
    }
}

/// Common-path sensitivity matrix: entry `(i, j)` is twice the sum of
/// `line[b]` over the lines shared by the root paths of `i` and `j`.
fn common_path_matrix(net: &RadialNetwork, line: &[f64]) -> DMatrix<f64> {
    let n = net.n_buses();
    let paths: Vec<Vec<bool>> = (0..n)
        .map(|b| {
            let mut on = vec![false; n];
            net.root_path(b).into_iter().for_each(|l| on[l] = true);
            on
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        2.0 * (0..n)
            .filter(|&l| paths[i][l] && paths[j][l])
            .map(|l| line[l])
            .sum::<f64>()
    })
}

/// Builds the sensitivities and the baseline voltage profile
/// `v0 = 1 - (R p_load + X q_load) / base_kva`.
pub fn distflow_sensitivities(
    net: &RadialNetwork,
    load: &BaselineLoad,
    units: GridUnits,
) -> Result<DistFlowModel> {
    units.validate()?;
    check_dim("baseline load buses", net.n_buses(), load.p_kw.nrows())?;
    check_dim(
        "baseline reactive load buses",
        net.n_buses(),
        load.q_kvar.nrows(),
    )?;
    check_dim(
        "baseline reactive load slots",
        load.horizon(),
        load.q_kvar.ncols(),
    )?;
    let horizon = load.horizon();
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let rmat = common_path_matrix(net, &net.line_r);
    let xmat = common_path_matrix(net, &net.line_x);
    let drop = (&rmat * &load.p_kw + &xmat * &load.q_kvar) / units.base_kva;
    let v0 = DVector::from_fn(net.n_buses() * horizon, |k, _| {
        1.0 - drop[(k / horizon, k % horizon)]
    });
    Ok(DistFlowModel {
        rmat,
        xmat,
        v0,
        horizon,
        units,
    })
}
