use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_radial_network_with, distflow_sensitivities, gen_agents_with, AgentGenOptions,
    BaselineLoad, DistFlowModel, EvAgentSpec, GridUnits, RadialNetwork, VoltageGameConfig,
    LOAD_PEAK_RANGE_KW,
};
use crate::error::{Error, Result};
use crate::game::GameDefinition;
use crate::grid::build_voltage_game;

/// Smooth daily price curve (per kWh): a morning/evening two-peak mix of
/// sinusoids around 0.12 with seeded phase and amplitude jitter, times
/// `scale`.
pub fn price_curve(horizon: usize, seed: u64, scale: f64) -> DVector<f64> {
    use std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift1 = rng.random_range(-1.0..1.0);
    let shift2 = rng.random_range(-1.0..1.0);
    let amp1 = 0.04 * rng.random_range(0.9..1.1);
    let amp2 = 0.03 * rng.random_range(0.9..1.1);
    DVector::from_fn(horizon, |t, _| {
        let h = t as f64 * 24.0 / horizon as f64;
        scale
            * (0.12
                + amp1 * (2.0 * PI * (h - 8.0 - shift1) / 24.0).sin()
                + amp2 * (4.0 * PI * (h - 6.0 - shift2) / 24.0).sin())
    })
}

pub fn write_price_csv(price: &DVector<f64>, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "t,price")?;
    for (t, p) in price.iter().enumerate() {
        writeln!(out, "{t},{p}")?;
    }
    Ok(())
}

pub fn read_price_csv(input: impl BufRead) -> Result<DVector<f64>> {
    let bad = |m: String| Error::InvalidParameter(format!("price csv: {m}"));
    let mut prices = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || (k == 0 && line.starts_with('t')) {
            continue;
        }
        let Some((t, p)) = line.split_once(',') else {
            return Err(bad(format!("expected `t,price` in `{line}`")));
        };
        let t: usize = t.trim().parse().map_err(|e| bad(format!("`{t}`: {e}")))?;
        if t != prices.len() {
            return Err(bad(format!("slot {t} out of order")));
        }
        prices.push(
            p.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("`{p}`: {e}")))?,
        );
    }
    if prices.is_empty() {
        return Err(bad("no prices".into()));
    }
    Ok(DVector::from_vec(prices))
}

/// Everything needed to rebuild the desk-scale voltage game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaseStudyConfig {
    pub n_buses: usize,
    pub n_agents: usize,
    pub horizon: usize,
    pub grid_seed: u64,
    pub agent_seed: u64,
    pub price_seed: u64,
    pub units: GridUnits,
    /// Multiplies the whole price curve.
    pub price_scale: f64,
    pub load_peak_kw: (f64, f64),
    pub agents: AgentGenOptions,
    /// `H = penalty_scale * I`.
    pub penalty_scale: f64,
    /// Diagonal of the local weight for active and reactive power.
    pub local_weight: (f64, f64),
    pub reactive_always_on: bool,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self {
            n_buses: 15,
            n_agents: 40,
            horizon: 24,
            grid_seed: 2,
            agent_seed: 3,
            price_seed: 4,
            units: GridUnits::default(),
            price_scale: 0.05,
            load_peak_kw: LOAD_PEAK_RANGE_KW,
            agents: AgentGenOptions::default(),
            penalty_scale: 1.0,
            local_weight: (1.0, 10.0),
            reactive_always_on: true,
        }
    }
}

pub struct CaseStudy {
    pub config: CaseStudyConfig,
    pub network: RadialNetwork,
    pub load: BaselineLoad,
    pub model: DistFlowModel,
    pub agents: Vec<EvAgentSpec>,
    pub game_config: VoltageGameConfig,
    pub game: GameDefinition,
}

impl CaseStudy {
    pub fn build(config: &CaseStudyConfig) -> Result<Self> {
        let network =
            build_radial_network_with(config.n_buses, config.grid_seed, config.load_peak_kw)?;
        let price = price_curve(config.horizon, config.price_seed, config.price_scale);
        Self::from_parts(config, network, price)
    }

    /// Same as [`build`](Self::build) with a user-supplied feeder and price
    /// curve.
    pub fn from_parts(
        config: &CaseStudyConfig,
        network: RadialNetwork,
        price: DVector<f64>,
    ) -> Result<Self> {
        if config.horizon == 0 || config.n_agents == 0 {
            return Err(Error::InvalidParameter(
                "horizon and agent count must be positive".into(),
            ));
        }
        let load = BaselineLoad::from_network(&network, config.horizon);
        let model = distflow_sensitivities(&network, &load, config.units)?;
        let agents = gen_agents_with(
            config.n_agents,
            &network,
            config.horizon,
            config.agent_seed,
            &config.agents,
        )?;
        let mut game_config = VoltageGameConfig::standard(&model, price);
        let t = config.horizon;
        let (wp, wq) = config.local_weight;
        game_config.lwm = DMatrix::from_fn(2 * t, 2 * t, |i, j| match (i == j, i < t) {
            (true, true) => wp,
            (true, false) => wq,
            _ => 0.0,
        });
        game_config.h *= config.penalty_scale;
        game_config.reactive_always_on = config.reactive_always_on;
        let game = build_voltage_game(&model, &agents, &game_config)?;
        Ok(Self {
            config: config.clone(),
            network,
            load,
            model,
            agents,
            game_config,
            game,
        })
    }
}
