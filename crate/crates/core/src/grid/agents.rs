use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::RadialNetwork;
use crate::error::{Error, Result};

/// One EV charger. Energies in kWh, apparent power in kVA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvAgentSpec {
    pub bus: usize,
    /// Plugged-in indicator per slot.
    pub plugged: Vec<bool>,
    pub target_kwh: f64,
    pub s_max_kva: f64,
}

impl EvAgentSpec {
    /// Most energy the charger can deliver over its plugged slots.
    pub fn max_energy_kwh(&self) -> f64 {
        let slot_hours = 24.0 / self.plugged.len() as f64;
        self.s_max_kva * slot_hours * self.plugged.iter().filter(|&&a| a).count() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentGenOptions {
    pub s_max_kva: f64,
    pub target_max_kwh: f64,
    /// Arrival hour range, inclusive.
    pub arrival_hours: (u32, u32),
    /// Departure hour range (next morning), inclusive.
    pub departure_hours: (u32, u32),
}

impl Default for AgentGenOptions {
    fn default() -> Self {
        Self {
            s_max_kva: 7.0,
            target_max_kwh: 40.0,
            arrival_hours: (16, 21),
            departure_hours: (6, 8),
        }
    }
}

pub fn gen_agents(
    n: usize,
    net: &RadialNetwork,
    horizon: usize,
    seed: u64,
) -> Result<Vec<EvAgentSpec>> {
    gen_agents_with(n, net, horizon, seed, &AgentGenOptions::default())
}

/// Draws `n` chargers: the bus with probability proportional to its peak
/// baseline load, an overnight plug-in window, and a target uniform on
/// `[0, target_max_kwh]` clipped to what the window can deliver.
pub fn gen_agents_with(
    n: usize,
    net: &RadialNetwork,
    horizon: usize,
    seed: u64,
    opts: &AgentGenOptions,
) -> Result<Vec<EvAgentSpec>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    if !(opts.s_max_kva > 0.0 && opts.target_max_kwh >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bad agent options {opts:?}"
        )));
    }
    let (a0, a1) = opts.arrival_hours;
    let (d0, d1) = opts.departure_hours;
    if a0 > a1 || d0 > d1 || a1 > 24 || d1 > a0 {
        return Err(Error::InvalidParameter(format!(
            "plug-in windows must be overnight: arrival {a0}-{a1}, departure {d0}-{d1}"
        )));
    }
    let buses = WeightedIndex::new(net.baseline_peak_kw()).map_err(|e| {
        Error::InvalidParameter(format!("cannot sample buses by baseline load: {e}"))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slot_hours = 24.0 / horizon as f64;
    (0..n)
        .map(|_| {
            let bus = buses.sample(&mut rng);
            let arrive = rng.random_range(a0..=a1) as f64;
            let depart = rng.random_range(d0..=d1) as f64;
            let plugged: Vec<bool> = (0..horizon)
                .map(|t| {
                    let h = t as f64 * slot_hours;
                    h >= arrive || h < depart
                })
                .collect();
            let mut spec = EvAgentSpec {
                bus,
                plugged,
                target_kwh: opts.target_max_kwh * rng.random::<f64>(),
                s_max_kva: opts.s_max_kva,
            };
            spec.target_kwh = spec.target_kwh.min(spec.max_energy_kwh());
            Ok(spec)
        })
        .collect()
}
