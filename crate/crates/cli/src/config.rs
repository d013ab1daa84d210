use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trades_core::game::AffineFamily;
use trades_core::grid::CaseStudyConfig;
use trades_core::{StepSchedule, TradesConfig, WeightMethod};

use crate::CliError;

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Affine,
    Voltage,
}

/// One experiment, as read from a TOML file. Every section except the
/// top-level keys has defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec_version: u32,
    pub scenario: Scenario,
    #[serde(default = "default_true")]
    pub oracle: bool,
    #[serde(default = "default_oracle_tol")]
    pub oracle_tol: f64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub inputs: InputFiles,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub trades: TradesConfig,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub affine: AffineSection,
    #[serde(default)]
    pub voltage: CaseStudyConfig,
}

fn default_true() -> bool {
    true
}

fn default_oracle_tol() -> f64 {
    1e-13
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Optional data files. Relative paths are resolved against the config
/// file's directory when loading.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFiles {
    /// `N d` header then `src dst w` rows; replaces the random graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_list: Option<PathBuf>,
    /// `bus,parent,r,x,baseline_p`; replaces the synthetic feeder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network_csv: Option<PathBuf>,
    /// `t,price`; replaces the synthetic price curve.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    /// Agent count. Taken from the scenario when omitted; must match it
    /// otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Erdos-Renyi edge probability.
    pub eta: f64,
    pub seed: u64,
    pub weights: WeightMethod,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            n: None,
            eta: 0.7,
            seed: 1,
            weights: WeightMethod::MetropolisSymmetrized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub enabled: bool,
    pub schedule: StepSchedule,
    pub steps: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            enabled: false,
            schedule: StepSchedule::default(),
            steps: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub gammas: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Error level whose first hitting time is reported as `iters`.
    pub tol: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            gammas: vec![0.001, 0.01, 0.05, 0.1, 0.3],
            deltas: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            tol: 1e-6,
        }
    }
}

/// Parameters of the random strongly monotone quadratic family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffineSection {
    pub agents: usize,
    pub strategy_dim: usize,
    pub aggregate_dim: usize,
    pub coupling: f64,
    /// `inf` leaves strategies unconstrained.
    pub box_half_width: f64,
    pub seed: u64,
}

impl Default for AffineSection {
    fn default() -> Self {
        let f = AffineFamily::default();
        Self {
            agents: f.agents,
            strategy_dim: f.strategy_dim,
            aggregate_dim: f.aggregate_dim,
            coupling: f.coupling,
            box_half_width: f.box_half_width.unwrap_or(f64::INFINITY),
            seed: f.seed,
        }
    }
}

impl AffineSection {
    pub fn family(&self) -> AffineFamily {
        AffineFamily {
            agents: self.agents,
            strategy_dim: self.strategy_dim,
            aggregate_dim: self.aggregate_dim,
            coupling: self.coupling,
            box_half_width: self
                .box_half_width
                .is_finite()
                .then_some(self.box_half_width),
            seed: self.seed,
        }
    }
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            spec_version: SPEC_VERSION,
            scenario,
            oracle: true,
            oracle_tol: default_oracle_tol(),
            out_dir: default_out_dir(),
            inputs: InputFiles::default(),
            graph: GraphSection::default(),
            trades: TradesConfig::default(),
            baseline: BaselineSection::default(),
            sweep: SweepSection::default(),
            affine: AffineSection::default(),
            voltage: CaseStudyConfig::default(),
        }
    }

    /// Parses, resolves input paths relative to the file and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.inputs.edge_list,
            &mut cfg.inputs.network_csv,
            &mut cfg.inputs.price_csv,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("malformed config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn n_agents(&self) -> usize {
        match self.scenario {
            Scenario::Affine => self.affine.agents,
            Scenario::Voltage => self.voltage.n_agents,
        }
    }

    /// Range checks that need no game assembly.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.spec_version != SPEC_VERSION {
            return usage(format!(
                "spec_version {} is not supported (expected {SPEC_VERSION})",
                self.spec_version
            ));
        }
        self.trades
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.oracle_tol > 0.0) {
            return usage(format!(
                "oracle_tol must be positive, got {}",
                self.oracle_tol
            ));
        }
        if !(0.0..=1.0).contains(&self.graph.eta) {
            return usage(format!(
                "graph.eta must lie in [0, 1], got {}",
                self.graph.eta
            ));
        }
        if let Some(n) = self.graph.n {
            if n != self.n_agents() {
                return usage(format!(
                    "graph.n = {n} does not match the scenario's {} agents",
                    self.n_agents()
                ));
            }
        }
        if self.baseline.enabled {
            self.baseline
                .schedule
                .validate()
                .map_err(|e| CliError::Usage(format!("baseline: {e}")))?;
        }
        match self.scenario {
            Scenario::Affine => {
                let a = &self.affine;
                if a.agents == 0 || a.strategy_dim == 0 || a.aggregate_dim == 0 {
                    return usage("affine dimensions must be positive".into());
                }
                if !(a.box_half_width > 0.0) {
                    return usage(format!(
                        "affine.box_half_width must be positive, got {}",
                        a.box_half_width
                    ));
                }
            }
            Scenario::Voltage => {
                let v = &self.voltage;
                if v.n_agents == 0 || v.horizon == 0 || v.n_buses < 2 {
                    return usage("voltage needs agents, a horizon and at least two buses".into());
                }
                if !(v.units.base_kva > 0.0
                    && v.units.power_unit_kw > 0.0
                    && v.price_scale.is_finite())
                {
                    return usage(format!("bad voltage units {:?}", v.units));
                }
            }
        }
        for p in [
            &self.inputs.edge_list,
            &self.inputs.network_csv,
            &self.inputs.price_csv,
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                return usage(format!("input file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<(), CliError> {
        let s = &self.sweep;
        if s.gammas.is_empty() || s.deltas.is_empty() {
            return Err(CliError::Usage("sweep grid is empty".into()));
        }
        if s.gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(CliError::Usage(
                "sweep gammas must be positive and finite".into(),
            ));
        }
        if s.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(CliError::Usage("sweep deltas must lie in (0, 1)".into()));
        }
        if !(s.tol > 0.0) {
            return Err(CliError::Usage("sweep.tol must be positive".into()));
        }
        Ok(())
    }
}
