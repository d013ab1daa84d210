use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Serialize;
use trades_core::grid::{price_curve, read_price_csv, CaseStudy, RadialNetwork};
use trades_core::network::{gen_digraph, make_doubly_stochastic, spectrum};
use trades_core::{GameDefinition, WeightMethod, WeightedDigraph};

use crate::config::{ExperimentConfig, Scenario};
use crate::CliError;

pub enum Instance {
    Affine(GameDefinition),
    Voltage(Box<CaseStudy>),
}

pub struct Assembled {
    pub instance: Instance,
    pub graph: WeightedDigraph,
}

impl Assembled {
    pub fn game(&self) -> &GameDefinition {
        match &self.instance {
            Instance::Affine(g) => g,
            Instance::Voltage(c) => &c.game,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphSummary {
    pub agents: usize,
    /// Directed edges without self-loops.
    pub edges: usize,
    /// `None` when the weights came from an edge-list file.
    pub weights: Option<WeightMethod>,
    pub strongly_connected: bool,
    pub stochasticity_residual: f64,
    pub rho_disagreement: f64,
    pub singular_disagreement: f64,
}

/// Every seed that shaped the run.
#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub init: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub game: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prices: Option<u64>,
}

impl Seeds {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        let file = |p: &Option<std::path::PathBuf>, seed: u64| p.is_none().then_some(seed);
        let v = &cfg.voltage;
        let voltage = cfg.scenario == Scenario::Voltage;
        Self {
            init: cfg.trades.seed,
            graph: file(&cfg.inputs.edge_list, cfg.graph.seed),
            game: (cfg.scenario == Scenario::Affine).then_some(cfg.affine.seed),
            grid: file(&cfg.inputs.network_csv, v.grid_seed).filter(|_| voltage),
            agents: voltage.then_some(v.agent_seed),
            prices: file(&cfg.inputs.price_csv, v.price_seed).filter(|_| voltage),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(CliError::io(format!("opening {}", path.display())))
}

pub fn assemble(cfg: &ExperimentConfig) -> Result<Assembled, CliError> {
    let instance = match cfg.scenario {
        Scenario::Affine => Instance::Affine(cfg.affine.family().build()?),
        Scenario::Voltage => {
            let v = &cfg.voltage;
            let network = match &cfg.inputs.network_csv {
                Some(p) => RadialNetwork::read_csv(open(p)?)?,
                None => trades_core::grid::build_radial_network_with(
                    v.n_buses,
                    v.grid_seed,
                    v.load_peak_kw,
                )?,
            };
            if network.n_buses() != v.n_buses {
                return Err(CliError::Usage(format!(
                    "network file has {} buses but voltage.n_buses = {}",
                    network.n_buses(),
                    v.n_buses
                )));
            }
            let price = match &cfg.inputs.price_csv {
                Some(p) => read_price_csv(open(p)?)?,
                None => price_curve(v.horizon, v.price_seed, v.price_scale),
            };
            Instance::Voltage(Box::new(CaseStudy::from_parts(v, network, price)?))
        }
    };
    let game = match &instance {
        Instance::Affine(g) => g,
        Instance::Voltage(c) => &c.game,
    };
    let graph = build_graph(cfg, game.n_agents(), game.aggregate_dim())?;
    Ok(Assembled { instance, graph })
}

fn build_graph(cfg: &ExperimentConfig, n: usize, d: usize) -> Result<WeightedDigraph, CliError> {
    let Some(path) = &cfg.inputs.edge_list else {
        let g = gen_digraph(n, cfg.graph.eta, cfg.graph.seed)?;
        return Ok(make_doubly_stochastic(&g, cfg.graph.weights)?);
    };
    let (g, file_d) = WeightedDigraph::read_edge_list(open(path)?)?;
    if g.n_agents() != n || file_d != d {
        return Err(CliError::Usage(format!(
            "edge list is for N = {}, d = {file_d}; the game has N = {n}, d = {d}",
            g.n_agents()
        )));
    }
    if g.weights().is_some() {
        Ok(g)
    } else {
        Ok(make_doubly_stochastic(&g, cfg.graph.weights)?)
    }
}

pub fn summarize_graph(
    cfg: &ExperimentConfig,
    graph: &WeightedDigraph,
) -> Result<GraphSummary, CliError> {
    let spec = spectrum(graph)?;
    Ok(GraphSummary {
        agents: graph.n_agents(),
        edges: graph.edges().filter(|(s, t)| s != t).count(),
        weights: cfg.inputs.edge_list.is_none().then_some(cfg.graph.weights),
        strongly_connected: graph.is_strongly_connected(),
        stochasticity_residual: graph.stochasticity_residual().unwrap_or(f64::NAN),
        rho_disagreement: spec.rho_disagreement,
        singular_disagreement: spec.singular_disagreement,
    })
}
