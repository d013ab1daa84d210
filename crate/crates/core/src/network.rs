//! Communication graphs, doubly stochastic weights and the perturbed
//! consensus step used by the aggregate trackers.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use petgraph::graph::DiGraph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const BALANCE_TOL: f64 = 1e-13;
const SINKHORN_MAX_ITER: usize = 100_000;

/// `N` blocks of length `dim`, stored row-major. Used for tracker stacks
/// `z = col(z_1, ..., z_N)` and aggregation contributions `phi(x)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentStack {
    dim: usize,
    data: Vec<f64>,
}

impl AgentStack {
    pub fn zeros(n_agents: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; n_agents * dim],
        }
    }

    pub fn from_blocks<B: AsRef<[f64]>>(blocks: &[B]) -> Result<Self> {
        let dim = blocks.first().map_or(0, |b| b.as_ref().len());
        let mut data = Vec::with_capacity(blocks.len() * dim);
        for b in blocks {
            check_dim("stack block", dim, b.as_ref().len())?;
            data.extend_from_slice(b.as_ref());
        }
        Ok(Self { dim, data })
    }

    pub fn n_agents(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `sum_i z_i`, accumulated in agent order.
    pub fn block_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for i in 0..self.n_agents() {
            for (acc, v) in s.iter_mut().zip(self.block(i)) {
                *acc += v;
            }
        }
        s
    }

    pub fn block_mean(&self) -> Vec<f64> {
        let n = self.n_agents().max(1) as f64;
        self.block_sum().into_iter().map(|v| v / n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Sinkhorn,
    #[serde(alias = "metropolis")]
    MetropolisSymmetrized,
}

impl std::str::FromStr for WeightMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinkhorn" => Ok(Self::Sinkhorn),
            "metropolis" | "metropolis_symmetrized" => Ok(Self::MetropolisSymmetrized),
            other => Err(Error::InvalidParameter(format!(
                "unknown weight method `{other}`"
            ))),
        }
    }
}

/// Directed communication graph. Agent `i` hears agent `j` iff `(j, i)` is an
/// edge, in which case `w_ij > 0`. Self-loops are always present.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    n: usize,
    /// Sorted in-neighbors of each agent, self included.
    in_neighbors: Vec<Vec<usize>>,
    weights: Option<DMatrix<f64>>,
}

impl WeightedDigraph {
    /// Graph from `(src, dst)` pairs; self-loops are added.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "graph needs at least one node".into(),
            ));
        }
        let mut adj = vec![vec![false; n]; n];
        for (i, row) in adj.iter_mut().enumerate() {
            row[i] = true;
        }
        for (src, dst) in edges {
            if src >= n || dst >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({src}, {dst}) out of range"
                )));
            }
            adj[dst][src] = true;
        }
        let in_neighbors = adj
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Ok(Self {
            n,
            in_neighbors,
            weights: None,
        })
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::from_edges(n, (0..n).flat_map(|i| (0..n).map(move |j| (i, j))))
    }

    /// Directed cycle `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn cycle(n: usize) -> Result<Self> {
        Self::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.in_neighbors[dst].binary_search(&src).is_ok()
    }

    /// Number of edges, self-loops included.
    pub fn edge_count(&self) -> usize {
        self.in_neighbors.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.in_neighbors
            .iter()
            .enumerate()
            .flat_map(|(dst, srcs)| srcs.iter().map(move |&src| (src, dst)))
    }

    pub fn weights(&self) -> Option<&DMatrix<f64>> {
        self.weights.as_ref()
    }

    pub fn scc_count(&self) -> usize {
        let mut g = DiGraph::<(), ()>::with_capacity(self.n, self.edge_count());
        let nodes: Vec<_> = (0..self.n).map(|_| g.add_node(())).collect();
        for (src, dst) in self.edges() {
            g.add_edge(nodes[src], nodes[dst], ());
        }
        petgraph::algo::tarjan_scc(&g).len()
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.scc_count() == 1
    }

    /// Attaches explicit weights; the zero pattern must match the edge set
    /// and `W` must be doubly stochastic to within `1e-12`.
    pub fn with_weights(mut self, w: DMatrix<f64>) -> Result<Self> {
        check_dim("weight matrix rows", self.n, w.nrows())?;
        check_dim("weight matrix cols", self.n, w.ncols())?;
        for i in 0..self.n {
            for j in 0..self.n {
                let positive = w[(i, j)] > 0.0;
                if positive != self.has_edge(j, i) || w[(i, j)] < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "weight ({i}, {j}) = {} does not match the edge set",
                        w[(i, j)]
                    )));
                }
            }
        }
        let residual = stochasticity_residual(&w);
        if residual > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "weights are not doubly stochastic (residual {residual:.3e})"
            )));
        }
        self.weights = Some(w);
        Ok(self)
    }

    /// Max deviation of row and column sums from one.
    pub fn stochasticity_residual(&self) -> Option<f64> {
        self.weights.as_ref().map(stochasticity_residual)
    }

    fn require_weights(&self) -> Result<&DMatrix<f64>> {
        self.weights
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("graph has no weights yet".into()))
    }

    /// Writes `N d` followed by one `src dst weight` line per edge.
    pub fn write_edge_list(
        &self,
        aggregate_dim: usize,
        mut out: impl Write,
    ) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.n, aggregate_dim)?;
        for (src, dst) in self.edges() {
            let w = self.weights.as_ref().map_or(1.0, |w| w[(dst, src)]);
            writeln!(out, "{src} {dst} {w}")?;
        }
        Ok(())
    }

    /// Inverse of [`write_edge_list`](Self::write_edge_list). Returns the
    /// graph and the aggregate dimension from the header.
    pub fn read_edge_list(input: impl BufRead) -> Result<(Self, usize)> {
        let bad = |msg: String| Error::InvalidParameter(format!("edge list: {msg}"));
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("missing header".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let mut head = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(n)), Some(Ok(d)), None) = (head.next(), head.next(), head.next()) else {
            return Err(bad(format!("malformed header `{header}`")));
        };
        let mut triples = Vec::new();
        for line in lines {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let [s, t, w] = f[..] else {
                return Err(bad(format!("malformed line `{line}`")));
            };
            let parse_idx = |v: &str| v.parse::<usize>().map_err(|e| bad(e.to_string()));
            let w = w.parse::<f64>().map_err(|e| bad(e.to_string()))?;
            triples.push((parse_idx(s)?, parse_idx(t)?, w));
        }
        let graph = Self::from_edges(n, triples.iter().map(|&(s, t, _)| (s, t)))?;
        let mut w = DMatrix::zeros(n, n);
        for &(s, t, v) in &triples {
            w[(t, s)] = v;
        }
        let unit = triples.iter().all(|&(_, _, v)| v == 1.0);
        if unit && n > 1 {
            Ok((graph, d))
        } else {
            Ok((graph.with_weights(w)?, d))
        }
    }
}

fn stochasticity_residual(w: &DMatrix<f64>) -> f64 {
    let rows = w
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let cols = w
        .column_iter()
        .map(|c| (c.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

/// Erdos-Renyi digraph: every ordered pair is an edge with probability
/// `edge_prob`, then a directed Hamiltonian cycle over a random permutation
/// is added so the result is always strongly connected. Self-loops included.
pub fn gen_digraph(n: usize, edge_prob: f64, seed: u64) -> Result<WeightedDigraph> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "graph needs at least one node".into(),
        ));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidParameter(format!(
            "edge probability {edge_prob} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for src in 0..n {
        for dst in 0..n {
            if src != dst && rng.random::<f64>() < edge_prob {
                edges.push((src, dst));
            }
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    for k in 0..n {
        edges.push((perm[k], perm[(k + 1) % n]));
    }
    WeightedDigraph::from_edges(n, edges)
}

/// Assigns doubly stochastic weights.
///
/// `Sinkhorn` keeps the directed support and alternately rescales rows and
/// columns (finishing on columns, so column sums are exact to rounding).
/// `MetropolisSymmetrized` first symmetrizes the edge set and uses
/// `w_ij = 1 / (1 + max(deg_i, deg_j))`, which is symmetric and hence doubly
/// stochastic by construction.
pub fn make_doubly_stochastic(
    graph: &WeightedDigraph,
    method: WeightMethod,
) -> Result<WeightedDigraph> {
    let components = graph.scc_count();
    if components != 1 {
        return Err(Error::NotStronglyConnected { components });
    }
    match method {
        WeightMethod::Sinkhorn => sinkhorn(graph),
        WeightMethod::MetropolisSymmetrized => metropolis(graph),
    }
}

fn sinkhorn(graph: &WeightedDigraph) -> Result<WeightedDigraph> {
    let n = graph.n;
    let mut w = DMatrix::zeros(n, n);
    for (src, dst) in graph.edges() {
        w[(dst, src)] = 1.0;
    }
    let mut checkpoint = f64::INFINITY;
    for it in 1..=SINKHORN_MAX_ITER {
        for mut row in w.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        for mut col in w.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        let residual = stochasticity_residual(&w);
        if residual <= BALANCE_TOL {
            let mut out = graph.clone();
            out.weights = Some(w);
            return Ok(out);
        }
        if it % 1000 == 0 {
            if residual >= checkpoint {
                return Err(Error::SinkhornStalled {
                    residual,
                    iterations: it,
                });
            }
            checkpoint = residual;
        }
    }
    Err(Error::SinkhornStalled {
        residual: stochasticity_residual(&w),
        iterations: SINKHORN_MAX_ITER,
    })
}

fn metropolis(graph: &WeightedDigraph) -> Result<WeightedDigraph> {
    let n = graph.n;
    let mut undirected = vec![vec![false; n]; n];
    for (src, dst) in graph.edges() {
        if src != dst {
            undirected[src][dst] = true;
            undirected[dst][src] = true;
        }
    }
    let degree: Vec<usize> = undirected
        .iter()
        .map(|r| r.iter().filter(|&&b| b).count())
        .collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if undirected[i][j] {
                w[(i, j)] = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
            }
        }
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    let sym = WeightedDigraph::from_edges(
        n,
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| undirected[i][j]),
    )?;
    sym.with_weights(w)
}

/// Perturbed consensus `z+ = W_d z + (W_d - I) phi`, evaluated per agent as
/// `z_i+ = sum_j w_ij (z_j + phi_j) - phi_i` over in-neighbors in ascending
/// order. The Kronecker lift `W (x) I_d` is never formed.
pub fn consensus_step(
    graph: &WeightedDigraph,
    z: &AgentStack,
    phi: &AgentStack,
) -> Result<AgentStack> {
    let w = graph.require_weights()?;
    check_dim("tracker stack agents", graph.n, z.n_agents())?;
    check_dim("contribution stack agents", graph.n, phi.n_agents())?;
    check_dim("stack block size", z.dim(), phi.dim())?;
    let d = z.dim();
    let mut out = AgentStack::zeros(graph.n, d);
    for i in 0..graph.n {
        let row = out.block_mut(i);
        for &j in &graph.in_neighbors[i] {
            let wij = w[(i, j)];
            for ((o, zj), pj) in row.iter_mut().zip(z.block(j)).zip(phi.block(j)) {
                *o += wij * (zj + pj);
            }
        }
        for (o, pi) in row.iter_mut().zip(phi.block(i)) {
            *o -= pi;
        }
    }
    Ok(out)
}

/// Contraction data of the disagreement dynamics `W - 11'/N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsensusSpectrum {
    /// Spectral radius of `W - 11'/N`.
    pub rho_disagreement: f64,
    /// Largest singular value of `W - 11'/N`.
    pub singular_disagreement: f64,
}

impl ConsensusSpectrum {
    /// Steps needed to shrink a disagreement by `10^-decades` at rate `rho`.
    pub fn steps_for_decades(&self, decades: f64) -> usize {
        if self.rho_disagreement <= 0.0 {
            return 1;
        }
        (decades / (1.0 / self.rho_disagreement).log10())
            .ceil()
            .max(1.0) as usize
    }
}

pub fn spectrum(graph: &WeightedDigraph) -> Result<ConsensusSpectrum> {
    let w = graph.require_weights()?;
    let n = graph.n;
    let m = w - DMatrix::from_element(n, n, 1.0 / n as f64);
    let symmetric = (&m - m.transpose()).amax() == 0.0;
    if symmetric {
        let eig = SymmetricEigen::new(m);
        let rho = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        return Ok(ConsensusSpectrum {
            rho_disagreement: rho,
            singular_disagreement: rho,
        });
    }
    let rho = m
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.norm()));
    let sigma = m.singular_values().max();
    Ok(ConsensusSpectrum {
        rho_disagreement: rho,
        singular_disagreement: sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[allow(clippy::needless_range_loop)]
    fn reaches_all(g: &WeightedDigraph, reverse: bool) -> bool {
        let n = g.n_agents();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let edge = if reverse {
                    g.has_edge(v, u)
                } else {
                    g.has_edge(u, v)
                };
                if edge && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|b| b)
    }

    #[test]
    fn full_probability_gives_complete_graph() {
        let g = gen_digraph(6, 1.0, 1).unwrap();
        assert_eq!(g.edge_count(), 36);
    }

    #[test]
    fn zero_probability_falls_back_to_cycle() {
        let g = gen_digraph(5, 0.0, 3).unwrap();
        assert_eq!(g.edge_count(), 10);
        assert!(g.is_strongly_connected());
        assert!(reaches_all(&g, false) && reaches_all(&g, true));
    }

    #[test]
    fn cycle_sinkhorn_weights_are_halves() {
        let g = make_doubly_stochastic(&WeightedDigraph::cycle(7).unwrap(), WeightMethod::Sinkhorn)
            .unwrap();
        let w = g.weights().unwrap();
        for i in 0..7 {
            assert!((w[(i, i)] - 0.5).abs() < 1e-15);
            assert!((w[((i + 1) % 7, i)] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn complete_graph_is_uniform_for_both_methods() {
        let g = WeightedDigraph::complete(5).unwrap();
        for m in [WeightMethod::Sinkhorn, WeightMethod::MetropolisSymmetrized] {
            let w = make_doubly_stochastic(&g, m).unwrap();
            let w = w.weights().unwrap();
            assert!(w.iter().all(|v| (v - 0.2).abs() < 1e-15), "{m:?}");
        }
    }

    #[test]
    fn disconnected_graph_rejected() {
        let g = WeightedDigraph::from_edges(4, [(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
        assert!(matches!(
            make_doubly_stochastic(&g, WeightMethod::Sinkhorn),
            Err(Error::NotStronglyConnected { components: 2 })
        ));
    }

    #[test]
    fn consensus_annihilates_agreement_input() {
        let g = make_doubly_stochastic(&gen_digraph(6, 0.4, 2).unwrap(), WeightMethod::Sinkhorn)
            .unwrap();
        let z = AgentStack::zeros(6, 3);
        let phi = AgentStack::from_blocks(&vec![vec![1.5, -2.0, 0.25]; 6]).unwrap();
        let out = consensus_step(&g, &z, &phi).unwrap();
        assert!(out.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn single_agent_tracker_stays_zero() {
        let g = make_doubly_stochastic(
            &WeightedDigraph::complete(1).unwrap(),
            WeightMethod::Sinkhorn,
        )
        .unwrap();
        let mut z = AgentStack::zeros(1, 2);
        let phi = AgentStack::from_blocks(&[vec![3.0, -1.0]]).unwrap();
        for _ in 0..10 {
            z = consensus_step(&g, &z, &phi).unwrap();
        }
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn uniform_weights_have_zero_disagreement_radius() {
        let g = make_doubly_stochastic(
            &WeightedDigraph::complete(4).unwrap(),
            WeightMethod::MetropolisSymmetrized,
        )
        .unwrap();
        let s = spectrum(&g).unwrap();
        assert!(s.rho_disagreement < 1e-14);
        let two = make_doubly_stochastic(
            &WeightedDigraph::complete(2).unwrap(),
            WeightMethod::Sinkhorn,
        )
        .unwrap();
        assert!(spectrum(&two).unwrap().rho_disagreement < 1e-15);
    }

    #[test]
    fn edge_list_roundtrip() {
        let g = make_doubly_stochastic(&gen_digraph(5, 0.5, 9).unwrap(), WeightMethod::Sinkhorn)
            .unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(3, &mut buf).unwrap();
        let (back, d) = WeightedDigraph::read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(d, 3);
        assert_eq!(back, g);
    }

    #[test]
    fn malformed_edge_list_rejected() {
        assert!(WeightedDigraph::read_edge_list("3\n".as_bytes()).is_err());
        assert!(WeightedDigraph::read_edge_list("3 1\n0 1\n".as_bytes()).is_err());
    }

    #[test]
    fn weights_must_match_support() {
        let g = WeightedDigraph::cycle(3).unwrap();
        assert!(g
            .clone()
            .with_weights(DMatrix::from_element(3, 3, 1.0 / 3.0))
            .is_err());
    }
}
