//! Communication graph, mixing matrices and graph spectral quantities.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONNECT_RETRY_BUDGET: usize = 1000;

/// Undirected simple graph over nodes `0..n_nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list. Duplicates and orientation are
    /// normalized; self-loops and out-of-range ids are rejected.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u},{v}) out of range for {n_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop at node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n_nodes];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
        }
        Ok(Graph {
            n_nodes,
            edges,
            adjacency,
        })
    }

    pub fn complete(n_nodes: usize) -> Self {
        let edges: Vec<_> = (0..n_nodes)
            .flat_map(|u| (u + 1..n_nodes).map(move |v| (u, v)))
            .collect();
        Graph::from_edges(n_nodes, &edges).expect("valid complete graph")
    }

    pub fn path(n_nodes: usize) -> Self {
        let edges: Vec<_> = (1..n_nodes).map(|v| (v - 1, v)).collect();
        Graph::from_edges(n_nodes, &edges).expect("valid path graph")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.adjacency[n]
    }

    pub fn degree(&self, n: usize) -> usize {
        self.adjacency[n].len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_nodes).map(|n| self.degree(n)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Hop distances from `root`; `None` for unreachable nodes.
    pub fn bfs(&self, root: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_nodes];
        let mut queue = VecDeque::new();
        dist[root] = Some(0);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.bfs(0).iter().all(Option::is_some)
    }

    /// Graph Laplacian `D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_nodes;
        let mut l = DMatrix::zeros(n, n);
        for &(u, v) in &self.edges {
            l[(u, v)] = -1.0;
            l[(v, u)] = -1.0;
        }
        for u in 0..n {
            l[(u, u)] = self.degree(u) as f64;
        }
        l
    }

    /// Edge-list text: first line `N`, then one `u v` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.n_nodes);
        for &(u, v) in &self.edges {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing node count".into(),
        })?;
        let n: usize = first.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad node count {first:?}"),
        })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let mut it = l.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) => edges.push((u, v)),
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("expected `u v`, got {l:?}"),
                    })
                }
            }
        }
        Graph::from_edges(n, &edges)
    }
}

/// Erdős–Rényi graph conditioned on connectivity. Each attempt draws from its
/// own ChaCha stream derived from `seed`, so the result is a pure function of
/// the arguments.
pub fn gen_random_graph(n_nodes: usize, edge_prob: f64, seed: u64) -> Result<Graph> {
    if n_nodes == 0 {
        return Err(Error::InvalidArgument("n_nodes must be >= 1".into()));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "edge_prob must be in (0, 1], got {edge_prob}"
        )));
    }
    for attempt in 0..CONNECT_RETRY_BUDGET {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut edges = Vec::new();
        for u in 0..n_nodes {
            for v in u + 1..n_nodes {
                if rng.gen::<f64>() < edge_prob {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::from_edges(n_nodes, &edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::RetryBudgetExhausted {
        attempts: CONNECT_RETRY_BUDGET,
        n_nodes,
        edge_prob,
    })
}

/// How the Laplacian is scaled into `W = I - L / tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauMode {
    /// `tau = lambda_max(L)`; the smallest value keeping `W` positive semidefinite.
    Spectral,
    /// `tau = scale * lambda_max(L)`. Not checked; use [`validate_mixing`].
    Scaled(f64),
    /// Absolute `tau`. Not checked; use [`validate_mixing`].
    Custom(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingMatrix {
    #[serde(skip)]
    pub w: DMatrix<f64>,
    #[serde(skip)]
    pub w_tilde: DMatrix<f64>,
    pub tau: f64,
    /// Smallest nonzero eigenvalue of `(I - W) / 2`.
    pub gamma: f64,
    pub eig_min: f64,
    pub eig_max: f64,
}

const EIG_ZERO_TOL: f64 = 1e-10;

fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

impl MixingMatrix {
    /// Wraps an arbitrary `W`, deriving `W~`, the spectrum and gamma.
    /// Only symmetric input gives meaningful spectral fields.
    pub fn from_w(w: DMatrix<f64>, tau: f64) -> Self {
        let n = w.nrows();
        let w_tilde = (&w + DMatrix::<f64>::identity(n, n)) * 0.5;
        let sym = (&w + w.transpose()) * 0.5;
        let ev = sym_eigenvalues(&sym);
        let gamma = ev
            .iter()
            .map(|l| (1.0 - l) / 2.0)
            .filter(|g| g.abs() > EIG_ZERO_TOL)
            .fold(f64::INFINITY, f64::min);
        MixingMatrix {
            w,
            w_tilde,
            tau,
            gamma: if gamma.is_finite() { gamma } else { 0.0 },
            eig_min: ev.first().copied().unwrap_or(1.0),
            eig_max: ev.last().copied().unwrap_or(1.0),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.w.nrows()
    }

    /// `[W~^k]` for `k = 0..=max_power`.
    pub fn w_tilde_powers(&self, max_power: usize) -> Vec<DMatrix<f64>> {
        let n = self.n_nodes();
        let mut out = Vec::with_capacity(max_power + 1);
        out.push(DMatrix::identity(n, n));
        for k in 1..=max_power {
            let next = &out[k - 1] * &self.w_tilde;
            out.push(next);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.w.nrows() {
            let row: Vec<String> = self.w.row(r).iter().map(|v| format!("{v:.17e}")).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// `W = I - L / tau` for a connected graph.
pub fn build_mixing_matrix(g: &Graph, tau_mode: TauMode) -> Result<MixingMatrix> {
    if !g.is_connected() {
        let unreachable = g.bfs(0).iter().position(Option::is_none).unwrap_or(0);
        return Err(Error::Disconnected(unreachable));
    }
    let n = g.n_nodes();
    if n == 1 {
        return Ok(MixingMatrix::from_w(DMatrix::identity(1, 1), 1.0));
    }
    let l = g.laplacian();
    let lambda_max = *sym_eigenvalues(&l).last().unwrap();
    let tau = match tau_mode {
        TauMode::Spectral => lambda_max,
        TauMode::Scaled(s) => s * lambda_max,
        TauMode::Custom(t) => t,
    };
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if tau_mode == TauMode::Spectral && tau < lambda_max * (1.0 - 1e-12) {
        return Err(Error::TauTooSmall { tau, lambda_max });
    }
    let mut w = DMatrix::<f64>::identity(n, n) - l / tau;
    // Re-symmetrize and pin row sums so that W1 = 1 holds to rounding.
    for r in 0..n {
        for c in r + 1..n {
            let v = 0.5 * (w[(r, c)] + w[(c, r)]);
            w[(r, c)] = v;
            w[(c, r)] = v;
        }
        let off: f64 = (0..n).filter(|&c| c != r).map(|c| w[(r, c)]).sum();
        w[(r, r)] = 1.0 - off;
    }
    Ok(MixingMatrix::from_w(w, tau))
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CHECK_SPARSITY: &str = "graph_sparsity";
pub const CHECK_SYMMETRY: &str = "symmetry";
pub const CHECK_NULL_SPACE: &str = "null_space";
pub const CHECK_SPECTRAL: &str = "spectral_range";

/// Tolerances used by [`validate_mixing`].
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const ROW_SUM_TOL: f64 = 1e-12;
pub const SPECTRUM_TOL: f64 = 1e-10;

/// Checks the four mixing-matrix conditions: graph sparsity, symmetry,
/// `null(I - W) = span(1)`, and `0 <= W <= I`.
pub fn validate_mixing(w: &DMatrix<f64>, g: &Graph) -> ValidationReport {
    let n = g.n_nodes();
    assert_eq!(w.nrows(), n);
    assert_eq!(w.ncols(), n);
    let mut checks = Vec::with_capacity(4);

    let mut bad = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if r != c && !g.has_edge(r, c) && w[(r, c)] != 0.0 {
                bad.push((r, c));
            }
        }
    }
    checks.push(Check {
        name: CHECK_SPARSITY,
        passed: bad.is_empty(),
        detail: format!("{} nonzero entries outside the graph", bad.len()),
    });

    let asym = (w - w.transpose()).amax();
    checks.push(Check {
        name: CHECK_SYMMETRY,
        passed: asym < SYMMETRY_TOL,
        detail: format!("max |W - W^T| = {asym:.3e}"),
    });

    let sym = (w + w.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let unit: Vec<usize> = (0..n)
        .filter(|&k| (eig.eigenvalues[k] - 1.0).abs() < 1e-9)
        .collect();
    let row_err = (0..n)
        .map(|r| (w.row(r).sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let ones_aligned = unit.len() == 1 && {
        let v = eig.eigenvectors.column(unit[0]);
        let s = 1.0 / (n as f64).sqrt();
        let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
        v.iter().all(|x| (sign * x - s).abs() < 1e-8)
    };
    checks.push(Check {
        name: CHECK_NULL_SPACE,
        passed: ones_aligned && row_err < ROW_SUM_TOL,
        detail: format!(
            "eigenvalue 1 multiplicity {}, max |W1 - 1| = {row_err:.3e}",
            unit.len()
        ),
    });

    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    checks.push(Check {
        name: CHECK_SPECTRAL,
        passed: lo >= -SPECTRUM_TOL && hi <= 1.0 + SPECTRUM_TOL,
        detail: format!("eigenvalues in [{lo:.3e}, {hi:.3e}]"),
    });

    ValidationReport { checks }
}

/// Hop distances from a root node plus the resulting diameter bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistanceMap {
    pub root: usize,
    pub xi: Vec<usize>,
    pub diameter: usize,
}

impl DistanceMap {
    /// Nodes at exactly `j` hops from the root.
    pub fn layer(&self, j: usize) -> Vec<usize> {
        (0..self.xi.len()).filter(|&n| self.xi[n] == j).collect()
    }
}

pub fn distance_map(g: &Graph, root: usize) -> Result<DistanceMap> {
    if root >= g.n_nodes() {
        return Err(Error::InvalidArgument(format!("root {root} out of range")));
    }
    let xi = g
        .bfs(root)
        .into_iter()
        .enumerate()
        .map(|(n, d)| d.ok_or(Error::Disconnected(n)))
        .collect::<Result<Vec<_>>>()?;
    let diameter = xi.iter().copied().max().unwrap_or(0);
    Ok(DistanceMap { root, xi, diameter })
}

/// Largest eccentricity over all nodes.
pub fn graph_diameter(g: &Graph) -> Result<usize> {
    (0..g.n_nodes())
        .map(|r| distance_map(g, r).map(|d| d.diameter))
        .try_fold(0, |acc, d| d.map(|d| acc.max(d)))
}

/// Operator condition number `L / mu` and graph condition number `1 / gamma`.
pub fn condition_numbers(m: &MixingMatrix, lipschitz: f64, mu: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    if lipschitz < mu {
        return Err(Error::InvalidArgument(format!(
            "L ({lipschitz}) must be >= mu ({mu})"
        )));
    }
    if !(m.gamma > 0.0) {
        return Err(Error::InvalidArgument("gamma must be positive".into()));
    }
    Ok((lipschitz / mu, 1.0 / m.gamma))
}
