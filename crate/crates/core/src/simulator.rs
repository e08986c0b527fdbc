//! Synchronous round engine, reference solutions and run logs.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    extra_round, init_node, local_step, mix_extrapolated, mix_initial, pointsaga_step, step_size_bound, Counters,
    NodeState, StepConfig, Variant,
};
use crate::dataset::{default_lambda, normalize_rows, parse_libsvm, partition, synthetic, Sample, ShardManifest, Shards, SyntheticSpec};
use crate::error::{Error, Result};
use crate::operators::{sample_loss, Family, Problem, DEFAULT_NEWTON_ITERS};
use crate::sparse::SparseVec;
use crate::sparsecomm::{bootstrap, observer_round, pack_delta, CommStats, DeltaPacket, Network, ObserverMemory, TraceRow};
use crate::topology::{build_mixing_matrix, gen_random_graph, Graph, MixingMatrix, TauMode};

/// Residual target of the reference solver.
pub const REFERENCE_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_MAX_DIM: usize = 4000;
const FIRST_ORDER_MAX_ITERS: usize = 20_000;
/// Runs stop once the suboptimality exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphSpec {
    Random { n_nodes: usize, edge_prob: f64, seed: u64 },
    Complete { n_nodes: usize },
    Path { n_nodes: usize },
    Edges { n_nodes: usize, edges: Vec<(usize, usize)> },
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        match self {
            GraphSpec::Random {
                n_nodes,
                edge_prob,
                seed,
            } => gen_random_graph(*n_nodes, *edge_prob, *seed),
            GraphSpec::Complete { n_nodes } => Ok(Graph::complete(*n_nodes)),
            GraphSpec::Path { n_nodes } => Ok(Graph::path(*n_nodes)),
            GraphSpec::Edges { n_nodes, edges } => Graph::from_edges(*n_nodes, edges),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Libsvm { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommMode {
    Dense,
    Sparse,
}

impl std::str::FromStr for CommMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(CommMode::Dense),
            "sparse" => Ok(CommMode::Sparse),
            other => Err(Error::InvalidArgument(format!("unknown comm mode {other:?}"))),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_newton() -> usize {
    DEFAULT_NEWTON_ITERS
}

fn default_tau() -> TauMode {
    TauMode::Spectral
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub family: Family,
    pub graph: GraphSpec,
    pub data: DataSource,
    /// Scale LIBSVM rows to unit norm.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Step size; `None` means `1 / (24 L)`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// `None` means `1 / (10 Q)`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_tau")]
    pub tau: TauMode,
    pub rounds: usize,
    /// Rounds between checkpoints; `None` means `q_min`.
    #[serde(default)]
    pub cadence: Option<usize>,
    pub comm: CommMode,
    /// Master seed for partitioning and sampling.
    pub seed: u64,
    #[serde(default = "default_newton")]
    pub newton_iters: usize,
    #[serde(default)]
    pub record_trace: bool,
    /// Stop at the first checkpoint with suboptimality at or below this.
    #[serde(default)]
    pub stop_below: Option<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be >= 1".into()));
        }
        if self.cadence == Some(0) {
            return Err(Error::InvalidArgument("cadence must be >= 1".into()));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::InvalidArgument(format!("alpha must be positive, got {a}")));
            }
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {l}")));
            }
        }
        if self.newton_iters == 0 {
            return Err(Error::InvalidArgument("newton_iters must be >= 1".into()));
        }
        if self.variant == Variant::Extra && self.comm == CommMode::Sparse {
            return Err(Error::InvalidArgument(
                "EXTRA exchanges full iterates; use comm = dense".into(),
            ));
        }
        Ok(())
    }
}

/// Loads samples and splits them over `n_nodes`.
pub fn load_shards(data: &DataSource, normalize: bool, n_nodes: usize, seed: u64) -> Result<Shards> {
    let (samples, dim) = match data {
        DataSource::Synthetic(spec) => synthetic(spec)?,
        DataSource::Libsvm { path } => {
            let f = std::fs::File::open(path)?;
            let (mut samples, dim) = parse_libsvm(std::io::BufReader::new(f))?;
            if normalize {
                normalize_rows(&mut samples)?;
            }
            (samples, dim)
        }
    };
    partition(samples, dim, n_nodes, seed)
}

/// Certified centralized root of `sum_n (1/q_n) sum_i B_{n,i}(z) + N lambda z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    #[serde(skip)]
    pub z_star: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: String,
}

/// Global operator `F(z)`.
pub fn global_operator(problem: &Problem, shards: &Shards, z: &[f64]) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = z.iter().map(|v| shards.n_nodes() as f64 * problem.lambda * v).collect();
    for shard in &shards.per_node {
        let w = 1.0 / shard.len() as f64;
        for s in shard {
            problem.op(s).eval_unreg(z)?.axpy_into(w, &mut out);
        }
    }
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn global_jacobian(problem: &Problem, shards: &Shards, z: &[f64]) -> Result<DMatrix<f64>> {
    let d = z.len();
    let mut jac = DMatrix::identity(d, d) * (shards.n_nodes() as f64 * problem.lambda);
    for shard in &shards.per_node {
        let w = 1.0 / shard.len() as f64;
        for s in shard {
            problem.op(s).jacobian_add(z, w, &mut jac)?;
        }
    }
    Ok(jac)
}

/// Damped Newton on `F`, falling back to a forward iteration when the
/// Jacobian is singular or too large.
pub fn reference_solution(problem: &Problem, shards: &Shards) -> Result<Reference> {
    let dim = problem.dim(shards.dim);
    let mut z = vec![0.0; dim];
    let mut f = global_operator(problem, shards, &z)?;
    let mut res = norm(&f);
    if dim <= NEWTON_MAX_DIM {
        for it in 0..NEWTON_MAX_ITERS {
            if res <= REFERENCE_TOL {
                return Ok(Reference {
                    z_star: z,
                    residual: res,
                    iterations: it,
                    converged: true,
                    method: "newton".into(),
                });
            }
            let jac = global_jacobian(problem, shards, &z)?;
            let Some(step) = jac.lu().solve(&DVector::from_column_slice(&f)) else {
                break;
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
                let fc = global_operator(problem, shards, &cand)?;
                let rc = norm(&fc);
                if rc < res || rc <= REFERENCE_TOL {
                    z = cand;
                    f = fc;
                    res = rc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if res <= REFERENCE_TOL {
            return Ok(Reference {
                z_star: z,
                residual: res,
                iterations: NEWTON_MAX_ITERS,
                converged: true,
                method: "newton".into(),
            });
        }
    }
    let n = shards.n_nodes() as f64;
    let lmax = shards
        .all_samples()
        .map(|s| problem.op(s).lipschitz())
        .fold(0.0, f64::max);
    let eta = 1.0 / (n * (lmax + problem.lambda));
    let mut iters = 0;
    while iters < FIRST_ORDER_MAX_ITERS && res > REFERENCE_TOL {
        for (zi, fi) in z.iter_mut().zip(&f) {
            *zi -= eta * fi;
        }
        f = global_operator(problem, shards, &z)?;
        res = norm(&f);
        iters += 1;
    }
    Ok(Reference {
        z_star: z,
        residual: res,
        iterations: iters,
        converged: res <= REFERENCE_TOL,
        method: "forward".into(),
    })
}

/// Fraction of (positive, negative) pairs ranked correctly by `w^T a`, ties
/// counting one half. Only the first `d` entries of `w` are read.
pub fn auc_score(w: &[f64], samples: &[Sample]) -> Result<f64> {
    let mut scored: Vec<(f64, bool)> = samples
        .iter()
        .map(|s| (s.features.dot_dense(w), s.label > 0.0))
        .collect();
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < scored.len() {
        let mut j = k;
        while j + 1 < scored.len() && scored[j + 1].0 == scored[k].0 {
            j += 1;
        }
        let avg_rank = (k + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * scored[k..=j].iter().filter(|s| s.1).count() as f64;
        k = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("xs are constant".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Graph, shards and reference shared by every variant of one experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub graph: Graph,
    pub mixing: MixingMatrix,
    pub shards: Shards,
    pub problem: Problem,
    /// Operating dimension (`d + 3` for AUC).
    pub dim: usize,
    pub lipschitz: f64,
    pub reference: Reference,
    pub z0: Vec<f64>,
    pub seed: u64,
}

impl Experiment {
    pub fn new(graph: Graph, tau: TauMode, shards: Shards, family: Family, lambda: Option<f64>, seed: u64) -> Result<Self> {
        if graph.n_nodes() != shards.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: graph.n_nodes(),
                got: shards.n_nodes(),
            });
        }
        let mixing = build_mixing_matrix(&graph, tau)?;
        let lambda = match lambda {
            Some(l) => l,
            None => default_lambda(&shards)?,
        };
        let problem = Problem::new(family, shards.p, lambda);
        problem.validate(shards.all_samples())?;
        let dim = problem.dim(shards.dim);
        let lipschitz = problem.lipschitz(shards.all_samples());
        let reference = reference_solution(&problem, &shards)?;
        Ok(Experiment {
            graph,
            mixing,
            shards,
            problem,
            dim,
            lipschitz,
            reference,
            z0: vec![0.0; dim],
            seed,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = cfg.graph.build()?;
        let shards = load_shards(&cfg.data, cfg.normalize, graph.n_nodes(), cfg.seed)?;
        Experiment::new(graph, cfg.tau, shards, cfg.family, cfg.lambda, cfg.seed)
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn default_alpha(&self) -> Result<f64> {
        step_size_bound(self.lipschitz)
    }

    pub fn z_star_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_nodes(), self.dim, |_, k| self.reference.z_star[k])
    }

    /// Stable-within-a-toolchain hash of the graph and shard assignment.
    pub fn fingerprint(&self) -> String {
        let mut h = DefaultHasher::new();
        self.graph.edges().hash(&mut h);
        for shard in &self.shards.per_node {
            for s in shard {
                s.line.hash(&mut h);
                s.label.to_bits().hash(&mut h);
                for (i, v) in s.features.iter() {
                    i.hash(&mut h);
                    v.to_bits().hash(&mut h);
                }
            }
            usize::MAX.hash(&mut h);
        }
        format!("{:016x}", h.finish())
    }

    /// Global objective at `z` (ridge, logistic) or AUC of its `w` block.
    pub fn score(&self, z: &[f64]) -> Result<f64> {
        match self.problem.family {
            Family::Auc => {
                let all: Vec<Sample> = self.shards.all_samples().cloned().collect();
                auc_score(&z[..self.shards.dim], &all)
            }
            fam => {
                let n = self.n_nodes() as f64;
                let mut f = 0.0;
                for shard in &self.shards.per_node {
                    let q = shard.len() as f64;
                    f += shard.iter().map(|s| sample_loss(fam, s, self.problem.p, z)).sum::<f64>() / q;
                }
                Ok(f / n + 0.5 * self.problem.lambda * z.iter().map(|v| v * v).sum::<f64>())
            }
        }
    }
}

/// Round-by-round execution of one variant on an [`Experiment`].
pub struct Simulation<'a> {
    pub exp: &'a Experiment,
    pub cfg: StepConfig,
    pub comm: CommMode,
    pub states: Vec<NodeState>,
    pub round: usize,
    pub stats: CommStats,
    network: Option<Network>,
    powers: Vec<DMatrix<f64>>,
    e: usize,
    history: Vec<DMatrix<f64>>,
    buffered: Vec<Vec<(usize, usize, SparseVec)>>,
    memories: Option<Vec<ObserverMemory>>,
}

impl<'a> Simulation<'a> {
    pub fn new(exp: &'a Experiment, cfg: StepConfig, comm: CommMode, record_trace: bool) -> Result<Self> {
        Self::with_sampling_seed(exp, cfg, comm, record_trace, exp.seed)
    }

    /// Like [`Simulation::new`] with the per-node sampler streams derived from
    /// `seed` instead of the experiment seed.
    pub fn with_sampling_seed(
        exp: &'a Experiment,
        cfg: StepConfig,
        comm: CommMode,
        record_trace: bool,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = exp.n_nodes();
        if cfg.variant == Variant::PointSaga && n != 1 {
            return Err(Error::InvalidArgument(format!(
                "Point-SAGA runs on a single node, got {n}"
            )));
        }
        if cfg.variant == Variant::Extra && comm == CommMode::Sparse {
            return Err(Error::InvalidArgument(
                "EXTRA exchanges full iterates; use comm = dense".into(),
            ));
        }
        let states = exp
            .shards
            .per_node
            .iter()
            .enumerate()
            .map(|(k, shard)| init_node(k, shard.clone(), &exp.z0, exp.problem, seed))
            .collect::<Result<Vec<_>>>()?;
        let (network, powers, e) = if comm == CommMode::Sparse && n > 1 {
            let net = Network::new(&exp.graph, record_trace)?;
            let e = net.diameter();
            let powers = exp.mixing.w_tilde_powers(e);
            (Some(net), powers, e)
        } else {
            (None, Vec::new(), 0)
        };
        Ok(Simulation {
            exp,
            cfg,
            comm,
            states,
            round: 0,
            stats: CommStats::new(n),
            network,
            powers,
            e,
            history: Vec::new(),
            buffered: vec![Vec::new(); n],
            memories: None,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.states.len()
    }

    /// Network diameter used by the sparse protocol (0 in dense mode).
    pub fn diameter(&self) -> usize {
        self.e
    }

    pub fn z_matrix(&self) -> DMatrix<f64> {
        let d = self.exp.dim;
        DMatrix::from_fn(self.n_nodes(), d, |r, c| self.states[r].z_curr[c])
    }

    pub fn mean_iterate(&self) -> Vec<f64> {
        let n = self.n_nodes() as f64;
        let mut m = vec![0.0; self.exp.dim];
        for s in &self.states {
            for (a, b) in m.iter_mut().zip(&s.z_curr) {
                *a += b / n;
            }
        }
        m
    }

    /// `|Z - 1 z*^T|_F / |Z^0 - 1 z*^T|_F` (denominator 1 when zero).
    pub fn subopt(&self) -> f64 {
        let zs = &self.exp.reference.z_star;
        let num: f64 = self
            .states
            .iter()
            .flat_map(|s| s.z_curr.iter().zip(zs).map(|(a, b)| (a - b).powi(2)))
            .sum();
        let den: f64 = self.n_nodes() as f64 * self.exp.z0.iter().zip(zs).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let den = if den == 0.0 { 1.0 } else { den };
        (num / den).sqrt()
    }

    /// `max_n |z_n - mean z|`.
    pub fn consensus_error(&self) -> f64 {
        let m = self.mean_iterate();
        self.states
            .iter()
            .map(|s| norm(&s.z_curr.iter().zip(&m).map(|(a, b)| a - b).collect::<Vec<_>>()))
            .fold(0.0, f64::max)
    }

    pub fn counters(&self) -> Counters {
        self.states.iter().fold(Counters::default(), |acc, s| Counters {
            resolvents: acc.resolvents + s.counters.resolvents,
            evals: acc.evals + s.counters.evals,
        })
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.network.as_ref().and_then(|n| n.trace.as_deref())
    }

    /// Largest observer memory, in doubles.
    pub fn max_observer_memory(&self) -> Option<usize> {
        self.memories
            .as_ref()
            .map(|m| m.iter().map(|x| x.memory_doubles()).max().unwrap_or(0))
    }

    /// Passes over local data: `round / q_min`, or `round` for full-batch EXTRA.
    pub fn effective_passes(&self) -> f64 {
        if self.cfg.variant == Variant::Extra {
            self.round as f64
        } else {
            self.round as f64 / self.exp.shards.q_min as f64
        }
    }

    fn mixing_neighbors(&self, n: usize, w: &DMatrix<f64>) -> Vec<usize> {
        let mut v: Vec<usize> = self.exp.graph.neighbors(n).to_vec();
        v.push(n);
        v.sort_unstable();
        v.retain(|&m| w[(n, m)] != 0.0);
        v
    }

    fn dense_mix(&self, n: usize, snap_curr: &[Vec<f64>], snap_prev: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = self.exp.dim;
        if self.round == 0 {
            let w = &self.exp.mixing.w;
            let pairs: Vec<(f64, &[f64])> = self
                .mixing_neighbors(n, w)
                .into_iter()
                .map(|m| (w[(n, m)], snap_curr[m].as_slice()))
                .collect();
            mix_initial(d, &pairs)
        } else {
            let w = &self.exp.mixing.w_tilde;
            let triples: Vec<(f64, &[f64], &[f64])> = self
                .mixing_neighbors(n, w)
                .into_iter()
                .map(|m| (w[(n, m)], snap_curr[m].as_slice(), snap_prev[m].as_slice()))
                .collect();
            mix_extrapolated(d, &triples)
        }
    }

    fn dense_round(&mut self) -> Result<Vec<SparseVec>> {
        let snap_curr: Vec<Vec<f64>> = self.states.iter().map(|s| s.z_curr.clone()).collect();
        let snap_prev: Vec<Vec<f64>> = self.states.iter().map(|s| s.z_prev.clone()).collect();
        let mut deltas = Vec::with_capacity(self.n_nodes());
        for n in 0..self.n_nodes() {
            let delta = if self.cfg.variant == Variant::PointSaga {
                let st = &mut self.states[n];
                let i = st.draw_index();
                pointsaga_step(st, 1, &self.cfg, i)?.1
            } else {
                let mix = self.dense_mix(n, &snap_curr, &snap_prev)?;
                local_step(&mut self.states[n], &mix, &self.cfg)?.1
            };
            deltas.push(delta);
        }
        Ok(deltas)
    }

    fn sparse_round(&mut self) -> Result<()> {
        let t = self.round;
        let inbox = self.network.as_mut().expect("sparse mode has a network").take_inbox();
        let deltas = if t <= self.e {
            if t == 0 {
                self.history.clear();
            } else {
                self.stats.record_all_gather(self.exp.dim);
            }
            self.history.push(self.z_matrix());
            for (n, pk) in inbox.iter().enumerate() {
                self.buffered[n].extend(pk.iter().map(|p| (p.origin, p.round, p.payload.clone())));
            }
            let deltas = self.dense_round()?;
            for (n, d) in deltas.iter().enumerate() {
                self.buffered[n].push((n, t, d.clone()));
            }
            if t == self.e {
                let qs: Vec<usize> = self.states.iter().map(|s| s.q()).collect();
                let schedules = &self.network.as_ref().unwrap().schedules;
                let mut mems = bootstrap(&self.history, &self.powers, schedules, &qs, &self.cfg, self.exp.problem.lambda)?;
                for (mem, buf) in mems.iter_mut().zip(self.buffered.iter_mut()) {
                    for (origin, round, d) in buf.drain(..) {
                        mem.record(origin, round, d);
                    }
                }
                self.memories = Some(mems);
                self.history.clear();
            }
            deltas
        } else {
            let mems = self.memories.as_mut().expect("memories seeded after bootstrap");
            let mut deltas = Vec::with_capacity(self.states.len());
            for n in 0..self.states.len() {
                let (_, d) = observer_round(&mut mems[n], &inbox[n], &mut self.states[n], &self.powers, &self.cfg)?;
                deltas.push(d);
            }
            deltas
        };
        let produced: Vec<DeltaPacket> = deltas
            .into_iter()
            .enumerate()
            .map(|(n, d)| pack_delta(d, n, t).0)
            .collect();
        let net = self.network.as_mut().unwrap();
        net.dispatch(t + 1, &inbox, produced, &mut self.stats);
        Ok(())
    }

    /// Executes one synchronous round.
    pub fn step(&mut self) -> Result<()> {
        let t = self.round;
        self.stats.begin_round();
        let res = match (self.cfg.variant, self.comm, self.network.is_some()) {
            (Variant::Extra, _, _) => {
                let m = &self.exp.mixing;
                extra_round(&mut self.states, &m.w, &m.w_tilde, self.cfg.alpha).map(|_| {
                    self.stats.record_dense_round(&self.exp.graph, self.exp.dim);
                })
            }
            (_, CommMode::Sparse, true) => self.sparse_round(),
            _ => self.dense_round().map(|_| {
                if self.comm == CommMode::Dense {
                    self.stats.record_dense_round(&self.exp.graph, self.exp.dim);
                }
            }),
        };
        res.map_err(|e| Error::Round {
            round: t,
            source: Box::new(e),
        })?;
        self.round += 1;
        Ok(())
    }
}

/// `H^t = |Z - Z*|^2_Wt + |U Q^t - U Q*|^2 + c D^t` with `U^2 = (I - W) / 2`,
/// `Q^t = sum_k U Z^k`, `U Q* = -alpha B(Z*)` and `c = q / (96 L^2)`.
pub struct Lyapunov {
    u2: DMatrix<f64>,
    w_tilde: DMatrix<f64>,
    sum_z: DMatrix<f64>,
    uq_star: DMatrix<f64>,
    z_star: DMatrix<f64>,
    b_star: Vec<Vec<SparseVec>>,
    pub c: f64,
}

impl Lyapunov {
    pub fn new(exp: &Experiment, alpha: f64) -> Result<Self> {
        let n = exp.n_nodes();
        let zs = &exp.reference.z_star;
        let u2 = (DMatrix::identity(n, n) - &exp.mixing.w) * 0.5;
        let mut uq_star = DMatrix::zeros(n, exp.dim);
        let mut b_star = Vec::with_capacity(n);
        for (k, shard) in exp.shards.per_node.iter().enumerate() {
            let mut row: Vec<f64> = zs.iter().map(|v| exp.problem.lambda * v).collect();
            let mut outs = Vec::with_capacity(shard.len());
            for s in shard {
                let b = exp.problem.op(s).eval_unreg(zs)?;
                b.axpy_into(1.0 / shard.len() as f64, &mut row);
                outs.push(b);
            }
            for (j, v) in row.iter().enumerate() {
                uq_star[(k, j)] = -alpha * v;
            }
            b_star.push(outs);
        }
        let l = exp.lipschitz;
        Ok(Lyapunov {
            u2,
            w_tilde: exp.mixing.w_tilde.clone(),
            sum_z: DMatrix::zeros(n, exp.dim),
            uq_star,
            z_star: exp.z_star_matrix(),
            b_star,
            c: exp.shards.q_min as f64 / (96.0 * l * l),
        })
    }

    /// Folds the current iterate into `Q^t` and returns `H^t`. Call once per
    /// round, starting at round 0.
    pub fn observe(&mut self, sim: &Simulation<'_>) -> f64 {
        let z = sim.z_matrix();
        self.sum_z += &z;
        let dz = &z - &self.z_star;
        let wt = (dz.transpose() * &self.w_tilde * &dz).trace();
        let uq = &self.u2 * &self.sum_z - &self.uq_star;
        let mut d = 0.0;
        for (st, bs) in sim.states.iter().zip(&self.b_star) {
            let q = st.q() as f64;
            for (phi, b) in st.table.phi.iter().zip(bs) {
                d += 2.0 / q * phi.sub(b).norm_sq();
            }
        }
        wt + uq.norm_squared() + self.c * d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub effective_passes: f64,
    pub subopt: f64,
    pub consensus: f64,
    /// Objective (ridge, logistic) or AUC.
    pub score: f64,
    pub c_max: u64,
}

pub const METRICS_HEADER: &str = "round,effective_passes,subopt,consensus,score,c_max";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.round, r.effective_passes, r.subopt, r.consensus, r.score, r.c_max
            ));
        }
        s
    }

    /// First checkpoint with `subopt <= target`.
    pub fn passes_to(&self, target: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.subopt <= target).map(|r| r.effective_passes)
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

fn checkpoint(sim: &Simulation<'_>) -> Result<MetricsRow> {
    let score = sim.exp.score(&sim.mean_iterate())?;
    Ok(MetricsRow {
        round: sim.round,
        effective_passes: sim.effective_passes(),
        subopt: sim.subopt(),
        consensus: sim.consensus_error(),
        score,
        c_max: sim.stats.c_max(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Completed,
    Target,
    Diverged,
}

/// Drives `sim` for up to `rounds` rounds, logging every `cadence` rounds.
pub fn drive(sim: &mut Simulation<'_>, rounds: usize, cadence: usize, stop_below: Option<f64>) -> Result<(MetricsLog, StopReason)> {
    let mut log = MetricsLog::default();
    log.rows.push(checkpoint(sim)?);
    let mut reason = StopReason::Completed;
    while sim.round < rounds {
        sim.step()?;
        if sim.round % cadence == 0 || sim.round == rounds {
            let row = checkpoint(sim)?;
            let sub = row.subopt;
            log.rows.push(row);
            if !sub.is_finite() || sub > DIVERGENCE_LIMIT {
                reason = StopReason::Diverged;
                break;
            }
            if stop_below.is_some_and(|t| sub <= t) {
                reason = StopReason::Target;
                break;
            }
        }
    }
    Ok((log, reason))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub alpha: f64,
    pub lambda: f64,
    pub lipschitz: f64,
    pub tau: f64,
    pub gamma: f64,
    pub diameter: usize,
    pub q_min: usize,
    pub effective_pass: String,
    pub reference: Reference,
    pub fingerprint: String,
    pub rounds_run: usize,
    pub stop: StopReason,
    pub counters: Counters,
    pub c_max: u64,
    pub c_max_metadata: u64,
    pub wall_time_s: f64,
    pub shards: ShardManifest,
}

pub struct RunOutput {
    pub log: MetricsLog,
    pub manifest: Manifest,
    pub trace: Option<Vec<TraceRow>>,
    pub graph: Graph,
    pub mixing: MixingMatrix,
}

/// Runs `cfg` on an already prepared experiment.
pub fn run_experiment(exp: &Experiment, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let alpha = match cfg.alpha {
        Some(a) => a,
        None => exp.default_alpha()?,
    };
    let step = StepConfig {
        alpha,
        variant: cfg.variant,
        newton_iters: cfg.newton_iters,
    };
    let mut sim = Simulation::new(exp, step, cfg.comm, cfg.record_trace)?;
    let cadence = cfg.cadence.unwrap_or(exp.shards.q_min);
    let (log, stop) = drive(&mut sim, cfg.rounds, cadence, cfg.stop_below)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        alpha,
        lambda: exp.problem.lambda,
        lipschitz: exp.lipschitz,
        tau: exp.mixing.tau,
        gamma: exp.mixing.gamma,
        diameter: sim.diameter(),
        q_min: exp.shards.q_min,
        effective_pass: if cfg.variant == Variant::Extra {
            "round (one full local batch per round)".into()
        } else {
            "round / q_min".into()
        },
        reference: exp.reference.clone(),
        fingerprint: exp.fingerprint(),
        rounds_run: sim.round,
        stop,
        counters: sim.counters(),
        c_max: sim.stats.c_max(),
        c_max_metadata: sim.stats.received_metadata.iter().copied().max().unwrap_or(0),
        wall_time_s: start.elapsed().as_secs_f64(),
        shards: exp.shards.manifest(),
    };
    Ok(RunOutput {
        log,
        manifest,
        trace: sim.trace().map(|t| t.to_vec()),
        graph: exp.graph.clone(),
        mixing: exp.mixing.clone(),
    })
}

/// Builds the experiment from `cfg` and runs it.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let exp = Experiment::from_config(cfg)?;
    run_experiment(&exp, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s(idx: usize, val: f64, label: f64, dim: usize) -> Sample {
        Sample {
            features: SparseVec::new(dim, vec![idx], vec![val]),
            label,
            line: idx + 1,
        }
    }

    #[test]
    fn auc_examples() {
        let data = vec![s(0, 2.0, 1.0, 1), s(0, 1.0, 1.0, 1), s(0, -1.0, -1.0, 1), s(0, -2.0, -1.0, 1)];
        assert_eq!(auc_score(&[1.0], &data).unwrap(), 1.0);
        assert_eq!(auc_score(&[0.0], &data).unwrap(), 0.5);
        let inv = vec![s(0, 2.0, 1.0, 1), s(0, -0.5, 1.0, 1), s(0, 0.0, -1.0, 1), s(0, -2.0, -1.0, 1)];
        assert_eq!(auc_score(&[1.0], &inv).unwrap(), 0.75);
        assert!(auc_score(&[1.0], &data[..2]).is_err());
    }

    #[test]
    fn reference_two_sample_ridge() {
        let shards = partition(vec![s(0, 1.0, 1.0, 2), s(1, 1.0, -1.0, 2)], 2, 1, 0).unwrap();
        let pb = Problem::new(Family::Ridge, shards.p, 0.0);
        let r = reference_solution(&pb, &shards).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.z_star[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.z_star[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_large_lambda_shrinks() {
        let shards = partition(vec![s(0, 1.0, 1.0, 2), s(1, 1.0, -1.0, 2)], 2, 1, 0).unwrap();
        let pb = Problem::new(Family::Ridge, shards.p, 1e9);
        let r = reference_solution(&pb, &shards).unwrap();
        assert!(norm(&r.z_star) < 1e-8);
    }

    #[test]
    fn linear_fit_exact_line() {
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, -1.0, -3.0]).unwrap();
        assert_abs_diff_eq!(f.slope, -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.intercept, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.r2, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn config_rejects_sparse_extra() {
        let cfg = RunConfig {
            variant: Variant::Extra,
            family: Family::Ridge,
            graph: GraphSpec::Complete { n_nodes: 3 },
            data: DataSource::Synthetic(SyntheticSpec {
                kind: crate::dataset::SyntheticKind::Regression,
                n_samples: 30,
                dim: 5,
                density: 0.4,
                noise: 0.1,
                seed: 1,
            }),
            normalize: true,
            alpha: None,
            lambda: None,
            tau: TauMode::Spectral,
            rounds: 5,
            cadence: None,
            comm: CommMode::Sparse,
            seed: 1,
            newton_iters: 20,
            record_trace: false,
            stop_below: None,
        };
        assert!(cfg.validate().is_err());
    }
}
