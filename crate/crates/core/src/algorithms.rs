//! Node-local DSBA updates, the SAGA operator table, and the DSA, EXTRA and
//! Point-SAGA variants.
//!
//! Every variant shares one bookkeeping scheme. A node keeps `z^t`, `z^{t-1}`,
//! the previous delta `delta^{t-1}` and its table `phi`. Neighbour iterates
//! enter only through a mixed vector:
//!
//! * round 0: `sum_m w_nm z_m^0`
//! * round t >= 1: `sum_m wt_nm (2 z_m^t - z_m^{t-1})`
//!
//! The mixed vector can come from a dense gather or from the sparse relay
//! protocol, so [`local_step`] is the single entry point both use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::operators::{Problem, DEFAULT_NEWTON_ITERS};
use crate::sparse::SparseVec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dsba,
    Dsa,
    Extra,
    #[serde(rename = "pointsaga")]
    PointSaga,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Dsba => "dsba",
            Variant::Dsa => "dsa",
            Variant::Extra => "extra",
            Variant::PointSaga => "pointsaga",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsba" => Ok(Variant::Dsba),
            "dsa" => Ok(Variant::Dsa),
            "extra" => Ok(Variant::Extra),
            "pointsaga" | "point-saga" => Ok(Variant::PointSaga),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub alpha: f64,
    pub variant: Variant,
    pub newton_iters: usize,
}

impl StepConfig {
    pub fn new(alpha: f64, variant: Variant) -> Result<Self> {
        let cfg = StepConfig {
            alpha,
            variant,
            newton_iters: DEFAULT_NEWTON_ITERS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        if self.newton_iters == 0 {
            return Err(Error::InvalidArgument("newton_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// `1 / (24 L)`.
pub fn step_size_bound(lipschitz: f64) -> Result<f64> {
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz constant must be positive, got {lipschitz}"
        )));
    }
    Ok(1.0 / (24.0 * lipschitz))
}

/// Stored component outputs `phi_i` and their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiTable {
    pub phi: Vec<SparseVec>,
    pub phi_bar: Vec<f64>,
    replacements: usize,
}

impl PhiTable {
    pub fn new(phi: Vec<SparseVec>, dim: usize) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = phi.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        let mut t = PhiTable {
            phi,
            phi_bar: vec![0.0; dim],
            replacements: 0,
        };
        t.recompute_mean();
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn exact_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.phi_bar.len()];
        for p in &self.phi {
            p.axpy_into(1.0, &mut m);
        }
        let q = self.phi.len() as f64;
        m.iter_mut().for_each(|v| *v /= q);
        m
    }

    pub fn recompute_mean(&mut self) {
        self.phi_bar = self.exact_mean();
        self.replacements = 0;
    }

    /// Max-abs gap between the running mean and the exact mean.
    pub fn mean_drift(&self) -> f64 {
        self.exact_mean()
            .iter()
            .zip(&self.phi_bar)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Overwrites entry `i` given `delta = new - phi_i`.
    pub fn replace(&mut self, i: usize, new: SparseVec, delta: &SparseVec) {
        let q = self.phi.len();
        self.phi[i] = new;
        delta.axpy_into(1.0 / q as f64, &mut self.phi_bar);
        self.replacements += 1;
        if self.replacements >= q {
            self.recompute_mean();
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub resolvents: u64,
    pub evals: u64,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub samples: Vec<Sample>,
    pub problem: Problem,
    pub z_curr: Vec<f64>,
    pub z_prev: Vec<f64>,
    pub delta_prev: SparseVec,
    pub table: PhiTable,
    pub rng: ChaCha8Rng,
    /// Local updates performed so far (`t`).
    pub round: usize,
    pub counters: Counters,
    /// Full local operator at `z^{t-1}`, kept by EXTRA.
    pub full_prev: Option<Vec<f64>>,
}

/// Per-node sampler stream derived from the master seed.
pub fn node_rng(master_seed: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(node as u64 + 1);
    rng
}

/// Fills the table with `B_{n,i}(z0)` and sets `delta^0 = 0`.
pub fn init_node(
    id: usize,
    shard: Vec<Sample>,
    z0: &[f64],
    problem: Problem,
    master_seed: u64,
) -> Result<NodeState> {
    if shard.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = problem.dim(shard[0].features.dim());
    if z0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: z0.len(),
        });
    }
    problem.validate(&shard)?;
    let mut counters = Counters::default();
    let phi = shard
        .iter()
        .map(|s| {
            counters.evals += 1;
            problem.op(s).eval_unreg(z0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NodeState {
        id,
        problem,
        z_curr: z0.to_vec(),
        z_prev: z0.to_vec(),
        delta_prev: SparseVec::zeros(dim),
        table: PhiTable::new(phi, dim)?,
        rng: node_rng(master_seed, id),
        round: 0,
        counters,
        full_prev: None,
        samples: shard,
    })
}

impl NodeState {
    pub fn q(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.z_curr.len()
    }

    /// Uniform sample index from this node's stream.
    pub fn draw_index(&mut self) -> usize {
        self.rng.gen_range(0..self.samples.len())
    }

    fn saga_coef(&self) -> f64 {
        let q = self.q() as f64;
        (q - 1.0) / q
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.q() {
            return Err(Error::InvalidArgument(format!(
                "sample index {i} out of range for shard of size {}",
                self.q()
            )));
        }
        Ok(())
    }

    /// Full local operator `(1/q) sum_i B_{n,i}(z) + lambda z`.
    pub fn full_operator(&mut self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; z.len()];
        let q = self.q() as f64;
        for s in &self.samples {
            self.problem.op(s).eval_unreg(z)?.axpy_into(1.0 / q, &mut out);
        }
        self.counters.evals += self.samples.len() as u64;
        for (o, v) in out.iter_mut().zip(z) {
            *o += self.problem.lambda * v;
        }
        Ok(out)
    }

    fn commit(&mut self, z_next: Vec<f64>, delta: SparseVec) {
        self.z_prev = std::mem::replace(&mut self.z_curr, z_next);
        self.delta_prev = delta;
        self.round += 1;
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `sum_m w_m z_m` over `(weight, z_m)` pairs, in the given order.
pub fn mix_initial(dim: usize, neighbor_z: &[(f64, &[f64])]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    for (w, z) in neighbor_z {
        check_len(dim, z.len())?;
        for (o, v) in out.iter_mut().zip(z.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// `sum_m wt_m (2 z_m^t - z_m^{t-1})` over `(weight, z_curr, z_prev)` triples.
pub fn mix_extrapolated(dim: usize, neighbors: &[(f64, &[f64], &[f64])]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    for (w, zc, zp) in neighbors {
        check_len(dim, zc.len())?;
        check_len(dim, zp.len())?;
        for k in 0..dim {
            out[k] += w * (2.0 * zc[k] - zp[k]);
        }
    }
    Ok(out)
}

/// `psi` handed to the resolvent, given the mixed neighbour vector.
///
/// Round 0: `mix + alpha (phi_i - phi_bar)`.
/// Round t >= 1: `mix + alpha ((q-1)/q delta^{t-1} + phi_i) + alpha lambda z^t`.
pub fn psi_from_mix(state: &NodeState, mix: &[f64], alpha: f64, i: usize) -> Result<Vec<f64>> {
    state.check_index(i)?;
    check_len(state.dim(), mix.len())?;
    let mut psi = mix.to_vec();
    if state.round == 0 {
        state.table.phi[i].axpy_into(alpha, &mut psi);
        for (p, b) in psi.iter_mut().zip(&state.table.phi_bar) {
            *p -= alpha * b;
        }
    } else {
        state.delta_prev.axpy_into(alpha * state.saga_coef(), &mut psi);
        state.table.phi[i].axpy_into(alpha, &mut psi);
        let beta = alpha * state.problem.lambda;
        if beta != 0.0 {
            for (p, z) in psi.iter_mut().zip(&state.z_curr) {
                *p += beta * z;
            }
        }
    }
    Ok(psi)
}

pub fn compute_psi_initial(
    state: &NodeState,
    neighbor_z: &[(f64, &[f64])],
    alpha: f64,
    i: usize,
) -> Result<Vec<f64>> {
    if state.round != 0 {
        return Err(Error::InvalidArgument(format!(
            "initial psi requested at round {}",
            state.round
        )));
    }
    let mix = mix_initial(state.dim(), neighbor_z)?;
    psi_from_mix(state, &mix, alpha, i)
}

pub fn compute_psi(
    state: &NodeState,
    neighbors: &[(f64, &[f64], &[f64])],
    alpha: f64,
    i: usize,
) -> Result<Vec<f64>> {
    if state.round == 0 {
        return Err(Error::InvalidArgument("compute_psi needs t >= 1".into()));
    }
    let mix = mix_extrapolated(state.dim(), neighbors)?;
    psi_from_mix(state, &mix, alpha, i)
}

/// Resolvent step on a prepared `psi`; updates the table and commits the
/// iterate. Returns `(z^{t+1}, delta^t)`.
pub fn dsba_node_step(
    state: &mut NodeState,
    mut psi: Vec<f64>,
    cfg: &StepConfig,
    i: usize,
) -> Result<(Vec<f64>, SparseVec)> {
    state.check_index(i)?;
    check_len(state.dim(), psi.len())?;
    let op = state.problem.op(&state.samples[i]);
    op.resolve_in_place(cfg.alpha, &mut psi, cfg.newton_iters)?;
    let fresh = op.eval_unreg(&psi)?;
    state.counters.resolvents += 1;
    state.counters.evals += 1;
    let delta = fresh.sub(&state.table.phi[i]);
    state.table.replace(i, fresh, &delta);
    state.commit(psi.clone(), delta.clone());
    Ok((psi, delta))
}

/// Explicit DSA update on the mixed neighbour vector.
///
/// Round 0: `z^1 = mix - alpha (delta^0 + phi_bar + lambda z^0)`.
/// Round t >= 1: `z^{t+1} = mix - alpha (delta^t - (q-1)/q delta^{t-1}) - alpha lambda (z^t - z^{t-1})`,
/// where `delta^t = B_i(z^t) - phi_i`.
pub fn dsa_node_step(
    state: &mut NodeState,
    mix: &[f64],
    cfg: &StepConfig,
    i: usize,
) -> Result<(Vec<f64>, SparseVec)> {
    if cfg.variant != Variant::Dsa {
        return Err(Error::InvalidArgument(format!(
            "dsa_node_step called with variant {}",
            cfg.variant
        )));
    }
    state.check_index(i)?;
    check_len(state.dim(), mix.len())?;
    let alpha = cfg.alpha;
    let beta = alpha * state.problem.lambda;
    let fresh = state.problem.op(&state.samples[i]).eval_unreg(&state.z_curr)?;
    state.counters.evals += 1;
    let delta = fresh.sub(&state.table.phi[i]);
    let mut z = mix.to_vec();
    delta.axpy_into(-alpha, &mut z);
    if state.round == 0 {
        for k in 0..z.len() {
            z[k] -= alpha * state.table.phi_bar[k] + beta * state.z_curr[k];
        }
    } else {
        state.delta_prev.axpy_into(alpha * state.saga_coef(), &mut z);
        if beta != 0.0 {
            for k in 0..z.len() {
                z[k] -= beta * (state.z_curr[k] - state.z_prev[k]);
            }
        }
    }
    state.table.replace(i, fresh, &delta);
    state.commit(z.clone(), delta.clone());
    Ok((z, delta))
}

/// One local update for DSBA or DSA given the mixed vector. The sample index
/// is drawn from the node's stream.
pub fn local_step(state: &mut NodeState, mix: &[f64], cfg: &StepConfig) -> Result<(Vec<f64>, SparseVec)> {
    let i = state.draw_index();
    match cfg.variant {
        Variant::Dsba | Variant::PointSaga => {
            let psi = psi_from_mix(state, mix, cfg.alpha, i)?;
            dsba_node_step(state, psi, cfg, i)
        }
        Variant::Dsa => dsa_node_step(state, mix, cfg, i),
        Variant::Extra => Err(Error::InvalidArgument(
            "EXTRA is a full-batch round; use extra_round".into(),
        )),
    }
}

/// Point-SAGA: the DSBA step on a single node (`W = Wt = [1]`).
pub fn pointsaga_step(
    state: &mut NodeState,
    n_nodes: usize,
    cfg: &StepConfig,
    i: usize,
) -> Result<(Vec<f64>, SparseVec)> {
    if n_nodes != 1 {
        return Err(Error::InvalidArgument(format!(
            "Point-SAGA needs a single node, got {n_nodes}"
        )));
    }
    let z = state.z_curr.clone();
    let psi = if state.round == 0 {
        compute_psi_initial(state, &[(1.0, &z)], cfg.alpha, i)?
    } else {
        let zp = state.z_prev.clone();
        compute_psi(state, &[(1.0, &z, &zp)], cfg.alpha, i)?
    };
    dsba_node_step(state, psi, cfg, i)
}

/// Synchronous full-batch EXTRA round over all nodes.
///
/// `Z^1 = W Z^0 - alpha B(Z^0)`,
/// `Z^{t+1} = 2 Wt Z^t - Wt Z^{t-1} - alpha (B(Z^t) - B(Z^{t-1}))`.
pub fn extra_round(
    states: &mut [NodeState],
    w: &nalgebra::DMatrix<f64>,
    w_tilde: &nalgebra::DMatrix<f64>,
    alpha: f64,
) -> Result<()> {
    let n = states.len();
    if w.nrows() != n || w_tilde.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.nrows(),
        });
    }
    let dim = states[0].dim();
    let round = states[0].round;
    let mut next = Vec::with_capacity(n);
    let mut fulls = Vec::with_capacity(n);
    for k in 0..n {
        let full = states[k].full_operator(&states[k].z_curr.clone())?;
        let mut z = if round == 0 {
            let pairs: Vec<(f64, &[f64])> = (0..n)
                .filter(|&m| w[(k, m)] != 0.0)
                .map(|m| (w[(k, m)], states[m].z_curr.as_slice()))
                .collect();
            mix_initial(dim, &pairs)?
        } else {
            let triples: Vec<(f64, &[f64], &[f64])> = (0..n)
                .filter(|&m| w_tilde[(k, m)] != 0.0)
                .map(|m| (w_tilde[(k, m)], states[m].z_curr.as_slice(), states[m].z_prev.as_slice()))
                .collect();
            mix_extrapolated(dim, &triples)?
        };
        match &states[k].full_prev {
            Some(prev) if round > 0 => {
                for j in 0..dim {
                    z[j] -= alpha * (full[j] - prev[j]);
                }
            }
            _ => {
                for j in 0..dim {
                    z[j] -= alpha * full[j];
                }
            }
        }
        next.push(z);
        fulls.push(full);
    }
    for ((s, z), full) in states.iter_mut().zip(next).zip(fulls) {
        s.full_prev = Some(full);
        let dim = s.dim();
        s.commit(z, SparseVec::zeros(dim));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::Family;
    use approx::assert_abs_diff_eq;

    fn ridge_shard() -> Vec<Sample> {
        vec![
            Sample {
                features: SparseVec::new(2, vec![0], vec![1.0]),
                label: 1.0,
                line: 1,
            },
            Sample {
                features: SparseVec::new(2, vec![1], vec![1.0]),
                label: -1.0,
                line: 2,
            },
        ]
    }

    #[test]
    fn step_size_examples() {
        assert_abs_diff_eq!(step_size_bound(1.0).unwrap(), 1.0 / 24.0);
        assert_abs_diff_eq!(step_size_bound(24.0).unwrap(), 1.0 / 576.0);
        assert!(step_size_bound(0.0).is_err());
        assert!(step_size_bound(-1.0).is_err());
    }

    #[test]
    fn init_fills_table_at_z0() {
        let pb = Problem::new(Family::Ridge, 0.5, 0.0);
        let s = init_node(0, ridge_shard(), &[0.0, 0.0], pb, 7).unwrap();
        assert_eq!(s.table.phi[0].to_dense(), vec![-1.0, 0.0]);
        assert_eq!(s.table.phi[1].to_dense(), vec![0.0, 1.0]);
        assert_eq!(s.table.phi_bar, vec![-0.5, 0.5]);
        assert_eq!(s.delta_prev.nnz(), 0);
        assert!(init_node(0, vec![], &[0.0, 0.0], pb, 7).is_err());
    }

    #[test]
    fn single_sample_table_mean_is_entry() {
        let pb = Problem::new(Family::Ridge, 0.5, 0.0);
        let s = init_node(0, ridge_shard()[..1].to_vec(), &[0.3, 0.0], pb, 7).unwrap();
        assert_eq!(s.table.phi_bar, s.table.phi[0].to_dense());
    }

    #[test]
    fn psi_initial_single_node() {
        let pb = Problem::new(Family::Ridge, 0.5, 0.0);
        let s = init_node(0, ridge_shard(), &[0.0, 0.0], pb, 7).unwrap();
        let z = s.z_curr.clone();
        let psi = compute_psi_initial(&s, &[(1.0, &z)], 0.5, 0).unwrap();
        // phi_0 - phi_bar = (-0.5, -0.5)
        assert_eq!(psi, vec![-0.25, -0.25]);
    }

    #[test]
    fn fixed_point_at_optimum() {
        // z* = (1, -1) zeroes both components.
        let pb = Problem::new(Family::Ridge, 0.5, 0.0);
        let mut s = init_node(0, ridge_shard(), &[1.0, -1.0], pb, 3).unwrap();
        let cfg = StepConfig::new(0.1, Variant::Dsba).unwrap();
        for _ in 0..20 {
            let i = s.draw_index();
            let (z, d) = pointsaga_step(&mut s, 1, &cfg, i).unwrap();
            assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(z[1], -1.0, epsilon = 1e-15);
            assert!(d.norm() < 1e-15);
        }
    }

    #[test]
    fn pointsaga_rejects_many_nodes() {
        let pb = Problem::new(Family::Ridge, 0.5, 0.0);
        let mut s = init_node(0, ridge_shard(), &[0.0, 0.0], pb, 3).unwrap();
        let cfg = StepConfig::new(0.1, Variant::PointSaga).unwrap();
        assert!(pointsaga_step(&mut s, 2, &cfg, 0).is_err());
    }

    #[test]
    fn dsa_variant_mismatch() {
        let pb = Problem::new(Family::Ridge, 0.5, 0.0);
        let mut s = init_node(0, ridge_shard(), &[0.0, 0.0], pb, 3).unwrap();
        let cfg = StepConfig::new(0.1, Variant::Dsba).unwrap();
        assert!(dsa_node_step(&mut s, &[0.0, 0.0], &cfg, 0).is_err());
    }

    #[test]
    fn dsa_single_node_is_saga() {
        let pb = Problem::new(Family::Ridge, 0.5, 0.0);
        let mut s = init_node(0, ridge_shard(), &[0.2, 0.4], pb, 3).unwrap();
        let cfg = StepConfig::new(0.1, Variant::Dsa).unwrap();
        let z = s.z_curr.clone();
        let phi_i = s.table.phi[1].to_dense();
        let bar = s.table.phi_bar.clone();
        let g = pb.op(&s.samples[1]).eval(&z).unwrap();
        let (out, _) = dsa_node_step(&mut s, &z, &cfg, 1).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(out[k], z[k] - 0.1 * (g[k] - phi_i[k] + bar[k]), epsilon = 1e-15);
        }
    }

    #[test]
    fn table_replace_tracks_mean() {
        let pb = Problem::new(Family::Ridge, 0.5, 0.0);
        let mut s = init_node(0, ridge_shard(), &[0.0, 0.0], pb, 3).unwrap();
        let cfg = StepConfig::new(0.3, Variant::Dsba).unwrap();
        for _ in 0..7 {
            let i = s.draw_index();
            pointsaga_step(&mut s, 1, &cfg, i).unwrap();
            assert!(s.table.mean_drift() < 1e-10);
        }
    }
}
