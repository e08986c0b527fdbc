//! Sparse-communication execution (DSBA-s).
//!
//! Only sparse `delta` packets travel after a short dense warm-up. Each node
//! acts as an observer `o` that rebuilds the mixed vector
//! `[Wt]_o (2 Z^t - Z^{t-1})` from delayed information:
//!
//! * `delta_n^s` produced at the end of round `s` reaches `o` at round
//!   `s + xi_n(o)`, relayed along shortest paths;
//! * `o` keeps full copies of `Z^{t-E}` and `Z^{t-E-1}` and the row powers
//!   `X_tau^{t-tau} = [Wt^tau]_o Z^{t-tau}` for `tau in 1..=E`.
//!
//! With `kappa`, `A1`, `A2` from the dense recursion
//! `kappa Z^{s+1} = A1 Z^s + A2 Z^{s-1} + alpha (C D^{s-1} - D^s)`,
//! each round first advances the full copy by one step and then runs the
//! row-power recursion from `tau = E` down to `tau = 1`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algorithms::{local_step, NodeState, StepConfig, Variant};
use crate::error::{Error, Result};
use crate::sparse::SparseVec;
use crate::topology::{distance_map, Graph};

/// Relay plan for one observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaySchedule {
    pub observer: usize,
    /// `layers[j]` holds the nodes at distance `j` from the observer.
    pub layers: Vec<Vec<usize>>,
    pub xi: Vec<usize>,
    /// Neighbour of the observer that hands over deltas from each origin.
    /// `None` for the observer itself.
    pub relay_of: Vec<Option<usize>>,
}

impl RelaySchedule {
    pub fn diameter(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }
}

/// All-pairs hop distances by repeated BFS.
pub fn distance_matrix(g: &Graph) -> Result<Vec<Vec<usize>>> {
    (0..g.n_nodes())
        .map(|r| distance_map(g, r).map(|m| m.xi))
        .collect()
}

/// Builds the relay plan of every observer. The relay for origin `n` at
/// observer `o` is the smallest-index neighbour of `o` one hop closer to `n`.
pub fn build_schedule(g: &Graph) -> Result<Vec<RelaySchedule>> {
    let dist = distance_matrix(g)?;
    let n = g.n_nodes();
    let mut out = Vec::with_capacity(n);
    for o in 0..n {
        let xi = dist[o].clone();
        let depth = xi.iter().copied().max().unwrap_or(0);
        let mut layers = vec![Vec::new(); depth + 1];
        for (v, &j) in xi.iter().enumerate() {
            layers[j].push(v);
        }
        let relay_of = (0..n)
            .map(|origin| {
                if origin == o {
                    return None;
                }
                let target = dist[origin][o] - 1;
                g.neighbors(o)
                    .iter()
                    .copied()
                    .filter(|&m| dist[origin][m] == target)
                    .min()
            })
            .collect();
        out.push(RelaySchedule {
            observer: o,
            layers,
            xi,
            relay_of,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPacket {
    pub origin: usize,
    pub round: usize,
    pub payload: SparseVec,
}

/// Size of one packet on the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketCost {
    /// 64-bit payload values.
    pub values: u64,
    /// Indices plus the `(origin, round)` header.
    pub metadata: u64,
}

pub fn pack_delta(delta: SparseVec, origin: usize, round: usize) -> (DeltaPacket, PacketCost) {
    let nnz = delta.nnz() as u64;
    (
        DeltaPacket {
            origin,
            round,
            payload: delta,
        },
        PacketCost {
            values: nnz,
            metadata: nnz + 2,
        },
    )
}

/// One forwarded packet, for protocol audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Round in which `dest` receives the packet.
    pub round: usize,
    pub origin: usize,
    pub relay: usize,
    pub dest: usize,
    pub nnz: usize,
}

pub const TRACE_HEADER: &str = "round,origin,relay,dest,nnz";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.round, r.origin, r.relay, r.dest, r.nnz));
    }
    s
}

/// Received/sent value counters per node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommStats {
    pub received: Vec<u64>,
    pub received_metadata: Vec<u64>,
    pub sent: Vec<u64>,
    /// Values received in the most recent round.
    pub last_round: Vec<u64>,
    pub last_round_sent: Vec<u64>,
}

impl CommStats {
    pub fn new(n_nodes: usize) -> Self {
        CommStats {
            received: vec![0; n_nodes],
            received_metadata: vec![0; n_nodes],
            sent: vec![0; n_nodes],
            last_round: vec![0; n_nodes],
            last_round_sent: vec![0; n_nodes],
        }
    }

    pub fn begin_round(&mut self) {
        self.last_round.iter_mut().for_each(|v| *v = 0);
        self.last_round_sent.iter_mut().for_each(|v| *v = 0);
    }

    pub fn transfer(&mut self, from: usize, to: usize, cost: PacketCost) {
        self.received[to] += cost.values;
        self.received_metadata[to] += cost.metadata;
        self.last_round[to] += cost.values;
        self.sent[from] += cost.values;
        self.last_round_sent[from] += cost.values;
    }

    /// Every node receives full iterates from its neighbours.
    pub fn record_dense_round(&mut self, g: &Graph, dim: usize) {
        for n in 0..g.n_nodes() {
            for &m in g.neighbors(n) {
                self.transfer(
                    m,
                    n,
                    PacketCost {
                        values: dim as u64,
                        metadata: 0,
                    },
                );
            }
        }
    }

    /// Every node receives the full iterate of every other node.
    pub fn record_all_gather(&mut self, dim: usize) {
        let n = self.received.len();
        for to in 0..n {
            for from in (0..n).filter(|&f| f != to) {
                self.transfer(
                    from,
                    to,
                    PacketCost {
                        values: dim as u64,
                        metadata: 0,
                    },
                );
            }
        }
    }

    /// `C_max`: the largest cumulative receive count over nodes.
    pub fn c_max(&self) -> u64 {
        self.received.iter().copied().max().unwrap_or(0)
    }

    /// Dense-mode per-round ceiling `max_degree * dim`.
    pub fn dense_ceiling(g: &Graph, dim: usize) -> u64 {
        (g.max_degree() * dim) as u64
    }
}

/// Synchronous lossless relay network for delta packets.
#[derive(Debug, Clone)]
pub struct Network {
    pub schedules: Vec<RelaySchedule>,
    neighbors: Vec<Vec<usize>>,
    /// Packets arriving at the start of the next round, per destination.
    pending: Vec<Vec<DeltaPacket>>,
    pub trace: Option<Vec<TraceRow>>,
}

impl Network {
    pub fn new(g: &Graph, record_trace: bool) -> Result<Self> {
        let n = g.n_nodes();
        Ok(Network {
            schedules: build_schedule(g)?,
            neighbors: (0..n).map(|v| g.neighbors(v).to_vec()).collect(),
            pending: vec![Vec::new(); n],
            trace: record_trace.then(Vec::new),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn diameter(&self) -> usize {
        self.schedules.iter().map(|s| s.diameter()).max().unwrap_or(0)
    }

    /// Packets delivered at the start of this round.
    pub fn take_inbox(&mut self) -> Vec<Vec<DeltaPacket>> {
        let n = self.n_nodes();
        std::mem::replace(&mut self.pending, vec![Vec::new(); n])
    }

    /// End-of-round forwarding: each node passes on what it received this
    /// round and its own fresh delta, to every neighbour it relays for.
    /// `arrival_round` is the round in which the forwarded packets land.
    pub fn dispatch(
        &mut self,
        arrival_round: usize,
        inbox: &[Vec<DeltaPacket>],
        produced: Vec<DeltaPacket>,
        stats: &mut CommStats,
    ) {
        for (m, own) in produced.into_iter().enumerate() {
            let mut outgoing: Vec<&DeltaPacket> = inbox[m].iter().collect();
            outgoing.push(&own);
            for pkt in outgoing {
                for &dest in &self.neighbors[m] {
                    if self.schedules[dest].relay_of[pkt.origin] == Some(m) {
                        let (copy, cost) = pack_delta(pkt.payload.clone(), pkt.origin, pkt.round);
                        stats.transfer(m, dest, cost);
                        if let Some(t) = self.trace.as_mut() {
                            t.push(TraceRow {
                                round: arrival_round,
                                origin: pkt.origin,
                                relay: m,
                                dest,
                                nnz: copy.payload.nnz(),
                            });
                        }
                        self.pending[dest].push(copy);
                    }
                }
            }
        }
    }
}

/// Coefficients of `kappa Z^{s+1} = A1 Z^s + A2 Z^{s-1} + alpha (C D^{s-1} - D^s)`
/// with `A1 = 2 Wt + a_self I` and `A2 = -Wt + b_self I`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Recursion {
    kappa: f64,
    a_self: f64,
    b_self: f64,
}

impl Recursion {
    fn new(variant: Variant, beta: f64) -> Result<Self> {
        match variant {
            Variant::Dsba | Variant::PointSaga => Ok(Recursion {
                kappa: 1.0 + beta,
                a_self: beta,
                b_self: 0.0,
            }),
            Variant::Dsa => Ok(Recursion {
                kappa: 1.0,
                a_self: -beta,
                b_self: beta,
            }),
            Variant::Extra => Err(Error::InvalidArgument(
                "EXTRA sends full gradients; sparse communication does not apply".into(),
            )),
        }
    }
}

/// Delayed global state held by one observer.
#[derive(Debug, Clone)]
pub struct ObserverMemory {
    pub observer: usize,
    e: usize,
    rec: Recursion,
    alpha: f64,
    /// `(q_n - 1) / q_n` per node.
    coef: Vec<f64>,
    xi: Vec<usize>,
    /// `Z^{t-E}` and `Z^{t-E-1}`, one row per node.
    z_old: DMatrix<f64>,
    z_older: DMatrix<f64>,
    /// `old[tau - 1] = X_tau^{t - tau}`.
    old: Vec<Vec<f64>>,
    /// `older[tau - 1] = X_tau^{t - tau - 1}`; empty unless `b_self != 0`.
    older: Vec<Vec<f64>>,
    log: BTreeMap<usize, Vec<Option<SparseVec>>>,
    /// Round this memory is ready for.
    pub round: usize,
}

fn row_times(powers: &DMatrix<f64>, o: usize, z: &DMatrix<f64>) -> Vec<f64> {
    (z.transpose() * powers.row(o).transpose()).as_slice().to_vec()
}

/// Seeds every observer's memory from the dense warm-up history
/// `Z^0, ..., Z^E` and the deltas seen so far. The memory is ready for round
/// `E + 1`.
pub fn bootstrap(
    history: &[DMatrix<f64>],
    powers: &[DMatrix<f64>],
    schedules: &[RelaySchedule],
    qs: &[usize],
    cfg: &StepConfig,
    lambda: f64,
) -> Result<Vec<ObserverMemory>> {
    let e = schedules.iter().map(|s| s.diameter()).max().unwrap_or(0);
    if history.len() != e + 1 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs Z^0..Z^E ({} matrices), got {}",
            e + 1,
            history.len()
        )));
    }
    if powers.len() < e + 1 {
        return Err(Error::InvalidArgument(format!(
            "need Wt powers up to {e}, got {}",
            powers.len().saturating_sub(1)
        )));
    }
    let rec = Recursion::new(cfg.variant, cfg.alpha * lambda)?;
    let coef: Vec<f64> = qs.iter().map(|&q| (q as f64 - 1.0) / q as f64).collect();
    let t = e + 1;
    let mut out = Vec::with_capacity(schedules.len());
    for s in schedules {
        let o = s.observer;
        let (old, older) = if e == 0 {
            (Vec::new(), Vec::new())
        } else {
            let old = (1..=e).map(|tau| row_times(&powers[tau], o, &history[t - tau])).collect();
            let older = if rec.b_self != 0.0 {
                (1..=e)
                    .map(|tau| row_times(&powers[tau], o, &history[t - tau - 1]))
                    .collect()
            } else {
                Vec::new()
            };
            (old, older)
        };
        let z_old = history[t.saturating_sub(e)].clone();
        let z_older = history[(t - e).saturating_sub(1)].clone();
        out.push(ObserverMemory {
            observer: o,
            e,
            rec,
            alpha: cfg.alpha,
            coef: coef.clone(),
            xi: s.xi.clone(),
            z_old,
            z_older,
            old,
            older,
            log: BTreeMap::new(),
            round: t,
        });
    }
    Ok(out)
}

impl ObserverMemory {
    pub fn diameter(&self) -> usize {
        self.e
    }

    /// Records a delta (received or own).
    pub fn record(&mut self, origin: usize, round: usize, delta: SparseVec) {
        let n = self.coef.len();
        self.log.entry(round).or_insert_with(|| vec![None; n])[origin] = Some(delta);
    }

    fn delta(&self, origin: usize, round: usize) -> Result<&SparseVec> {
        self.log
            .get(&round)
            .and_then(|r| r[origin].as_ref())
            .ok_or(Error::MissingPacket {
                observer: self.observer,
                origin,
                round,
            })
    }

    /// `sum_n weight_n (c_n delta_n^{s-1} - delta_n^s)` over nodes with
    /// `xi_n <= max_xi`, added into `acc` scaled by `alpha / kappa`.
    fn add_delta_term(&self, acc: &mut [f64], weights: impl Fn(usize) -> f64, s: usize, max_xi: usize) -> Result<()> {
        let scale = self.alpha;
        for n in 0..self.coef.len() {
            if self.xi[n] > max_xi {
                continue;
            }
            let w = weights(n);
            if w == 0.0 {
                continue;
            }
            if s >= 1 {
                self.delta(n, s - 1)?.axpy_into(scale * w * self.coef[n], acc);
            }
            self.delta(n, s)?.axpy_into(-scale * w, acc);
        }
        Ok(())
    }

    /// Advances the full copy: returns `Z^{s+1}` given `Z^s = z_old`,
    /// `Z^{s-1} = z_older`.
    fn advance_full(&self, w_tilde: &DMatrix<f64>, s: usize) -> Result<DMatrix<f64>> {
        let rec = self.rec;
        let mut z = w_tilde * (&self.z_old * 2.0 - &self.z_older);
        z += &self.z_old * rec.a_self;
        if rec.b_self != 0.0 {
            z += &self.z_older * rec.b_self;
        }
        let dim = z.ncols();
        let mut row = vec![0.0; dim];
        for n in 0..self.coef.len() {
            row.iter_mut().for_each(|v| *v = 0.0);
            self.add_delta_term(&mut row, |m| if m == n { 1.0 } else { 0.0 }, s, usize::MAX)?;
            for k in 0..dim {
                z[(n, k)] = (z[(n, k)] + row[k]) / rec.kappa;
            }
        }
        Ok(z)
    }

    /// Mixed vector `[Wt]_o (2 Z^t - Z^{t-1})` for the current round, and
    /// the memory advanced past it.
    pub fn mixed_vector(&mut self, powers: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        let t = self.round;
        let e = self.e;
        let o = self.observer;
        if e == 0 {
            return Err(Error::InvalidArgument("single-node network needs no mixing".into()));
        }
        let s = t - e;
        let z_next = self.advance_full(&powers[1], s)?;
        let rec = self.rec;
        let mut new = vec![Vec::new(); e];
        new[e - 1] = row_times(&powers[e], o, &z_next);
        for tau in (1..e).rev() {
            let pw = &powers[tau];
            let mut v: Vec<f64> = (0..new[tau].len())
                .map(|k| {
                    let mut x = 2.0 * new[tau][k] + rec.a_self * self.old[tau - 1][k] - self.old[tau][k];
                    if rec.b_self != 0.0 {
                        x += rec.b_self * self.older[tau - 1][k];
                    }
                    x
                })
                .collect();
            self.add_delta_term(&mut v, |n| pw[(o, n)], t - tau, tau)?;
            v.iter_mut().for_each(|x| *x /= rec.kappa);
            new[tau - 1] = v;
        }
        let mix: Vec<f64> = new[0]
            .iter()
            .zip(&self.old[0])
            .map(|(a, b)| 2.0 * a - b)
            .collect();

        if rec.b_self != 0.0 {
            self.older = std::mem::replace(&mut self.old, new);
        } else {
            self.old = new;
        }
        self.z_older = std::mem::replace(&mut self.z_old, z_next);
        self.round = t + 1;
        let keep_from = (t + 1).saturating_sub(e + 1);
        self.log = self.log.split_off(&keep_from);
        Ok(mix)
    }

    /// Doubles held: two full iterate copies, the row powers and the log.
    pub fn memory_doubles(&self) -> usize {
        let full = self.z_old.len() + self.z_older.len();
        let rows: usize = self.old.iter().chain(&self.older).map(|v| v.len()).sum();
        let log: usize = self
            .log
            .values()
            .flat_map(|r| r.iter().flatten())
            .map(|d| d.nnz())
            .sum();
        full + rows + log
    }
}

/// One sparse-mode round at observer `o`: absorb the inbox, rebuild the
/// mixed vector, take the local step and log the fresh delta.
pub fn observer_round(
    mem: &mut ObserverMemory,
    inbox: &[DeltaPacket],
    local: &mut NodeState,
    powers: &[DMatrix<f64>],
    cfg: &StepConfig,
) -> Result<(Vec<f64>, SparseVec)> {
    if local.id != mem.observer {
        return Err(Error::InvalidArgument(format!(
            "memory of observer {} used for node {}",
            mem.observer, local.id
        )));
    }
    if local.round != mem.round {
        return Err(Error::InvalidArgument(format!(
            "node at round {} but memory at round {}",
            local.round, mem.round
        )));
    }
    for p in inbox {
        mem.record(p.origin, p.round, p.payload.clone());
    }
    let t = mem.round;
    let mix = mem.mixed_vector(powers)?;
    let (z, delta) = local_step(local, &mix, cfg)?;
    mem.record(local.id, t, delta.clone());
    Ok((z, delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_schedule() {
        let g = Graph::path(3);
        let s = build_schedule(&g).unwrap();
        assert_eq!(s[0].layers, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(s[0].relay_of, vec![None, Some(1), Some(1)]);
        assert_eq!(s[1].diameter(), 1);
    }

    #[test]
    fn complete_schedule_is_direct() {
        let s = build_schedule(&Graph::complete(3)).unwrap();
        assert_eq!(s[0].relay_of, vec![None, Some(1), Some(2)]);
        assert_eq!(s[0].layers, vec![vec![0], vec![1, 2]]);
    }

    #[test]
    fn diamond_tie_break() {
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        let s = build_schedule(&g).unwrap();
        assert_eq!(s[0].relay_of[3], Some(1));
        assert_eq!(s[3].relay_of[0], Some(1));
    }

    #[test]
    fn pack_costs() {
        let (p, c) = pack_delta(SparseVec::new(10, vec![1, 4, 7], vec![1.0, 2.0, 3.0]), 2, 5);
        assert_eq!((c.values, c.metadata), (3, 5));
        assert_eq!((p.origin, p.round), (2, 5));
        let (_, c) = pack_delta(SparseVec::zeros(10), 0, 0);
        assert_eq!(c.values, 0);
        let (_, c) = pack_delta(SparseVec::from_dense(&[1.0; 6]), 0, 0);
        assert_eq!(c.values, 6);
    }

    #[test]
    fn star_dense_accounting() {
        let g = Graph::from_edges(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]).unwrap();
        let mut st = CommStats::new(6);
        st.begin_round();
        st.record_dense_round(&g, 100);
        assert_eq!(st.last_round[0], 500);
        assert_eq!(st.last_round[3], 100);
        assert_eq!(CommStats::dense_ceiling(&g, 100), 500);
        let sent: u64 = st.last_round_sent.iter().sum();
        let recv: u64 = st.last_round.iter().sum();
        assert_eq!(sent, recv);
    }

    #[test]
    fn path_delivery_timing() {
        let g = Graph::path(3);
        let mut net = Network::new(&g, true).unwrap();
        let mut stats = CommStats::new(3);
        let mut seen = vec![vec![None; 3]; 3];
        for round in 0..4 {
            let inbox = net.take_inbox();
            for (dest, pk) in inbox.iter().enumerate() {
                for p in pk {
                    assert!(seen[dest][p.origin].is_none() || p.round > 0);
                    if p.round == 0 {
                        seen[dest][p.origin] = Some(round);
                    }
                }
            }
            let produced = (0..3)
                .map(|n| pack_delta(SparseVec::from_dense(&[1.0]), n, round).0)
                .collect();
            net.dispatch(round + 1, &inbox, produced, &mut stats);
        }
        assert_eq!(seen[0][2], Some(2));
        assert_eq!(seen[0][1], Some(1));
        assert_eq!(seen[1][0], Some(1));
        let via: Vec<_> = net
            .trace
            .unwrap()
            .into_iter()
            .filter(|r| r.origin == 2 && r.dest == 0)
            .map(|r| r.relay)
            .collect();
        assert!(via.iter().all(|&r| r == 1));
    }
}
