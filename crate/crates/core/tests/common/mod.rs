#![allow(dead_code)]

use dsba::dataset::{partition, synthetic, SyntheticKind, SyntheticSpec};
use dsba::simulator::{CommMode, Experiment, Simulation};
use dsba::topology::{Graph, TauMode};
use dsba::{Family, StepConfig, Variant};

pub fn ridge_experiment(graph: Graph, q: usize, dim: usize, density: f64, seed: u64) -> Experiment {
    let n = graph.n_nodes();
    let (samples, d) = synthetic(&SyntheticSpec {
        kind: SyntheticKind::Regression,
        n_samples: q * n,
        dim,
        density,
        noise: 0.1,
        seed,
    })
    .unwrap();
    let shards = partition(samples, d, n, seed).unwrap();
    Experiment::new(graph, TauMode::Spectral, shards, Family::Ridge, None, seed).unwrap()
}

pub fn classification_experiment(graph: Graph, family: Family, q: usize, dim: usize, density: f64, seed: u64) -> Experiment {
    let n = graph.n_nodes();
    let (samples, d) = synthetic(&SyntheticSpec {
        kind: SyntheticKind::Classification,
        n_samples: q * n,
        dim,
        density,
        noise: 0.0,
        seed,
    })
    .unwrap();
    let shards = partition(samples, d, n, seed).unwrap();
    Experiment::new(graph, TauMode::Spectral, shards, family, None, seed).unwrap()
}

pub fn diamond() -> Graph {
    Graph::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap()
}

pub fn sim<'a>(exp: &'a Experiment, variant: Variant, alpha: f64, comm: CommMode) -> Simulation<'a> {
    let cfg = StepConfig::new(alpha, variant).unwrap();
    Simulation::new(exp, cfg, comm, false).unwrap()
}

/// Largest entrywise gap between the two runs over `rounds` rounds.
pub fn max_dense_sparse_gap(exp: &Experiment, variant: Variant, alpha: f64, rounds: usize) -> f64 {
    let mut dense = sim(exp, variant, alpha, CommMode::Dense);
    let mut sparse = sim(exp, variant, alpha, CommMode::Sparse);
    let mut worst: f64 = 0.0;
    for _ in 0..rounds {
        dense.step().unwrap();
        sparse.step().unwrap();
        let gap = (dense.z_matrix() - sparse.z_matrix()).abs().max();
        worst = worst.max(gap);
    }
    worst
}
