mod common;

use common::*;
use dsba::dataset::{partition, synthetic, SyntheticKind, SyntheticSpec};
use dsba::simulator::{CommMode, Experiment};
use dsba::topology::{gen_random_graph, Graph, TauMode};
use dsba::{Family, Variant};

#[test]
fn dense_and_sparse_agree_on_small_topologies() {
    for (name, g) in [("k3", Graph::complete(3)), ("path4", Graph::path(4)), ("diamond", diamond())] {
        let exp = ridge_experiment(g, 20, 50, 0.1, 11);
        let alpha = exp.default_alpha().unwrap();
        let gap = max_dense_sparse_gap(&exp, Variant::Dsba, alpha, 300);
        assert!(gap <= 1e-9, "{name}: gap {gap}");
    }
}

#[test]
fn dsa_runs_through_the_same_protocol() {
    let exp = ridge_experiment(Graph::path(5), 15, 30, 0.2, 4);
    let alpha = exp.default_alpha().unwrap();
    let gap = max_dense_sparse_gap(&exp, Variant::Dsa, alpha, 200);
    assert!(gap <= 1e-9, "gap {gap}");
}

#[test]
fn strong_regularization_and_random_graph() {
    let g = gen_random_graph(8, 0.3, 5).unwrap();
    let (samples, d) = synthetic(&SyntheticSpec {
        kind: SyntheticKind::Regression,
        n_samples: 80,
        dim: 25,
        density: 0.2,
        noise: 0.1,
        seed: 9,
    })
    .unwrap();
    let shards = partition(samples, d, 8, 9).unwrap();
    let exp = Experiment::new(g, TauMode::Spectral, shards, Family::Ridge, Some(0.5), 9).unwrap();
    let alpha = exp.default_alpha().unwrap();
    for v in [Variant::Dsba, Variant::Dsa] {
        let gap = max_dense_sparse_gap(&exp, v, alpha, 150);
        assert!(gap <= 1e-9, "{v}: gap {gap}");
    }
}

#[test]
fn logistic_and_auc_agree() {
    for fam in [Family::Logistic, Family::Auc] {
        let exp = classification_experiment(diamond(), fam, 15, 20, 0.2, 3);
        let alpha = exp.default_alpha().unwrap();
        let gap = max_dense_sparse_gap(&exp, Variant::Dsba, alpha, 120);
        assert!(gap <= 1e-9, "{fam:?}: gap {gap}");
    }
}

#[test]
fn extra_rejects_sparse_mode() {
    let exp = ridge_experiment(Graph::complete(3), 5, 5, 0.4, 1);
    let cfg = dsba::StepConfig::new(0.01, Variant::Extra).unwrap();
    assert!(dsba::Simulation::new(&exp, cfg, CommMode::Sparse, false).is_err());
}
