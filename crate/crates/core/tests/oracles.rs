mod common;

use common::*;
use dsba::algorithms::node_rng;
use dsba::dataset::{partition, synthetic, SyntheticKind, SyntheticSpec};
use dsba::simulator::{CommMode, Experiment};
use dsba::topology::{distance_map, gen_random_graph, Graph, TauMode};
use dsba::{Family, Variant};
use nalgebra::DMatrix;
use rand::Rng;

fn ridge_with_lambda(graph: Graph, q: usize, dim: usize, lambda: f64, seed: u64) -> Experiment {
    let n = graph.n_nodes();
    let (samples, d) = synthetic(&SyntheticSpec {
        kind: SyntheticKind::Regression,
        n_samples: q * n,
        dim,
        density: 0.5,
        noise: 0.1,
        seed,
    })
    .unwrap();
    let shards = partition(samples, d, n, seed).unwrap();
    Experiment::new(graph, TauMode::Spectral, shards, Family::Ridge, Some(lambda), seed).unwrap()
}

fn stacked_operator(exp: &Experiment, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(z.nrows(), z.ncols());
    for (n, shard) in exp.shards.per_node.iter().enumerate() {
        let row: Vec<f64> = z.row(n).iter().copied().collect();
        let q = shard.len() as f64;
        for s in shard {
            let b = exp.problem.op(s).eval(&row).unwrap();
            for j in 0..row.len() {
                out[(n, j)] += b[j] / q;
            }
        }
    }
    out
}

fn delta_matrix(sim: &dsba::Simulation<'_>) -> DMatrix<f64> {
    let n = sim.states.len();
    let d = sim.exp.dim;
    let mut out = DMatrix::zeros(n, d);
    for (k, st) in sim.states.iter().enumerate() {
        for (j, v) in st.delta_prev.iter() {
            out[(k, j)] = v;
        }
    }
    out
}

#[test]
fn point_saga_matches_classic_form() {
    let exp = ridge_with_lambda(Graph::complete(1), 25, 4, 0.0, 11);
    let alpha = exp.default_alpha().unwrap() * 3.0;
    let mut s = sim(&exp, Variant::PointSaga, alpha, CommMode::Dense);

    let shard = &exp.shards.per_node[0];
    let q = shard.len() as f64;
    let mut rng = node_rng(exp.seed, 0);
    let mut z = exp.z0.clone();
    let mut table: Vec<Vec<f64>> = shard.iter().map(|x| exp.problem.op(x).eval(&z).unwrap()).collect();
    for _ in 0..500 {
        let j = rng.gen_range(0..shard.len());
        let mean: Vec<f64> = (0..z.len()).map(|k| table.iter().map(|g| g[k]).sum::<f64>() / q).collect();
        let psi: Vec<f64> = (0..z.len()).map(|k| z[k] + alpha * (table[j][k] - mean[k])).collect();
        let op = exp.problem.op(&shard[j]);
        z = op.resolve(alpha, &psi, 20).unwrap();
        table[j] = op.eval(&z).unwrap();

        s.step().unwrap();
        for k in 0..z.len() {
            assert!((s.states[0].z_curr[k] - z[k]).abs() < 1e-9);
        }
    }
}

#[test]
fn extra_matches_stacked_recursion() {
    let exp = ridge_with_lambda(diamond(), 6, 5, 0.3, 12);
    let alpha = exp.default_alpha().unwrap();
    let mut s = sim(&exp, Variant::Extra, alpha, CommMode::Dense);
    let w = &exp.mixing.w;
    let wt = &exp.mixing.w_tilde;
    let z0 = DMatrix::from_fn(4, exp.dim, |_, j| exp.z0[j]);
    let mut prev = z0.clone();
    let mut cur = w * &z0 - stacked_operator(&exp, &z0) * alpha;
    s.step().unwrap();
    assert!((s.z_matrix() - &cur).abs().max() < 1e-12);
    for _ in 0..100 {
        let next = wt * &cur * 2.0 - wt * &prev - (stacked_operator(&exp, &cur) - stacked_operator(&exp, &prev)) * alpha;
        prev = cur;
        cur = next;
        s.step().unwrap();
        assert!((s.z_matrix() - &cur).abs().max() < 1e-10);
    }
    assert_eq!(s.effective_passes(), 101.0);
}

fn check_stacked_form(variant: Variant) {
    let exp = ridge_with_lambda(Graph::path(4), 5, 6, 0.4, 13);
    let alpha = exp.default_alpha().unwrap() * 2.0;
    let beta = alpha * exp.problem.lambda;
    let n = 4;
    let eye = DMatrix::<f64>::identity(n, n);
    let wt = &exp.mixing.w_tilde;
    let (kappa, a1, a2) = match variant {
        Variant::Dsba => (1.0 + beta, wt * 2.0 + &eye * beta, -wt),
        _ => (1.0, wt * 2.0 - &eye * beta, -wt + &eye * beta),
    };
    let c = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            let q = exp.shards.per_node[i].len() as f64;
            (q - 1.0) / q
        } else {
            0.0
        }
    });
    let mut s = sim(&exp, variant, alpha, CommMode::Dense);
    s.step().unwrap();
    let mut z_prev = DMatrix::from_fn(n, exp.dim, |_, j| exp.z0[j]);
    let mut z_cur = s.z_matrix();
    let mut d_prev = delta_matrix(&s);
    for _ in 0..60 {
        s.step().unwrap();
        let z_next = s.z_matrix();
        let d_cur = delta_matrix(&s);
        let rhs = &a1 * &z_cur + &a2 * &z_prev + (&c * &d_prev - &d_cur) * alpha;
        assert!((z_next.clone() * kappa - rhs).abs().max() < 1e-10);
        z_prev = z_cur;
        z_cur = z_next;
        d_prev = d_cur;
    }
}

#[test]
fn dsba_stacked_form() {
    check_stacked_form(Variant::Dsba);
}

#[test]
fn dsa_stacked_form() {
    check_stacked_form(Variant::Dsa);
}

#[test]
fn dsa_and_dsba_first_step_gap_is_second_order() {
    let exp = ridge_with_lambda(Graph::complete(3), 8, 5, 0.2, 14);
    let gap = |alpha: f64| {
        let mut a = sim(&exp, Variant::Dsba, alpha, CommMode::Dense);
        let mut b = sim(&exp, Variant::Dsa, alpha, CommMode::Dense);
        a.step().unwrap();
        b.step().unwrap();
        (a.z_matrix() - b.z_matrix()).abs().max()
    };
    let a0 = exp.default_alpha().unwrap() * 0.01;
    let ratio = gap(a0) / gap(a0 / 2.0);
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn distance_map_matches_mixing_powers() {
    for seed in 0..20 {
        let g = gen_random_graph(4 + seed as usize % 7, 0.35, seed).unwrap();
        let m = dsba::topology::build_mixing_matrix(&g, TauMode::Spectral).unwrap();
        let n = g.n_nodes();
        let powers = m.w_tilde_powers(n);
        for root in 0..n {
            let dm = distance_map(&g, root).unwrap();
            for v in 0..n {
                let first = (0..=n).find(|&t| powers[t][(v, root)] > 0.0).unwrap();
                assert_eq!(dm.xi[v], first, "seed {seed} root {root} node {v}");
            }
        }
    }
}

#[test]
fn short_horizon_two_sample_example_is_slow() {
    let exp = ridge_with_lambda(Graph::complete(1), 2, 3, 0.0, 15);
    let alpha = exp.default_alpha().unwrap();
    let mut s = sim(&exp, Variant::Dsba, alpha, CommMode::Dense);
    for _ in 0..200 {
        s.step().unwrap();
    }
    let early = s.subopt();
    while s.round < 20_000 {
        s.step().unwrap();
    }
    assert!(s.subopt() < 1e-6 && s.subopt() < early);
}

#[test]
fn runs_are_deterministic() {
    let g = gen_random_graph(6, 0.5, 3).unwrap();
    let exp_a = ridge_experiment(g.clone(), 10, 12, 0.3, 3);
    let exp_b = ridge_experiment(g, 10, 12, 0.3, 3);
    assert_eq!(exp_a.fingerprint(), exp_b.fingerprint());
    for comm in [CommMode::Dense, CommMode::Sparse] {
        let alpha = exp_a.default_alpha().unwrap();
        let mut a = sim(&exp_a, Variant::Dsba, alpha, comm);
        let mut b = sim(&exp_b, Variant::Dsba, alpha, comm);
        for _ in 0..80 {
            a.step().unwrap();
            b.step().unwrap();
        }
        assert_eq!(a.z_matrix(), b.z_matrix());
    }
}

#[test]
fn observer_memory_stays_bounded() {
    let g = gen_random_graph(8, 0.35, 4).unwrap();
    let exp = ridge_experiment(g, 10, 40, 0.1, 4);
    let alpha = exp.default_alpha().unwrap();
    let mut s = sim(&exp, Variant::Dsba, alpha, CommMode::Sparse);
    let e = s.diameter();
    let (n, d) = (exp.n_nodes(), exp.dim);
    let nnz = exp.shards.all_samples().map(|x| x.features.nnz()).max().unwrap();
    let bound = 2 * n * d + 2 * e * d + (e + 2) * n * nnz;
    for _ in 0..300 {
        s.step().unwrap();
        if s.round > e {
            let mem = s.max_observer_memory().unwrap();
            assert!(mem <= bound, "round {}: {mem} > {bound}", s.round);
        }
    }
}

#[test]
fn sparse_packets_arrive_at_distance() {
    let exp = ridge_experiment(Graph::path(5), 6, 10, 0.3, 6);
    let alpha = exp.default_alpha().unwrap();
    let cfg = dsba::StepConfig::new(alpha, Variant::Dsba).unwrap();
    let mut s = dsba::Simulation::new(&exp, cfg, CommMode::Sparse, true).unwrap();
    for _ in 0..40 {
        s.step().unwrap();
    }
    let trace = s.trace().unwrap();
    assert!(!trace.is_empty());
    for row in trace {
        assert_eq!(row.relay.abs_diff(row.dest), 1);
        assert!(row.dest != row.origin && row.round >= row.dest.abs_diff(row.origin));
    }
}
