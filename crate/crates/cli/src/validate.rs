//! Cross-module property suites behind `dsba-sim validate`.

use dsba::dataset::{partition, synthetic, SyntheticKind, SyntheticSpec};
use dsba::topology::{build_mixing_matrix, gen_random_graph, validate_mixing, Graph};
use dsba::{CommMode, Experiment, Family, OperatorSpec, Sample, Simulation, SparseVec, StepConfig, TauMode, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const CLOSED_FORM_TOL: f64 = 1e-9;
pub const NEWTON_TOL: f64 = 1e-10;
pub const SUMMATION_TOL: f64 = 1e-10;
pub const EQUIV_TOL: f64 = 1e-9;
const RESOLVENT_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    pub tau: TauMode,
    pub newton_iters: usize,
    pub seed: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            tau: TauMode::Spectral,
            newton_iters: dsba::operators::DEFAULT_NEWTON_ITERS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Row {
    pub suite: &'static str,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct Report {
    pub rows: Vec<Row>,
}

impl Report {
    fn push(&mut self, suite: &'static str, check: impl Into<String>, passed: bool, detail: String) {
        self.rows.push(Row {
            suite,
            check: check.into(),
            passed,
            detail,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn render(&self) -> String {
        let w = self.rows.iter().map(|r| r.check.len()).max().unwrap_or(0);
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{:<11} {:<w$}  {}  {}\n",
                r.suite,
                r.check,
                if r.passed { "PASS" } else { "FAIL" },
                r.detail
            ));
        }
        out
    }
}

pub fn run_all(opts: &ValidateOptions) -> Report {
    let mut report = Report::default();
    mixing_suite(opts, &mut report);
    resolvent_suite(opts, &mut report);
    saga_suite(opts, &mut report);
    equivalence_suite(&mut report);
    report
}

fn mixing_suite(opts: &ValidateOptions, report: &mut Report) {
    let probs = [0.3, 0.4, 0.6];
    let mut failed: std::collections::BTreeMap<&'static str, Vec<u64>> = Default::default();
    let mut names: Vec<&'static str> = Vec::new();
    let mut errors = Vec::new();
    for k in 0..50u64 {
        let seed = opts.seed.wrapping_add(k);
        let n = 3 + (k as usize % 10);
        let m = gen_random_graph(n, probs[k as usize % 3], seed)
            .and_then(|g| build_mixing_matrix(&g, opts.tau).map(|m| (g, m)));
        match m {
            Ok((g, m)) => {
                for c in validate_mixing(&m.w, &g).checks {
                    if !names.contains(&c.name) {
                        names.push(c.name);
                    }
                    if !c.passed {
                        failed.entry(c.name).or_default().push(seed);
                    }
                }
            }
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    for name in names {
        let bad = failed.get(name).map_or(0, Vec::len);
        report.push("mixing", name, bad == 0 && errors.is_empty(), format!("{bad}/50 graphs fail"));
    }
    if !errors.is_empty() {
        report.push("mixing", "construction", false, errors.join("; "));
    }
}

fn random_sample(rng: &mut ChaCha8Rng, d: usize, family: Family) -> Sample {
    let nnz = rng.gen_range(1..=d);
    let mut idx = rand::seq::index::sample(rng, d, nnz).into_vec();
    idx.sort_unstable();
    let mut vals: Vec<f64> = (0..nnz).map(|_| rng.sample(StandardNormal)).collect();
    let scale = rng.gen_range(0.2..3.0) / vals.iter().map(|v| v * v).sum::<f64>().sqrt();
    vals.iter_mut().for_each(|v| *v *= scale);
    let label = match family {
        Family::Ridge => rng.sample(StandardNormal),
        _ if rng.gen_bool(0.5) => 1.0,
        _ => -1.0,
    };
    Sample {
        features: SparseVec::new(d, idx, vals),
        label,
        line: 1,
    }
}

fn resolvent_suite(opts: &ValidateOptions, report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for family in [Family::Ridge, Family::Logistic, Family::Auc] {
        let tol = if family == Family::Logistic { NEWTON_TOL } else { CLOSED_FORM_TOL };
        let mut worst = 0.0f64;
        let mut error = None;
        for _ in 0..RESOLVENT_TRIALS {
            let s = random_sample(&mut rng, 8, family);
            let p = rng.gen_range(0.1..0.9);
            let lambda = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..1.0) };
            let alpha = 10f64.powf(rng.gen_range(-3.0..1.0));
            let op = match OperatorSpec::new(family, &s, p, lambda) {
                Ok(op) => op,
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            };
            let psi: Vec<f64> = (0..op.dim).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let r = op
                .resolve(alpha, &psi, opts.newton_iters)
                .and_then(|z| op.eval(&z).map(|b| (z, b)))
                .map(|(z, b)| (0..op.dim).map(|j| (z[j] + alpha * b[j] - psi[j]).powi(2)).sum::<f64>().sqrt());
            match r {
                Ok(r) => worst = worst.max(r),
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let (passed, detail) = match error {
            Some(e) => (false, e),
            None => (
                worst <= tol,
                format!("max residual {worst:.2e} over {RESOLVENT_TRIALS} draws (tol {tol:.0e})"),
            ),
        };
        report.push("resolvent", format!("{family:?}").to_lowercase(), passed, detail);
    }
}

fn ridge_experiment(graph: Graph, q: usize, dim: usize, density: f64, seed: u64) -> dsba::Result<Experiment> {
    let n = graph.n_nodes();
    let (samples, d) = synthetic(&SyntheticSpec {
        kind: SyntheticKind::Regression,
        n_samples: q * n,
        dim,
        density,
        noise: 0.1,
        seed,
    })?;
    let shards = partition(samples, d, n, seed)?;
    Experiment::new(graph, TauMode::Spectral, shards, Family::Ridge, None, seed)
}

fn saga_suite(opts: &ValidateOptions, report: &mut Report) {
    let result = (|| -> dsba::Result<f64> {
        let mut worst = 0.0f64;
        for k in 0..20u64 {
            let exp = ridge_experiment(Graph::path(3), 6, 5, 0.6, opts.seed.wrapping_add(k))?;
            let alpha = exp.default_alpha()?;
            let mut sim = Simulation::new(&exp, StepConfig::new(alpha, Variant::Dsba)?, CommMode::Dense, false)?;
            for _ in 0..(1 + k % 7) {
                sim.step()?;
            }
            let z: Vec<f64> = (0..exp.dim).map(|j| (j as f64 + k as f64).cos()).collect();
            for st in &sim.states {
                let q = st.q() as f64;
                let mut estimate = st.table.phi_bar.clone();
                let mut exact = vec![0.0; exp.dim];
                for (s, phi) in st.samples.iter().zip(&st.table.phi) {
                    let b = exp.problem.op(s).eval_unreg(&z)?;
                    b.axpy_into(1.0 / q, &mut estimate);
                    phi.axpy_into(-1.0 / q, &mut estimate);
                    b.axpy_into(1.0 / q, &mut exact);
                }
                let gap = estimate.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                worst = worst.max(gap);
            }
        }
        Ok(worst)
    })();
    match result {
        Ok(w) => report.push(
            "saga",
            "summation identity",
            w <= SUMMATION_TOL,
            format!("max |E[B_i(z) - phi_i + phi_bar] - B(z)| {w:.2e} over 60 node states (tol {SUMMATION_TOL:.0e})"),
        ),
        Err(e) => report.push("saga", "summation identity", false, e.to_string()),
    }
}

fn equivalence_suite(report: &mut Report) {
    let diamond = Graph::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
    let configs: [(&str, dsba::Result<Graph>); 3] = [
        ("K3", Ok(Graph::complete(3))),
        ("path-4", Ok(Graph::path(4))),
        ("diamond-4", diamond),
    ];
    for (name, g) in configs {
        let result = g.and_then(|g| {
            let exp = ridge_experiment(g, 20, 50, 0.1, 5)?;
            let cfg = StepConfig::new(exp.default_alpha()?, Variant::Dsba)?;
            let mut dense = Simulation::new(&exp, cfg, CommMode::Dense, false)?;
            let mut sparse = Simulation::new(&exp, cfg, CommMode::Sparse, false)?;
            let mut worst = 0.0f64;
            for _ in 0..300 {
                dense.step()?;
                sparse.step()?;
                worst = worst.max((dense.z_matrix() - sparse.z_matrix()).abs().max());
            }
            Ok(worst)
        });
        match result {
            Ok(w) => report.push(
                "equivalence",
                name,
                w <= EQUIV_TOL,
                format!("max dense/sparse gap {w:.2e} over 300 rounds (tol {EQUIV_TOL:.0e})"),
            ),
            Err(e) => report.push("equivalence", name, false, e.to_string()),
        }
    }
}
