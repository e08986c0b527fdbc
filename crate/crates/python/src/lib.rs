//! Python bindings: graphs, mixing matrices, resolvents and simulations.

use dsba::dataset::{partition, synthetic, SyntheticKind, SyntheticSpec};
use dsba::simulator::{drive, MetricsRow};
use dsba::topology::{build_mixing_matrix, gen_random_graph, graph_diameter, validate_mixing};
use dsba::{CommMode, Family, OperatorSpec, RunConfig, Sample, SparseVec, StepConfig, TauMode, Variant};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: dsba::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tau_mode(tau_scale: Option<f64>) -> TauMode {
    tau_scale.map_or(TauMode::Spectral, TauMode::Scaled)
}

#[pyclass(name = "Graph", module = "pydsba", skip_from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: dsba::Graph,
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn random(n_nodes: usize, edge_prob: f64, seed: u64) -> PyResult<Self> {
        Ok(PyGraph {
            inner: gen_random_graph(n_nodes, edge_prob, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn complete(n_nodes: usize) -> Self {
        PyGraph {
            inner: dsba::Graph::complete(n_nodes),
        }
    }

    #[staticmethod]
    fn path(n_nodes: usize) -> Self {
        PyGraph {
            inner: dsba::Graph::path(n_nodes),
        }
    }

    #[staticmethod]
    fn from_edges(n_nodes: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(PyGraph {
            inner: dsba::Graph::from_edges(n_nodes, &edges).map_err(err)?,
        })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    fn degree(&self, n: usize) -> usize {
        self.inner.degree(n)
    }

    fn diameter(&self) -> PyResult<usize> {
        graph_diameter(&self.inner).map_err(err)
    }

    /// `W = I - L / tau` as a list of rows.
    #[pyo3(signature = (tau_scale=None))]
    fn mixing_matrix(&self, tau_scale: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
        let m = build_mixing_matrix(&self.inner, tau_mode(tau_scale)).map_err(err)?;
        Ok(m.w.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Names of the mixing-matrix conditions with their pass flags.
    #[pyo3(signature = (tau_scale=None))]
    fn check_mixing(&self, tau_scale: Option<f64>) -> PyResult<Vec<(String, bool)>> {
        let m = build_mixing_matrix(&self.inner, tau_mode(tau_scale)).map_err(err)?;
        Ok(validate_mixing(&m.w, &self.inner)
            .checks
            .into_iter()
            .map(|c| (c.name.to_string(), c.passed))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Graph(n_nodes={}, edges={})", self.inner.n_nodes(), self.inner.edges().len())
    }
}

/// Resolvent `(I + alpha (B + lambda I))^{-1} psi` for one sample given as a
/// dense feature vector.
#[pyfunction]
#[pyo3(signature = (family, features, label, alpha, psi, p=0.5, lam=0.0, newton_iters=20))]
#[allow(clippy::too_many_arguments)]
fn resolvent(
    family: &str,
    features: Vec<f64>,
    label: f64,
    alpha: f64,
    psi: Vec<f64>,
    p: f64,
    lam: f64,
    newton_iters: usize,
) -> PyResult<Vec<f64>> {
    let family: Family = family.parse().map_err(err)?;
    let sample = Sample {
        features: SparseVec::from_dense(&features),
        label,
        line: 1,
    };
    let op = OperatorSpec::new(family, &sample, p, lam).map_err(err)?;
    op.resolve(alpha, &psi, newton_iters).map_err(err)
}

#[pyclass(name = "Experiment", module = "pydsba")]
struct PyExperiment {
    inner: dsba::Experiment,
}

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("round", r.round)?;
    d.set_item("effective_passes", r.effective_passes)?;
    d.set_item("subopt", r.subopt)?;
    d.set_item("consensus", r.consensus)?;
    d.set_item("score", r.score)?;
    d.set_item("c_max", r.c_max)?;
    Ok(d)
}

#[pymethods]
impl PyExperiment {
    /// Synthetic data partitioned over `graph`.
    #[staticmethod]
    #[pyo3(signature = (graph, family, n_samples, dim, density=1.0, noise=0.0, seed=0, lam=None, tau_scale=None))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        graph: &PyGraph,
        family: &str,
        n_samples: usize,
        dim: usize,
        density: f64,
        noise: f64,
        seed: u64,
        lam: Option<f64>,
        tau_scale: Option<f64>,
    ) -> PyResult<Self> {
        let family: Family = family.parse().map_err(err)?;
        let kind = if family.is_classification() {
            SyntheticKind::Classification
        } else {
            SyntheticKind::Regression
        };
        let (samples, d) = synthetic(&SyntheticSpec {
            kind,
            n_samples,
            dim,
            density,
            noise,
            seed,
        })
        .map_err(err)?;
        let g = graph.inner.clone();
        let shards = partition(samples, d, g.n_nodes(), seed).map_err(err)?;
        let inner = dsba::Experiment::new(g, tau_mode(tau_scale), shards, family, lam, seed).map_err(err)?;
        Ok(PyExperiment { inner })
    }

    /// Builds from a JSON run configuration.
    #[staticmethod]
    fn from_json(config: &str) -> PyResult<Self> {
        let cfg: RunConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyExperiment {
            inner: dsba::Experiment::from_config(&cfg).map_err(err)?,
        })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.problem.lambda
    }

    #[getter]
    fn q_min(&self) -> usize {
        self.inner.shards.q_min
    }

    #[getter]
    fn z_star(&self) -> Vec<f64> {
        self.inner.reference.z_star.clone()
    }

    fn default_alpha(&self) -> PyResult<f64> {
        self.inner.default_alpha().map_err(err)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn score(&self, z: Vec<f64>) -> PyResult<f64> {
        self.inner.score(&z).map_err(err)
    }

    /// Runs a variant and returns `(metrics rows, final per-node iterates)`.
    #[pyo3(signature = (variant="dsba", rounds=100, alpha=None, comm="dense", cadence=None, stop_below=None))]
    #[allow(clippy::too_many_arguments)]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        variant: &str,
        rounds: usize,
        alpha: Option<f64>,
        comm: &str,
        cadence: Option<usize>,
        stop_below: Option<f64>,
    ) -> PyResult<(Vec<Bound<'py, PyDict>>, Vec<Vec<f64>>)> {
        let variant: Variant = variant.parse().map_err(err)?;
        let comm: CommMode = comm.parse().map_err(err)?;
        let alpha = match alpha {
            Some(a) => a,
            None => self.inner.default_alpha().map_err(err)?,
        };
        let cfg = StepConfig::new(alpha, variant).map_err(err)?;
        let mut sim = dsba::Simulation::new(&self.inner, cfg, comm, false).map_err(err)?;
        let cadence = cadence.unwrap_or(self.inner.shards.q_min);
        let (log, _) = drive(&mut sim, rounds, cadence, stop_below).map_err(err)?;
        let rows = log.rows.iter().map(|r| row_dict(py, r)).collect::<PyResult<Vec<_>>>()?;
        let z = sim.states.iter().map(|s| s.z_curr.clone()).collect();
        Ok((rows, z))
    }

    fn __repr__(&self) -> String {
        format!(
            "Experiment(n_nodes={}, dim={}, q_min={}, family={:?})",
            self.inner.n_nodes(),
            self.inner.dim,
            self.inner.shards.q_min,
            self.inner.problem.family
        )
    }
}

/// Full run from a JSON configuration; returns `(metrics_csv, manifest_json)`.
#[pyfunction]
fn run(config: &str) -> PyResult<(String, String)> {
    let cfg: RunConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = dsba::run(&cfg).map_err(err)?;
    let manifest = serde_json::to_string(&out.manifest).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((out.log.to_csv(), manifest))
}

#[pymodule]
fn pydsba(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(resolvent, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
