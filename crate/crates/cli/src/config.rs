//! Sectioned TOML config files and their mapping onto [`RunConfig`].

use std::path::{Path, PathBuf};

use dsba::dataset::{SyntheticKind, SyntheticSpec};
use dsba::operators::DEFAULT_NEWTON_ITERS;
use dsba::{CommMode, DataSource, Family, GraphSpec, RunConfig, TauMode, Variant};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub compare: CompareSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub variant: Option<Variant>,
    pub comm: Option<CommMode>,
    pub rounds: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub cadence: Option<usize>,
    pub stop_below: Option<f64>,
    pub newton_iters: Option<usize>,
    pub record_trace: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub family: Option<Family>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub kind: Option<String>,
    pub n_nodes: Option<usize>,
    pub edge_prob: Option<f64>,
    pub seed: Option<u64>,
    pub edges: Option<Vec<(usize, usize)>>,
    pub tau_scale: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticKind>,
    pub n_samples: Option<usize>,
    pub dim: Option<usize>,
    pub density: Option<f64>,
    pub noise: Option<f64>,
    pub seed: Option<u64>,
    pub normalize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub variants: Option<Vec<Variant>>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub rounds: Option<usize>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub comm: Option<CommMode>,
    pub tau_scale: Option<f64>,
}

fn missing(field: &str) -> CliError {
    CliError::Config(format!("missing required field `{field}`"))
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.alpha.is_some() {
            self.run.alpha = o.alpha;
        }
        if o.rounds.is_some() {
            self.run.rounds = o.rounds;
        }
        if o.seed.is_some() {
            self.run.seed = o.seed;
        }
        if o.variant.is_some() {
            self.run.variant = o.variant;
        }
        if o.comm.is_some() {
            self.run.comm = o.comm;
        }
        if o.tau_scale.is_some() {
            self.graph.tau_scale = o.tau_scale;
            self.graph.tau = None;
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.run.seed.ok_or_else(|| missing("run.seed"))
    }

    pub fn data_source(&self) -> Result<DataSource, CliError> {
        let d = &self.data;
        match (&d.path, d.synthetic) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "set only one of `data.path` and `data.synthetic`".into(),
            )),
            (Some(path), None) => Ok(DataSource::Libsvm { path: path.clone() }),
            (None, Some(kind)) => Ok(DataSource::Synthetic(SyntheticSpec {
                kind,
                n_samples: d.n_samples.ok_or_else(|| missing("data.n_samples"))?,
                dim: d.dim.ok_or_else(|| missing("data.dim"))?,
                density: d.density.unwrap_or(1.0),
                noise: d.noise.unwrap_or(0.0),
                seed: d.seed.map_or_else(|| self.seed(), Ok)?,
            })),
            (None, None) => Err(CliError::Config(
                "missing required field `data.path` (or a `data.synthetic` generator)".into(),
            )),
        }
    }

    pub fn graph_spec(&self) -> Result<GraphSpec, CliError> {
        let g = &self.graph;
        let n_nodes = g.n_nodes.ok_or_else(|| missing("graph.n_nodes"));
        match g.kind.as_deref().unwrap_or("random") {
            "random" => Ok(GraphSpec::Random {
                n_nodes: n_nodes?,
                edge_prob: g.edge_prob.ok_or_else(|| missing("graph.edge_prob"))?,
                seed: g.seed.map_or_else(|| self.seed(), Ok)?,
            }),
            "complete" => Ok(GraphSpec::Complete { n_nodes: n_nodes? }),
            "path" => Ok(GraphSpec::Path { n_nodes: n_nodes? }),
            "edges" => Ok(GraphSpec::Edges {
                n_nodes: n_nodes?,
                edges: g.edges.clone().ok_or_else(|| missing("graph.edges"))?,
            }),
            other => Err(CliError::Config(format!(
                "unknown graph.kind {other:?} (random, complete, path, edges)"
            ))),
        }
    }

    pub fn tau_mode(&self) -> Result<TauMode, CliError> {
        match (self.graph.tau_scale, self.graph.tau) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "set only one of `graph.tau_scale` and `graph.tau`".into(),
            )),
            (Some(s), None) => Ok(TauMode::Scaled(s)),
            (None, Some(t)) => Ok(TauMode::Custom(t)),
            (None, None) => Ok(TauMode::Spectral),
        }
    }

    pub fn run_config(&self, variant: Option<Variant>) -> Result<RunConfig, CliError> {
        let r = &self.run;
        let cfg = RunConfig {
            variant: variant.or(r.variant).unwrap_or(Variant::Dsba),
            family: self.problem.family.ok_or_else(|| missing("problem.family"))?,
            graph: self.graph_spec()?,
            data: self.data_source()?,
            normalize: self.data.normalize.unwrap_or(true),
            alpha: r.alpha,
            lambda: self.problem.lambda,
            tau: self.tau_mode()?,
            rounds: r.rounds.ok_or_else(|| missing("run.rounds"))?,
            cadence: r.cadence,
            comm: r.comm.unwrap_or(CommMode::Dense),
            seed: self.seed()?,
            newton_iters: r.newton_iters.unwrap_or(DEFAULT_NEWTON_ITERS),
            record_trace: r.record_trace.unwrap_or(false),
            stop_below: r.stop_below,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}
