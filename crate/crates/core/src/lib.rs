//! Decentralized stochastic backward aggregation (DSBA) for finding the root
//! of a sum of monotone operators spread over a network.

pub mod algorithms;
pub mod dataset;
pub mod error;
pub mod operators;
pub mod simulator;
pub mod sparse;
pub mod sparsecomm;
pub mod topology;

pub use algorithms::{NodeState, PhiTable, StepConfig, Variant};
pub use dataset::{Sample, Shards, SyntheticKind, SyntheticSpec};
pub use error::{Error, Result};
pub use operators::{Family, OperatorSpec, Problem};
pub use simulator::{run, CommMode, DataSource, Experiment, GraphSpec, MetricsLog, RunConfig, Simulation};
pub use sparse::SparseVec;
pub use topology::{Graph, MixingMatrix, TauMode};
