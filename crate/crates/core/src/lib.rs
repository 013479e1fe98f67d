//! Simulator for decentralized federated learning in which a single model
//! travels from node to node and is trained sequentially on each node's
//! local data.
//!
//! The crate is organised bottom-up:
//!
//! - [`datasets`]: labeled samples, label histograms, synthetic data, CSV I/O.
//! - [`partition`]: non-IID splits of a dataset into per-node shards.
//! - [`learner`]: a small MLP classifier trained with plain SGD.
//! - [`routing`]: next-node selection for the traveling model.
//! - [`simulator`]: the traveling-model loop, a gossip baseline, and metrics.
//! - [`config`] and [`experiment`]: the declarative experiment runner behind
//!   the `tramfl` binary.

pub mod config;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod partition;
pub mod rng;
pub mod routing;
pub mod simulator;

pub use datasets::{LabelHistogram, LabeledDataset, LabeledSample};
pub use error::{Error, Result};
pub use learner::{ArchSpec, GradVector, ModelParams};
pub use partition::DatasetShard;
pub use routing::{RoutingConfig, RoutingState, StaticRoute};
pub use simulator::{EvalRecord, PolicyKind, RunConfig, TrialResult};
