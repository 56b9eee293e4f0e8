//! Explainable graph classification with a prototype layer on top of a
//! noise-injection information bottleneck.
//!
//! The pipeline is GIN encoder -> node gating with noise injection ->
//! graph readout -> similarity to learned prototypes -> linear prediction
//! layer. Training interleaves gradient steps with prototype projection
//! onto real training subgraphs and merging of redundant prototypes.

pub mod ba2motifs;
pub mod bottleneck;
pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod optim;
pub mod params;
pub mod prototypes;
pub mod relax;
pub mod report;
pub mod rng;
pub mod run;
pub mod sweep;
pub mod trainer;
pub mod tu;

pub use error::{PgibError, Result};
pub use graph::{batch_graphs, split_dataset, Batch, Graph, GraphDataset, SplitSpec};
