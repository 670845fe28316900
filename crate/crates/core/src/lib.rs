//! Random survival forests trained across simulated clients and merged in one round.
//!
//! Clients fit random survival forests on private shards; a server assembles
//! a global ensemble in one communication round by collecting a size-weighted
//! quota of trees from each client, chosen uniformly or in proportion to the
//! inverse integrated Brier score of each tree.

pub mod cox;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod federation;
pub mod forest;
pub mod metrics;
pub mod rng;
pub mod step;
pub mod synthetic;

pub use data::{Schema, SurvivalDataset, SurvivalRecord};
pub use error::{Error, Result};
pub use forest::{fit_forest, Forest, ForestParams, SurvivalTree};
pub use step::StepFunction;
