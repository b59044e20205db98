//! Preference-based reward learning with tree-structured, interpretable
//! reward functions.

pub mod agent;
pub mod api;
pub mod env;
pub mod error;
pub mod metrics;
pub mod model;
pub mod normal;
pub mod orchestrator;
pub mod sampler;
pub mod solver;
pub mod storage;
pub mod tree;

pub use error::{Error, Result};
