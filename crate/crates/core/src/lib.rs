//! Visibility-aware topic modeling of social stream adoptions.
//!
//! The crate learns user and item topic vectors from who-reposted-what data,
//! combining item relevance (`u·θ`), item fitness (`η`) and a per-user
//! visibility factor derived from stream backlog and scrolling depth. On top
//! of the learned vectors it computes network-position and information
//! diversity statistics.
//!
//! Pipeline stages map onto modules:
//!
//! * [`corpus`]: ingestion, tokenization and indexed lookups.
//! * [`topic_model`]: collapsed Gibbs LDA over item texts.
//! * [`visibility`]: backlog estimation and the geometric × inverse-Gaussian visibility series.
//! * [`adoption`]: softmax adoption model, objective, stochastic trainer and baselines.
//! * [`evaluation`]: fold plans, top-x metrics and the comparison runner.
//! * [`netinfo`]: network size, network diversity, effort, friend topic diversity and curves.
//! * [`simulator`]: synthetic corpora drawn from the generative process.
//! * [`cli`]: the `vistopic` command-line entry point.

pub mod adoption;
pub mod bundle;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod netinfo;
pub mod rng;
pub mod simulator;
pub mod topic_model;
pub mod visibility;

pub use error::{Error, Result};
