//! Command-line harness for boosted and jointly trained networks.
//!
//! `train` fits one model from a TOML run file, `evaluate` scores a saved
//! model on new data, and `benchmark` runs k-fold cross-validation with an
//! inner grid search over several models. Every command writes a metrics
//! CSV with the columns of [`metrics::MetricsRow`].

pub mod benchmark;
pub mod config;
pub mod evaluate;
pub mod input;
pub mod metrics;
pub mod output;
pub mod train;

pub use benchmark::cmd_benchmark;
pub use evaluate::{cmd_evaluate, EvalData};
pub use train::cmd_train;
