//! Experiment harness for simplicial 2-complex CNNs on MNIST.
//!
//! The `sccnn` binary wraps these modules; they are exposed as a library so
//! the integration tests can drive training and the ablation directly.

pub mod commands;
pub mod config;
pub mod experiment;

pub use config::ExperimentConfig;
pub use experiment::{run_ablation, train_model, AblationSummary, MnistData, RunReport, VariantSummary};
