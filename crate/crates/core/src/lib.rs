//! Random forests with out-of-bag PAC-Bayesian bounds on the majority vote.
//!
//! The crate is layered bottom-up:
//!
//! * [`bound_math`] — kl divergences, their inversions, the `ξ(n)` constant.
//! * [`forest`] — CART trees, bagging and weighted majority votes.
//! * [`stats`] — out-of-bag / validation losses, disagreements, joint errors.
//! * [`bounds`] — the bound family evaluated for a posterior.
//! * [`optimize`] — posterior optimization for the λ-bound and the C-bound.
//! * [`experiment`] — end-to-end runs producing JSON / CSV reports.

pub mod bound_math;
pub mod bounds;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod forest;
pub mod optimize;
pub mod stats;

pub use data::{load_dataset, Dataset, LabelSpec};
pub use error::{Error, Result};
pub use exec::Exec;
pub use experiment::{run_experiment, run_on_dataset, run_sweep, ExperimentConfig, Setting, TreeCount};
pub use forest::{train_forest, Ensemble, SplitFeatures, TreeConfig};
pub use stats::{EvalMode, Evaluation, OobStatistics};
