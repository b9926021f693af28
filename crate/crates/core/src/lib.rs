//! Sequence imitation learning with inverse soft-Q regularization.
//!
//! The crate bundles a small reverse-mode autodiff engine, token-level and
//! toy MDPs, a recurrent policy, the training objectives (MLE, entropy-
//! regularized MLE, offline and online IQLearn, GAIL), a trainer and an
//! evaluation suite.

// `!(x > 0.0)` is the NaN-rejecting form used by the validators
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod envs;
pub mod policy;
pub mod error;
pub mod eval;
pub mod objectives;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
