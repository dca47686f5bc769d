//! Instance-dependent error estimation and early stopping for tabular policy
//! evaluation and optimal Q-function estimation from a generative model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance_pe;
pub mod covariance_qopt;
pub mod empire;
pub mod error;
pub mod experiments;
pub mod sampling;
pub mod solvers;
pub mod tabular;

pub use error::{Error, Result};
pub use sampling::{Dataset, GenerativeSampler, RewardModel, SampleSource, Samples};
pub use tabular::{Mdp, Mrp, Policy, QFn, ValueFn};
