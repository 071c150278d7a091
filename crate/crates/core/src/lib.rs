//! Variational Bayesian federated learning.
//!
//! Three client/server algorithms share one mean-field machinery:
//!
//! * personalized Gaussian posteriors regularized toward a global prior,
//! * a spike-and-slab variant whose inclusion probabilities sparsify the network,
//! * a clustered variant where every client picks the best of `K` global priors.
//!
//! [`variational`] holds the distributions and their closed forms, [`bnn`] the
//! network, objectives and gradients, [`fed`] the round protocol, [`data`] the
//! datasets and [`harness`] the experiment driver behind the `fedbayes` CLI.

pub mod bnn;
pub mod data;
pub mod error;
pub mod fed;
pub mod harness;
pub mod rng;
pub mod variational;

pub use error::{Error, Result};
