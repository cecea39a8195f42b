//! Contextual multinomial-logit bandits.
//!
//! The crate is organized the way a simulation run flows:
//!
//! - [`model`]: MNL choice probabilities, expected revenue and choice sampling.
//! - [`estimation`]: likelihood, Newton MLE, online Newton step, Gram matrices
//!   and confidence radii.
//! - [`assortment`]: optimistic utilities and exact revenue maximization.
//! - [`policies`]: UCB-MNL, its online-update variant, DBL-MNL and supCB-MNL.
//! - [`simulator`]: synthetic environments, the round loop and replications.
//! - [`harness`]: config files, CSV traces, summaries and run manifests.

pub mod assortment;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod model;
pub mod policies;
pub mod rng;
pub mod simulator;

pub use error::{MnlError, Result};
pub use nalgebra;
