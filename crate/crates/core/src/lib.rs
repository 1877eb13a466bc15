//! Continuous-time transfer entropy toolkit.
//!
//! Simulates counting and Markov jump processes, computes discrete-time
//! transfer entropy over uniform time grids (exactly and by plug-in
//! estimation), evaluates the lagged-Poisson per-step divergences in
//! closed form, computes pathwise transfer entropy for jump processes
//! via the Girsanov log-likelihood ratio, and provides a harness for
//! empirical convergence, boundedness, and stationarity checks.
//!
//! All information quantities are in nats.

pub mod comb;
pub mod dte;
pub mod error;
pub mod limits;
pub mod markov;
pub mod paths;
pub mod poisson;
pub mod rng;

pub use error::{Error, Result};
