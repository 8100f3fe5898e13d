//! Differentially private model release over evolving data streams.
//!
//! Models are trained by regularized softmax regression with output
//! perturbation. Schedulers decide which data intervals to retrain as the
//! stream grows, and a rational-valued ledger tracks the privacy spent on
//! every stream element.

pub mod erm;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod mechanisms;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
