//! Missing-data imputation with an invertible coupling-layer flow.
//!
//! The crate learns an exact density model of incomplete tabular (or small
//! grid) data and imputes missing entries by maximizing likelihood subject
//! to matching the observed values. Training alternates between fitting the
//! flow on the currently completed data and refreshing the missing entries
//! from the model; the snapshots saved along the way form the inference
//! artifact applied at imputation time.

pub mod autodiff;
pub mod dataset;
pub mod flow;
pub mod imputer;
pub mod latent;
pub mod trainer;
pub mod checkpoint;
pub mod error;

pub use error::{Error, ErrorKind, Result};
