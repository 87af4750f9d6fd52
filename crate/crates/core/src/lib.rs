//! Strong coresets for k-median and lp subspace approximation.
//!
//! The pipeline reduces n points in R^d to a factored low-dimensional
//! representation with one appended residual coordinate per point, then
//! samples a small weighted row set whose query costs track the full
//! data's. A verification harness with independent cost oracles, scalar
//! inequality checks, and a brute-force subspace search backs every
//! guarantee empirically.

pub mod config;
pub mod dimred;
pub mod error;
pub mod io;
pub mod kmedian;
pub mod linalg;
pub mod oracle;
pub mod rng;
pub mod sketch;
pub mod subspace;

pub use config::Config;
pub use error::{Error, Result};
