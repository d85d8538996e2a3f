//! Differentially private answering of linear query workloads.
//!
//! The centerpiece is the projection mechanism: correlated Gaussian noise is
//! added to the exact query answers, and the noisy vector is then split
//! along the top eigenspace of the noise covariance and regressed back onto
//! the set of answer vectors consistent with the database size bound. The
//! noise covariance itself is chosen by minimizing its Ky Fan k-norm subject
//! to the privacy constraint, solved through a concave dual over the simplex
//! whose value doubles as a near-optimality certificate.
//!
//! Modules:
//! - [`workload`]: query matrices, histograms, generators, file formats.
//! - [`spectral`]: symmetric eigendecomposition and spectral norms.
//! - [`covariance`]: the Ky Fan norm minimization and its dual.
//! - [`mechanism`]: Gaussian noise, the projection step, and Frank-Wolfe
//!   regression onto the scaled sensitivity polytope.
//! - [`lower_bound`]: spectral lower bounds and dual certificates.
//! - [`harness`]: Monte Carlo error estimation and benchmark reports.
//! - [`cli`]: the `dpwo` command-line interface.

// index loops over multiple arrays are the clearest form for the dense
// kernels here
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod covariance;
pub mod error;
pub mod harness;
pub mod lower_bound;
pub mod mat;
pub mod mechanism;
pub mod parallel;
pub mod rng;
pub mod spectral;
pub mod workload;

pub use error::{Error, Result};
pub use mat::Mat;
pub use workload::{Histogram, QueryMatrix};
