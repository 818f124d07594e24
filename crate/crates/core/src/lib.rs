//! Finsleroid geometry over a Riemannian background: the metric function,
//! its angle-preserving conformal map to the background, the induced
//! nonlinear connection, curvature tensors, parallel transport and the
//! indicatrix curvature.

pub mod angle;
pub mod automorphism;
pub mod background;
pub mod check;
pub mod config;
pub mod connection;
pub mod curvature;
pub mod error;
pub mod fd;
pub mod finsleroid;
pub mod indicatrix;
pub mod jets;
pub mod linalg;
pub mod report;
pub mod sampling;
pub mod suites;
pub mod transport;

pub use error::{GeomError, Result};
pub use jets::{Jet, Scalar};
