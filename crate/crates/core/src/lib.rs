//! Stochastic contraction analysis for discrete, continuous and hybrid
//! resetting systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`state_space`]: metrics, Gaussian noise and the three system classes.
//! - [`geometry`]: metric distances, generalized Jacobians, curve lengths.
//! - [`certify`]: sample-based estimates of contraction rates and noise bounds.
//! - [`bounds`]: closed-form mean-square bounds and hybrid regime classification.
//! - [`simulate`]: seeded Euler–Maruyama / reset simulation and pair ensembles.
//! - [`cpg`]: three Andronov–Hopf oscillators synchronised by noisy discrete
//!   rotational couplings.
//! - [`experiment`]: named built-in systems and JSON experiment configs used by
//!   the command-line front end and the Python bindings.

pub mod bounds;
pub mod certify;
pub mod cpg;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod simulate;
pub mod state_space;

pub use error::{Error, Result};

/// Column vector used for all states.
pub type StateVector = nalgebra::DVector<f64>;
/// Dense matrix used for metrics, Jacobians and noise gains.
pub type Matrix = nalgebra::DMatrix<f64>;
