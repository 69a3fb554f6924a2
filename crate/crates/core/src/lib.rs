//! Model-constrained learning of inverse maps for linear inverse problems.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] builds forward operators, Gaussian priors, noise models and
//!   training sets (including the 1D Gaussian-blur deconvolution setup).
//! * [`solvers`] holds the closed-form affine inverse maps (naive and
//!   model-constrained), the data-informed reference parameter and the
//!   Tikhonov solver they are equivalent to.
//! * [`network`], [`training`] and [`optim`] evaluate and minimise the five
//!   training objectives over small dense networks and autoencoders.
//! * [`stationarity`] constructs the analytic stationary points of the
//!   autoencoder objectives and certifies them numerically.
//! * [`bench`] and [`report`] run the deconvolution error study and write
//!   its CSV/SVG outputs.

pub mod bench;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod linalg;
pub mod model;
pub mod network;
pub mod optim;
pub mod report;
pub mod rng;
pub mod solvers;
pub mod stationarity;
pub mod training;

pub use error::{Error, Result};
