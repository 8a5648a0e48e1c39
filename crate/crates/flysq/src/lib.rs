//! Simulator and calibration pipeline for spatially multiplexed squeezed
//! light in an anti-relaxation-coated vapor cell.
//!
//! Several optical channels couple through the ground-state coherence of a
//! shared dark-region reservoir: atoms pumped in one beam carry their
//! coherence everywhere else, boosting the self-rotation nonlinearity of
//! every other beam. The crate models that transport with a well-stirred
//! compartment system, solves the coupled Langevin dynamics analytically
//! (with a Monte Carlo cross-check), maps the steady coherence to per-channel
//! quadrature-noise spectra, and fits the handful of free constants to the
//! published data points.

pub mod calibrate;
pub mod cli;
pub mod config;
pub mod error;
pub mod kinetics;
pub mod langevin;
pub mod optics;
pub mod output;
pub mod scenarios;
pub mod spin;

pub use error::{Error, Result};
