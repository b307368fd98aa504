//! Mean-field equilibrium solver for a benchmark-tracking portfolio game in
//! which each manager minimises the discounted expected largest shortfall
//! of wealth below a mix of the population's average wealth and a market index.
//!
//! The solution runs through a reflected dual process: the dual level R is a
//! reflected drifted Brownian motion, the equilibrium drift f* solves a linear
//! Volterra fixed point whose kernels G and H are expectations over R, and the
//! primal state is recovered by inverting the map r ↦ x(r).

pub mod error;
pub mod grid;
pub mod kernels;
pub mod mc;
pub mod mfe;
pub mod nplayer;
pub mod params;
pub mod quadrature;
pub mod report;
pub mod special;
pub mod stochastic;
pub mod strategy_value;

pub use error::{Error, Result};
pub use grid::{Curve, TimeGrid};
pub use mc::{McConfig, McEstimate, RngStream};
pub use params::{DerivedConstants, InitialState, ModelParams};
