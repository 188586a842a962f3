//! Bayesian fusion of rain-gage and radar observations on a regular grid.
//!
//! The latent log-rain field follows a proper conditional autoregression at
//! the first time step and an advected autoregression afterwards. Gage and
//! radar readings are zero-inflated log-normal given the latent field.

pub mod app;
pub mod car;
pub mod config;
pub mod covariates;
pub mod error;
pub mod grid;
pub mod io;
pub mod mcmc;
pub mod model;
pub mod products;
pub mod simulate;
pub mod spline;
pub mod state_io;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{Displacement, Grid};
