//! Polynomial chaos uncertainty quantification and Sobol sensitivity
//! analysis for compartmental epidemic models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod cases;
pub mod distributions;
pub mod epimodels;
pub mod orthopoly;
pub mod pce;
pub mod sobol;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
