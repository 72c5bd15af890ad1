//! Opto-electromechanical model of a cavity with radiation-pressure
//! backaction and an electronic feedback loop: mean-field solution, linear
//! response, stochastic time-domain simulation and spectral analysis.

// `!(a < b)` is used deliberately so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod defaults;
pub mod error;
pub mod linear_response;
pub mod model;
pub mod response;
pub mod signal_chain;
pub mod sim;
pub mod spectral;
pub mod steady_state;
pub mod units;

pub use error::{Error, Result};
