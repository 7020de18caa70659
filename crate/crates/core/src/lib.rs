//! Nonequilibrium steady states of a periodically driven few-level system
//! coupled to a dilute thermal gas, from Floquet scattering rates.
// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cache;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod ness;
pub mod rates;
pub mod scattering;
