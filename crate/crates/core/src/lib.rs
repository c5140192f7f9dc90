//! Three-level loop-STIRAP simulation, generalized adiabatic bases and
//! generalized matched-pulse design.

// `!(x > 0.0)` is used on purpose to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adiabatic;
pub mod dynamics;
pub mod error;
pub mod interp;
pub mod matched;
pub mod ode;
pub mod pulses;
pub mod quad;
pub mod scenarios;

pub use error::{Error, Result};
