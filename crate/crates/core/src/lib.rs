//! Simulator for frequency-division-multiplexed dispersive readout of an
//! array of flux qubits sharing one microwave feedline.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod chain;
pub mod device;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod rx;
pub mod seed;
pub mod trace;
pub mod tx;

pub use error::{Error, Result};
