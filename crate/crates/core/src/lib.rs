//! Simulation and DSP for single-ended coherent optical receivers: QAM
//! waveform generation, fiber dispersion and ASE, square-law detection with
//! an LO, field reconstruction (DFR, CIC, GD), the CIC error map, adaptive
//! front-end calibration, receiver metrics and configurable sweeps.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod channel;
pub mod dsp;
pub mod dynamics;
pub mod error;
pub mod frontend;
pub mod reconstruct;
pub mod report;
pub mod rxdsp;
pub mod sweeps;
pub mod waveform;

pub use error::{Result, SerError};
pub use reconstruct::Method;
pub use waveform::{QamFormat, Shaping, Waveform};
