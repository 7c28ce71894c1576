// SPDX-License-Identifier: Apache-2.0

//! Sensitivity models, discrete-event pulse sequences, Monte Carlo photon
//! counting and scan planning for line-confocal NV quantum diamond
//! microscopy.
//!
//! All quantities use canonical units: us, um, mW, mW/um², MHz and
//! counts/us.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod config;
pub mod error;
pub mod montecarlo;
pub mod photophysics;
pub mod scanplan;
pub mod sensitivity;
pub mod sequence;

pub use error::{Error, Result};
pub use photophysics::{Intensity, LogQuadraticCurve, PhotophysicsModel};
pub use sequence::{ProtocolParams, ProtocolTag, PulseSequence};
