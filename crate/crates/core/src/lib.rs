//! Multi-user backscatter integrated sensing and communication (ISAC).
//!
//! An ISAC transmitter with `M_t` antennas illuminates `L` passive backscatter
//! devices (BDs); each BD amplitude-modulates one symbol onto the excitation and
//! reflects it to an `M_r`-antenna ISAC receiver. The receiver localizes every BD
//! from the round-trip delay and the direction of arrival, and decodes the BD
//! symbols as a multiple-access channel.
//!
//! The crate covers:
//!
//! * [`geometry`]: scene construction, channels and closed-form localization,
//! * [`pulses`]: transmit pulse shapes and the scalar constants they contribute,
//! * [`fim`]: the Fisher information matrix and Cramér-Rao bound (closed form,
//!   dense inverse and block inverse),
//! * [`rate`]: the BD sum rate and its gradient,
//! * [`optimizer`]: CRB minimization under power and sum-rate constraints with a
//!   self-contained log-barrier interior-point method,
//! * [`simulate`]: sample-level Monte-Carlo synthesis and estimation,
//! * [`config`]: the TOML scenario format and the built-in presets.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fim;
pub mod geometry;
pub mod linalg;
pub mod optimizer;
pub mod pulses;
pub mod rate;
pub mod simulate;

pub use error::{IsacError, Result};

pub use num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
