//! Polynomial and transfer-function algebra, state-space realization and
//! zero-order-hold discretization.

mod poly;
mod ss;
mod tf;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use poly::Polynomial;
pub use ss::{SisoStepper, StateSpace};
pub use tf::{Connection, Domain, RationalTf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtiError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("root {0} is real, no oscillatory mode")]
    NotOscillatory(Complex64),
    #[error("evaluation at a pole ({0})")]
    PoleAt(Complex64),
    #[error("evaluation too close to a pole at {freq_hz} Hz")]
    PoleProximity { freq_hz: f64 },
    #[error("frequency {freq_hz} Hz is above the Nyquist frequency")]
    AboveNyquist { freq_hz: f64 },
    #[error("cannot compose blocks from different domains or sample times")]
    DomainMismatch,
    #[error("improper transfer function (numerator degree {num_degree} > denominator degree {den_degree})")]
    Improper { num_degree: usize, den_degree: usize },
    #[error("denominator is the zero polynomial")]
    ZeroDenominator,
    #[error("invalid sample time {0}")]
    InvalidSampleTime(f64),
    #[error("model is already discrete")]
    NotContinuous,
    #[error("model is continuous; discretize before stepping")]
    NotDiscrete,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Natural frequency and damping ratio of one oscillatory mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub natural_frequency_hz: f64,
    pub damping_ratio: f64,
}

impl ModeEstimate {
    /// Mode of a continuous-time root `sigma + i omega_d`.
    pub fn from_root(root: Complex64) -> Result<Self, LtiError> {
        if root.im == 0.0 {
            return Err(LtiError::NotOscillatory(root));
        }
        let wn = root.norm();
        Ok(Self {
            natural_frequency_hz: wn / (2.0 * PI),
            damping_ratio: -root.re / wn,
        })
    }
}

/// Modes of the oscillatory root pairs of `p`, ascending in frequency.
pub fn oscillatory_modes(p: &Polynomial) -> Result<Vec<ModeEstimate>, LtiError> {
    let mut modes: Vec<ModeEstimate> = p
        .roots()?
        .into_iter()
        .filter(|r| r.im > 0.0)
        .map(ModeEstimate::from_root)
        .collect::<Result<_, _>>()?;
    modes.sort_by(|a, b| a.natural_frequency_hz.total_cmp(&b.natural_frequency_hz));
    Ok(modes)
}
