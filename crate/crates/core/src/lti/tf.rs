use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{LtiError, Polynomial, StateSpace};

/// Time domain of a linear block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Continuous,
    Discrete { sample_time: f64 },
}

impl Domain {
    pub fn is_continuous(&self) -> bool {
        matches!(self, Domain::Continuous)
    }
}

/// How two blocks are wired together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connection {
    Series,
    Parallel,
    /// `a / (1 + a b)`, `b` in the return path.
    NegativeFeedback,
}

/// Relative size below which the top coefficient of a sum is treated as
/// rounding residue of a cancellation.
const COMPOSE_TRIM: f64 = 1e-14;

/// Ratio of two real polynomials in `s` or `z`, stored with a monic
/// denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTf {
    num: Polynomial,
    den: Polynomial,
    domain: Domain,
}

impl RationalTf {
    pub fn new(num: Polynomial, den: Polynomial, domain: Domain) -> Result<Self, LtiError> {
        if den.is_zero() {
            return Err(LtiError::ZeroDenominator);
        }
        if let Domain::Discrete { sample_time } = domain {
            if !(sample_time > 0.0 && sample_time.is_finite()) {
                return Err(LtiError::InvalidSampleTime(sample_time));
            }
        }
        let lead = den.leading();
        Ok(Self {
            num: num.scale(1.0 / lead),
            den: den.scale(1.0 / lead),
            domain,
        })
    }

    /// Continuous TF from ascending coefficient slices.
    pub fn continuous(num: &[f64], den: &[f64]) -> Result<Self, LtiError> {
        Self::new(
            Polynomial::new(num.to_vec()),
            Polynomial::new(den.to_vec()),
            Domain::Continuous,
        )
    }

    pub fn gain(k: f64) -> Self {
        Self {
            num: Polynomial::constant(k),
            den: Polynomial::one(),
            domain: Domain::Continuous,
        }
    }

    /// `k / s`
    pub fn integrator(k: f64) -> Self {
        Self {
            num: Polynomial::constant(k),
            den: Polynomial::x(),
            domain: Domain::Continuous,
        }
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// `deg den - deg num`; negative for improper TFs.
    pub fn relative_degree(&self) -> isize {
        if self.num.is_zero() {
            return self.den.degree() as isize;
        }
        self.den.degree() as isize - self.num.degree() as isize
    }

    pub fn is_proper(&self) -> bool {
        self.relative_degree() >= 0
    }

    /// Evaluates at a point of the complex `s` (or `z`) plane.
    pub fn eval(&self, x: Complex64) -> Result<Complex64, LtiError> {
        let d = self.den.eval_complex(x);
        if d.norm() <= 1e-13 * self.den.magnitude_scale(x) {
            return Err(LtiError::PoleAt(x));
        }
        Ok(self.num.eval_complex(x) / d)
    }

    /// Frequency response at `f_hz`: `s = i 2 pi f` or `z = exp(i 2 pi f T)`.
    pub fn freq_response(&self, f_hz: f64) -> Result<Complex64, LtiError> {
        let x = match self.domain {
            Domain::Continuous => Complex64::new(0.0, 2.0 * PI * f_hz),
            Domain::Discrete { sample_time } => {
                if f_hz.abs() > 0.5 / sample_time {
                    return Err(LtiError::AboveNyquist { freq_hz: f_hz });
                }
                Complex64::from_polar(1.0, 2.0 * PI * f_hz * sample_time)
            }
        };
        self.eval(x).map_err(|_| LtiError::PoleProximity { freq_hz: f_hz })
    }

    pub fn dc_gain(&self) -> Result<f64, LtiError> {
        let x = match self.domain {
            Domain::Continuous => Complex64::new(0.0, 0.0),
            Domain::Discrete { .. } => Complex64::new(1.0, 0.0),
        };
        self.eval(x)
            .map(|g| g.re)
            .map_err(|_| LtiError::PoleProximity { freq_hz: 0.0 })
    }

    pub fn poles(&self) -> Result<Vec<Complex64>, LtiError> {
        self.den.roots()
    }

    pub fn zeros(&self) -> Result<Vec<Complex64>, LtiError> {
        if self.num.degree() == 0 {
            return Ok(Vec::new());
        }
        self.num.roots()
    }

    /// Every pole strictly inside the stability region.
    pub fn is_stable(&self) -> Result<bool, LtiError> {
        let poles = self.poles()?;
        Ok(match self.domain {
            Domain::Continuous => poles.iter().all(|p| p.re < 0.0),
            Domain::Discrete { .. } => poles.iter().all(|p| p.norm() < 1.0),
        })
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            num: self.num.scale(k),
            den: self.den.clone(),
            domain: self.domain,
        }
    }

    pub fn reciprocal(&self) -> Result<Self, LtiError> {
        Self::new(self.den.clone(), self.num.clone(), self.domain)
    }

    pub fn connect(&self, other: &Self, mode: Connection) -> Result<Self, LtiError> {
        if self.domain != other.domain {
            return Err(LtiError::DomainMismatch);
        }
        let (num, den) = match mode {
            Connection::Series => (&self.num * &other.num, &self.den * &other.den),
            Connection::Parallel => (
                (&self.num * &other.den).add_cancelling(&(&other.num * &self.den), COMPOSE_TRIM),
                &self.den * &other.den,
            ),
            Connection::NegativeFeedback => (
                &self.num * &other.den,
                (&self.den * &other.den).add_cancelling(&(&self.num * &other.num), COMPOSE_TRIM),
            ),
        };
        Self::new(num, den, self.domain)
    }

    pub fn series(&self, other: &Self) -> Result<Self, LtiError> {
        self.connect(other, Connection::Series)
    }

    pub fn parallel(&self, other: &Self) -> Result<Self, LtiError> {
        self.connect(other, Connection::Parallel)
    }

    pub fn feedback(&self, other: &Self) -> Result<Self, LtiError> {
        self.connect(other, Connection::NegativeFeedback)
    }

    /// Removes numerator/denominator root pairs closer than
    /// `rel_tol * max(1, |root|)`. Only applied on request.
    pub fn cancel_common(&self, rel_tol: f64) -> Result<Self, LtiError> {
        let mut zeros = self.zeros()?;
        let mut poles = self.poles()?;
        let gain = self.num.leading();
        let mut i = 0;
        while i < zeros.len() {
            let z = zeros[i];
            let hit = poles
                .iter()
                .position(|p| (p - z).norm() <= rel_tol * z.norm().max(1.0));
            if let Some(j) = hit {
                poles.remove(j);
                zeros.remove(i);
            } else {
                i += 1;
            }
        }
        Self::new(
            Polynomial::from_roots(&zeros).scale(gain),
            Polynomial::from_roots(&poles),
            self.domain,
        )
    }

    /// Controllable canonical realization.
    pub fn to_state_space(&self) -> Result<StateSpace, LtiError> {
        StateSpace::from_tf(self)
    }
}

impl std::fmt::Display for RationalTf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}) / ({})", self.num, self.den)
    }
}
