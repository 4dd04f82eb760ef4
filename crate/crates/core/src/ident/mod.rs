//! Harmonic least squares, stepped-sine frequency response estimation and
//! the model fitters built on it.

mod fit;
mod lm;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{LtiError, SisoStepper};

pub use fit::{fit_decay, fit_lumped_params, fit_rational_frf, DecayFit, DecayGuess, LumpedFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentError {
    #[error("{needed} samples needed, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("design matrix is rank deficient at the {kind} term of harmonic {harmonic}")]
    RankDeficient { harmonic: usize, kind: &'static str },
    #[error("input harmonic vanishes at {freq_hz} Hz")]
    DivisionGuard { freq_hz: f64 },
    #[error("simulation diverged at {freq_hz} Hz")]
    Unstable { freq_hz: f64 },
    #[error("fit did not converge after {iterations} iterations (cost {cost:e})")]
    FitFailure {
        iterations: usize,
        cost: f64,
        last: Vec<f64>,
        cost_trace: Vec<f64>,
    },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("rational model with {n_zeros} zeros and {n_poles} poles is not strictly proper")]
    Improper { n_poles: usize, n_zeros: usize },
    #[error("least-squares system is singular")]
    Singular,
    #[error(transparent)]
    Lti(#[from] LtiError),
}

/// Least-squares Fourier series of one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicFit {
    pub f0: f64,
    pub n_harmonics: usize,
    pub a_c: Vec<f64>,
    pub b_s: Vec<f64>,
    pub a0: f64,
}

impl HarmonicFit {
    pub fn eval(&self, t: f64) -> f64 {
        let w = 2.0 * PI * self.f0;
        let mut y = self.a0;
        for (n, (a, b)) in self.a_c.iter().zip(&self.b_s).enumerate() {
            let arg = (n + 1) as f64 * w * t;
            y += a * arg.cos() + b * arg.sin();
        }
        y
    }

    fn coeffs(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.n_harmonics + 1,
            self.a_c
                .iter()
                .chain(&self.b_s)
                .copied()
                .chain(std::iter::once(self.a0)),
        )
    }

    /// `A^T (y - A c)`: zero at the least-squares optimum.
    pub fn normal_residual(&self, y: &[f64], t: &[f64]) -> Result<Vec<f64>, IdentError> {
        let a = design_matrix(t, self.f0, self.n_harmonics)?;
        let r = DVector::from_column_slice(y) - &a * self.coeffs();
        Ok((a.transpose() * r).iter().copied().collect())
    }
}

/// Columns `cos(w t) .. cos(N w t), sin(w t) .. sin(N w t), 1`.
pub fn design_matrix(t: &[f64], f0: f64, n: usize) -> Result<DMatrix<f64>, IdentError> {
    if n == 0 {
        return Err(IdentError::Invalid("at least one harmonic is required".into()));
    }
    if !(f0 > 0.0 && f0.is_finite()) {
        return Err(IdentError::Invalid(format!("fundamental frequency {f0}")));
    }
    let w = 2.0 * PI * f0;
    let mut a = DMatrix::zeros(t.len(), 2 * n + 1);
    for (i, &ti) in t.iter().enumerate() {
        for k in 0..n {
            let arg = (k + 1) as f64 * w * ti;
            a[(i, k)] = arg.cos();
            a[(i, n + k)] = arg.sin();
        }
        a[(i, 2 * n)] = 1.0;
    }
    Ok(a)
}

pub fn harmonic_fit(y: &[f64], t: &[f64], f0: f64, n: usize) -> Result<HarmonicFit, IdentError> {
    if y.len() != t.len() {
        return Err(IdentError::Invalid(format!(
            "{} samples against {} time stamps",
            y.len(),
            t.len()
        )));
    }
    let cols = 2 * n + 1;
    if t.len() < cols {
        return Err(IdentError::TooFewSamples {
            needed: cols,
            got: t.len(),
        });
    }
    let a = design_matrix(t, f0, n)?;
    let qr = a.qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    for j in 0..cols {
        if r[(j, j)].abs() <= 1e-10 * scale {
            let (harmonic, kind) = if j < n {
                (j + 1, "cosine")
            } else if j < 2 * n {
                (j - n + 1, "sine")
            } else {
                (0, "constant")
            };
            return Err(IdentError::RankDeficient { harmonic, kind });
        }
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, cols).into_owned();
    let c = r.solve_upper_triangular(&rhs).ok_or(IdentError::Singular)?;
    Ok(HarmonicFit {
        f0,
        n_harmonics: n,
        a_c: c.rows(0, n).iter().copied().collect(),
        b_s: c.rows(n, n).iter().copied().collect(),
        a0: c[2 * n],
    })
}

/// First-harmonic complex coefficient `(a1 - i b1) / 2`.
pub fn fourier_coeff(fit: &HarmonicFit) -> Complex64 {
    Complex64::new(fit.a_c[0], -fit.b_s[0]) / 2.0
}

/// Output over input first-harmonic ratio, the input converted by `scale`.
pub fn frf_point(u_fit: &HarmonicFit, y_fit: &HarmonicFit, scale: f64) -> Result<Complex64, IdentError> {
    if (u_fit.f0 - y_fit.f0).abs() > 1e-12 * u_fit.f0 {
        return Err(IdentError::Invalid(format!(
            "fits at {} Hz and {} Hz",
            u_fit.f0, y_fit.f0
        )));
    }
    let cu = fourier_coeff(u_fit) * scale;
    let cy = fourier_coeff(y_fit);
    if !(cu.norm() > 0.0) || cu.norm() <= 1e-14 * cy.norm() || !cu.norm().is_finite() {
        return Err(IdentError::DivisionGuard { freq_hz: u_fit.f0 });
    }
    Ok(cy / cu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrfPoint {
    pub freq_hz: f64,
    pub response: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrfDataset {
    pub points: Vec<FrfPoint>,
    pub amplitude: f64,
    pub record_s: f64,
}

impl FrfDataset {
    pub fn new(points: Vec<FrfPoint>, amplitude: f64, record_s: f64) -> Result<Self, IdentError> {
        if points.first().is_some_and(|p| !(p.freq_hz > 0.0))
            || points.windows(2).any(|w| !(w[1].freq_hz > w[0].freq_hz))
        {
            return Err(IdentError::Invalid(
                "frequencies must be positive and strictly increasing".into(),
            ));
        }
        Ok(Self {
            points,
            amplitude,
            record_s,
        })
    }

    /// Samples a transfer function on `freqs`.
    pub fn from_tf(g: &crate::lti::RationalTf, freqs: &[f64]) -> Result<Self, IdentError> {
        let points = freqs
            .iter()
            .map(|&f| {
                Ok(FrfPoint {
                    freq_hz: f,
                    response: g.freq_response(f)?,
                })
            })
            .collect::<Result<Vec<_>, IdentError>>()?;
        Self::new(points, 0.0, 0.0)
    }

    pub fn freqs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.freq_hz).collect()
    }
}

/// A sampled single-input single-output system driven one tick at a time.
pub trait SisoSystem {
    /// Output at the current tick for the input held over it.
    fn step(&mut self, u: f64) -> f64;
}

impl SisoSystem for SisoStepper {
    fn step(&mut self, u: f64) -> f64 {
        SisoStepper::step(self, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteppedSineConfig {
    pub amplitude: f64,
    pub settle_s: f64,
    pub record_s: f64,
    pub dt: f64,
    pub n_harmonics: usize,
    /// Converts the excitation into the model input (the pitch for the rig).
    pub input_scale: f64,
    /// Raised-cosine fade-in at the start of the settle window; 0 starts
    /// the sine abruptly.
    pub fade_in_s: f64,
}

impl Default for SteppedSineConfig {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            settle_s: 20.0,
            record_s: 10.0,
            dt: 1e-4,
            n_harmonics: 3,
            input_scale: 1.0,
            fade_in_s: 0.0,
        }
    }
}

/// Drives a fresh system per frequency with a sine and fits the last
/// `record_s` seconds. Frequencies run on the current rayon pool.
pub fn stepped_sine_frf<S, F>(
    make: F,
    freqs: &[f64],
    cfg: &SteppedSineConfig,
) -> Result<FrfDataset, IdentError>
where
    S: SisoSystem,
    F: Fn() -> S + Sync,
{
    if !(cfg.dt > 0.0 && cfg.record_s > 0.0 && cfg.settle_s >= 0.0) {
        return Err(IdentError::Invalid("non-positive timing".into()));
    }
    if freqs.iter().any(|f| !(*f > 0.0)) {
        return Err(IdentError::Invalid("frequencies must be positive".into()));
    }
    let points = freqs
        .par_iter()
        .map(|&f| stepped_sine_point(make(), f, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    FrfDataset::new(points, cfg.amplitude, cfg.record_s)
}

fn stepped_sine_point<S: SisoSystem>(
    mut sys: S,
    f: f64,
    cfg: &SteppedSineConfig,
) -> Result<FrfPoint, IdentError> {
    let n_settle = (cfg.settle_s / cfg.dt).round() as usize;
    let n_record = (cfg.record_s / cfg.dt).round() as usize;
    let w = 2.0 * PI * f;
    let mut t_rec = Vec::with_capacity(n_record);
    let mut u_rec = Vec::with_capacity(n_record);
    let mut y_rec = Vec::with_capacity(n_record);
    for i in 0..n_settle + n_record {
        let t = i as f64 * cfg.dt;
        let fade = if t < cfg.fade_in_s {
            0.5 * (1.0 - (PI * t / cfg.fade_in_s).cos())
        } else {
            1.0
        };
        let u = cfg.amplitude * fade * (w * t).sin();
        let y = sys.step(u);
        if !y.is_finite() || y.abs() > 1e6 * cfg.amplitude.abs().max(1.0) {
            return Err(IdentError::Unstable { freq_hz: f });
        }
        if i >= n_settle {
            t_rec.push(t);
            u_rec.push(u);
            y_rec.push(y);
        }
    }
    let u_fit = harmonic_fit(&u_rec, &t_rec, f, cfg.n_harmonics)?;
    let y_fit = harmonic_fit(&y_rec, &t_rec, f, cfg.n_harmonics)?;
    Ok(FrfPoint {
        freq_hz: f,
        response: frf_point(&u_fit, &y_fit, cfg.input_scale)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::RationalTf;

    fn grid(n: usize, periods: f64, f0: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * periods / (f0 * n as f64)).collect()
    }

    #[test]
    fn design_matrix_first_row() {
        let a = design_matrix(&[0.0], 2.0, 3).unwrap();
        assert_eq!(a.ncols(), 7);
        assert_eq!(a.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_period_columns_orthogonal() {
        let t = grid(64, 1.0, 1.5);
        let a = design_matrix(&t, 1.5, 3).unwrap();
        let g = a.transpose() * &a;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                if i != j {
                    assert!(g[(i, j)].abs() < 1e-10, "({i},{j}) = {}", g[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn exact_first_harmonic_and_offset() {
        let f0 = 0.7;
        let t = grid(1000, 2.0, f0);
        let y: Vec<f64> = t
            .iter()
            .map(|&t| 3.0 * (2.0 * PI * f0 * t).cos() + 4.0 * (2.0 * PI * f0 * t).sin() + 2.0)
            .collect();
        let fit = harmonic_fit(&y, &t, f0, 1).unwrap();
        assert!((fit.a_c[0] - 3.0).abs() < 1e-10);
        assert!((fit.b_s[0] - 4.0).abs() < 1e-10);
        assert!((fit.a0 - 2.0).abs() < 1e-10);
        let c = fourier_coeff(&fit);
        assert!((c - Complex64::new(1.5, -2.0)).norm() < 1e-10);
    }

    #[test]
    fn third_harmonic_isolated() {
        let f0 = 2.0;
        let t = grid(900, 3.0, f0);
        let y: Vec<f64> = t.iter().map(|&t| (6.0 * PI * f0 * t).sin()).collect();
        let fit = harmonic_fit(&y, &t, f0, 3).unwrap();
        assert!(fit.a_c[0].abs() < 1e-10 && fit.b_s[0].abs() < 1e-10);
        assert!((fit.b_s[2] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rank_deficiency_names_harmonic() {
        // samples at integer periods make every sine column vanish
        let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = vec![1.0; 20];
        match harmonic_fit(&y, &t, 1.0, 2) {
            Err(IdentError::RankDeficient { .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            harmonic_fit(&[1.0, 2.0], &[0.0, 0.1], 1.0, 1),
            Err(IdentError::TooFewSamples { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn quarter_period_delay_is_minus_i() {
        let f0 = 1.0;
        let t = grid(400, 2.0, f0);
        let u: Vec<f64> = t.iter().map(|&t| (2.0 * PI * t).sin()).collect();
        let y: Vec<f64> = t.iter().map(|&t| (2.0 * PI * (t - 0.25)).sin()).collect();
        let uf = harmonic_fit(&u, &t, f0, 1).unwrap();
        let yf = harmonic_fit(&y, &t, f0, 1).unwrap();
        assert!((frf_point(&uf, &yf, 1.0).unwrap() - Complex64::new(0.0, -1.0)).norm() < 1e-10);
        assert!((frf_point(&uf, &uf, 1.0).unwrap() - 1.0).norm() < 1e-12);
    }

    #[test]
    fn zero_excitation_guarded() {
        let g = RationalTf::continuous(&[1.0], &[1.0, 1.0]).unwrap();
        let cfg = SteppedSineConfig {
            amplitude: 0.0,
            settle_s: 1.0,
            record_s: 1.0,
            dt: 1e-3,
            ..SteppedSineConfig::default()
        };
        let res = stepped_sine_frf(|| SisoStepper::from_tf(&g, cfg.dt).unwrap(), &[1.0], &cfg);
        assert!(matches!(res, Err(IdentError::DivisionGuard { .. })));
    }

    #[test]
    fn first_order_lag_frf() {
        let g = RationalTf::continuous(&[2.0], &[2.0, 1.0]).unwrap();
        let cfg = SteppedSineConfig {
            settle_s: 5.0,
            record_s: 5.0,
            fade_in_s: 2.0,
            ..SteppedSineConfig::default()
        };
        let freqs = [0.2, 1.0, 3.0];
        let frf = stepped_sine_frf(|| SisoStepper::from_tf(&g, cfg.dt).unwrap(), &freqs, &cfg)
            .unwrap();
        for p in &frf.points {
            let exact = g.freq_response(p.freq_hz).unwrap();
            assert!((p.response.norm() / exact.norm() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn unordered_frequencies_rejected() {
        let p = |f| FrfPoint {
            freq_hz: f,
            response: Complex64::new(1.0, 0.0),
        };
        assert!(FrfDataset::new(vec![p(2.0), p(1.0)], 1.0, 1.0).is_err());
        assert!(FrfDataset::new(vec![p(0.0)], 1.0, 1.0).is_err());
    }
}
