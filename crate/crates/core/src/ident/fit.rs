use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::lm::{self, LmOptions};
use super::{FrfDataset, IdentError};
use crate::lti::{Domain, Polynomial, RationalTf};
use crate::plant::{build_g2, LumpedParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumpedFit {
    pub params: LumpedParams,
    /// Half the sum of squared log-magnitude errors.
    pub cost: f64,
    pub iterations: usize,
    pub cost_trace: Vec<f64>,
    /// RMS phase error of the fitted model [deg]; not part of the cost.
    pub phase_rms_deg: f64,
}

/// Fits `m_m`, `c` and `k` to the log-magnitude of a measured `G2`.
///
/// `G2` only depends on the ratios of the four lumped parameters to each
/// other, so the plate mass cannot be identified from the FRF and is held
/// at `init.m` (a weighed quantity). The pitch is copied from `init`.
pub fn fit_lumped_params(frf: &FrfDataset, init: &LumpedParams) -> Result<LumpedFit, IdentError> {
    if frf.points.len() < 8 {
        return Err(IdentError::TooFewSamples {
            needed: 8,
            got: frf.points.len(),
        });
    }
    if let Err(e) = init.validate() {
        return Err(IdentError::Invalid(e.to_string()));
    }
    if frf.points.iter().any(|p| !(p.response.norm() > 0.0)) {
        return Err(IdentError::Degenerate("zero magnitude in the FRF".into()));
    }
    let measured: Vec<f64> = frf.points.iter().map(|p| p.response.norm().ln()).collect();
    let with = |x: &[f64]| LumpedParams {
        m_m: x[0].exp(),
        c: x[1].exp(),
        k: x[2].exp(),
        ..*init
    };
    let residual = |x: &[f64]| -> Option<Vec<f64>> {
        let g = build_g2(&with(x)).ok()?;
        frf.points
            .iter()
            .zip(&measured)
            .map(|(p, ln_meas)| {
                let v = g.freq_response(p.freq_hz).ok()?;
                let r = v.norm().ln() - ln_meas;
                r.is_finite().then_some(r)
            })
            .collect()
    };
    let x0 = [init.m_m.ln(), init.c.ln(), init.k.ln()];
    let out = lm::minimize(
        residual,
        &x0,
        LmOptions {
            max_iter: 500,
            gtol: 1e-8,
            ..LmOptions::default()
        },
        |_| {},
    );
    if !out.converged || !out.cost.is_finite() {
        return Err(IdentError::FitFailure {
            iterations: out.iterations,
            cost: out.cost,
            last: out.x,
            cost_trace: out.cost_trace,
        });
    }
    let params = with(&out.x);
    let g = build_g2(&params).map_err(|e| IdentError::Invalid(e.to_string()))?;
    let mut sq = 0.0;
    for p in &frf.points {
        let err = (g.freq_response(p.freq_hz)? / p.response).arg().to_degrees();
        sq += err * err;
    }
    Ok(LumpedFit {
        params,
        phase_rms_deg: (sq / frf.points.len() as f64).sqrt(),
        cost: out.cost,
        iterations: out.iterations,
        cost_trace: out.cost_trace,
    })
}

/// Linear least-squares rational fit `N(s)/D(s)` with a monic denominator,
/// minimizing the equation error `|N(s) - H D(s)|` at every point with unit
/// weights. Frequencies are normalized by the largest one before solving.
pub fn fit_rational_frf(
    frf: &FrfDataset,
    n_poles: usize,
    n_zeros: usize,
) -> Result<RationalTf, IdentError> {
    if n_zeros >= n_poles {
        return Err(IdentError::Improper { n_poles, n_zeros });
    }
    let unknowns = n_zeros + 1 + n_poles;
    if frf.points.len() < unknowns {
        return Err(IdentError::TooFewSamples {
            needed: unknowns,
            got: frf.points.len(),
        });
    }
    let w_ref = 2.0 * PI * frf.points.last().map_or(1.0, |p| p.freq_hz);
    let rows = 2 * frf.points.len();
    let mut a = DMatrix::zeros(rows, unknowns);
    let mut b = DVector::zeros(rows);
    for (i, p) in frf.points.iter().enumerate() {
        let s = num_complex::Complex64::new(0.0, 2.0 * PI * p.freq_hz / w_ref);
        let h = p.response;
        let mut sk = num_complex::Complex64::new(1.0, 0.0);
        for k in 0..=n_poles {
            if k <= n_zeros {
                a[(2 * i, k)] = sk.re;
                a[(2 * i + 1, k)] = sk.im;
            }
            let hs = h * sk;
            if k < n_poles {
                a[(2 * i, n_zeros + 1 + k)] = -hs.re;
                a[(2 * i + 1, n_zeros + 1 + k)] = -hs.im;
            } else {
                b[2 * i] = hs.re;
                b[2 * i + 1] = hs.im;
            }
            sk *= s;
        }
    }
    // column equilibration keeps the factorization well scaled
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    if norms.iter().any(|n| !(*n > 0.0)) {
        return Err(IdentError::Singular);
    }
    for (j, n) in norms.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / n);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-13 * smax {
        return Err(IdentError::Singular);
    }
    let x = svd.solve(&b, 0.0).map_err(|_| IdentError::Singular)?;
    let x: Vec<f64> = x.iter().zip(&norms).map(|(v, n)| v / n).collect();

    let num: Vec<f64> = (0..=n_zeros)
        .map(|k| x[k] * w_ref.powi(n_poles as i32 - k as i32))
        .collect();
    let mut den: Vec<f64> = (0..n_poles)
        .map(|k| x[n_zeros + 1 + k] * w_ref.powi(n_poles as i32 - k as i32))
        .collect();
    den.push(1.0);
    Ok(RationalTf::new(
        Polynomial::new(num),
        Polynomial::new(den),
        Domain::Continuous,
    )?)
}

/// Single-mode decay `A exp(-2 pi f zeta tau) sin(2 pi f sqrt(1 - zeta^2) tau + phi)`
/// with `tau = t - t_s`; `phase` is therefore the phase at `t_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub damping_ratio: f64,
    pub phase: f64,
    pub t_s: f64,
    pub r_squared: f64,
}

impl DecayFit {
    pub fn eval(&self, t: f64) -> f64 {
        decay_model(
            [self.amplitude, self.frequency_hz, self.damping_ratio, self.phase],
            t - self.t_s,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecayGuess {
    pub frequency_hz: Option<f64>,
    pub damping_ratio: Option<f64>,
}

fn decay_model(p: [f64; 4], tau: f64) -> f64 {
    let [a, f, z, phi] = p;
    let w = 2.0 * PI * f;
    a * (-w * z * tau).exp() * (w * (1.0 - z * z).sqrt() * tau + phi).sin()
}

fn dominant_frequency(eta: &[f64], dt: f64) -> Option<f64> {
    let n = (4 * eta.len()).next_power_of_two();
    let mean = eta.iter().sum::<f64>() / eta.len() as f64;
    let mut buf: Vec<Complex<f64>> = eta
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
    let (k, _) = mags
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    // parabolic interpolation on the log magnitude
    let offset = if k + 1 < mags.len() && mags[k - 1] > 0.0 && mags[k + 1] > 0.0 {
        let (l, c, r) = (mags[k - 1].ln(), mags[k].ln(), mags[k + 1].ln());
        let den = l - 2.0 * c + r;
        if den != 0.0 {
            (0.5 * (l - r) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    Some((k as f64 + offset) / (n as f64 * dt))
}

/// Fits the single-mode decay to the samples of `eta` at or after `t_s`.
/// `t` must be uniformly sampled.
pub fn fit_decay(
    eta: &[f64],
    t: &[f64],
    t_s: f64,
    guess: DecayGuess,
) -> Result<DecayFit, IdentError> {
    if eta.len() != t.len() {
        return Err(IdentError::Invalid("eta and t differ in length".into()));
    }
    let start = t.partition_point(|&ti| ti < t_s);
    let (eta, t) = (&eta[start..], &t[start..]);
    if t.len() < 16 {
        return Err(IdentError::TooFewSamples {
            needed: 16,
            got: t.len(),
        });
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let mean = eta.iter().sum::<f64>() / eta.len() as f64;
    let ss_tot: f64 = eta.iter().map(|v| (v - mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(IdentError::Degenerate("signal has no variation".into()));
    }
    let f0 = match guess.frequency_hz {
        Some(f) => f,
        None => dominant_frequency(eta, dt)
            .ok_or_else(|| IdentError::Degenerate("no spectral peak".into()))?,
    };
    let span = t[t.len() - 1] - t_s;
    if f0 * span < 5.0 {
        return Err(IdentError::Degenerate(format!(
            "record holds {:.2} cycles of {f0:.4} Hz, at least 5 needed",
            f0 * span
        )));
    }
    let z0 = guess.damping_ratio.unwrap_or(0.005);

    // amplitude and phase for the guessed frequency and damping are linear
    let w0 = 2.0 * PI * f0;
    let wd0 = w0 * (1.0 - z0 * z0).sqrt();
    let mut basis = DMatrix::zeros(t.len(), 2);
    for (i, &ti) in t.iter().enumerate() {
        let tau = ti - t_s;
        let env = (-w0 * z0 * tau).exp();
        basis[(i, 0)] = env * (wd0 * tau).sin();
        basis[(i, 1)] = env * (wd0 * tau).cos();
    }
    let ab = basis
        .svd(true, true)
        .solve(&DVector::from_column_slice(eta), 0.0)
        .map_err(|_| IdentError::Singular)?;
    let a0 = ab[0].hypot(ab[1]);
    let phi0 = ab[1].atan2(ab[0]);

    let residual = |p: &[f64]| -> Option<Vec<f64>> {
        let p = [p[0], p[1], p[2], p[3]];
        Some(
            t.iter()
                .zip(eta)
                .map(|(&ti, &e)| decay_model(p, ti - t_s) - e)
                .collect(),
        )
    };
    let out = lm::minimize(
        residual,
        &[a0, f0, z0, phi0],
        LmOptions {
            max_iter: 300,
            ..LmOptions::default()
        },
        |p| {
            p[1] = p[1].abs().max(1e-9);
            p[2] = p[2].clamp(0.0, 0.999);
        },
    );
    if !out.converged {
        return Err(IdentError::FitFailure {
            iterations: out.iterations,
            cost: out.cost,
            last: out.x,
            cost_trace: out.cost_trace,
        });
    }
    let [mut a, f, z, mut phi] = [out.x[0], out.x[1], out.x[2], out.x[3]];
    if a < 0.0 {
        a = -a;
        phi += PI;
    }
    phi = (phi + PI).rem_euclid(2.0 * PI) - PI;
    Ok(DecayFit {
        amplitude: a,
        frequency_hz: f,
        damping_ratio: z,
        phase: phi,
        t_s,
        r_squared: 1.0 - 2.0 * out.cost / ss_tot,
    })
}
