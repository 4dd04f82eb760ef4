//! Describing-function analysis of the loops closed around the backlash:
//! open-loop transfer functions, the `-1/N` locus, and limit-cycle search.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{equivalent_controller, inner_loop_tf, pid_tf, ControlError, ImcDesign, PidParams};
use crate::lti::{LtiError, RationalTf};
use crate::nonlin::{describing_function, NonlinError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error("invalid search settings: {0}")]
    Invalid(String),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Nonlin(#[from] NonlinError),
}

/// Sampled complex curve with its parameter (Hz or chi).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocusCurve {
    pub points: Vec<(f64, Complex64)>,
}

/// Loop seen by the backlash under IMC: `C_e G_theta p G2`, with `G_theta`
/// closed around the actual motor chain `g1`.
pub fn open_loop_imc(
    d: &ImcDesign,
    g1: &RationalTf,
    g2: &RationalTf,
) -> Result<RationalTf, AnalysisError> {
    let ce = equivalent_controller(d).map_err(|e| match e {
        ControlError::Degenerate(msg) => AnalysisError::Degenerate(msg),
        other => other.into(),
    })?;
    let g_theta = inner_loop_tf(d.settings.k_theta, g1)?;
    Ok(ce.series(&g_theta)?.series(&g2.scale(d.pitch))?)
}

/// Loop seen by the backlash under PID: `s_e C G1 p G2`, where `s_e`
/// converts the position error into the controller's input unit.
pub fn open_loop_pid(
    p: &PidParams,
    g1: &RationalTf,
    g2: &RationalTf,
    pitch: f64,
    error_scale: f64,
) -> Result<RationalTf, AnalysisError> {
    Ok(pid_tf(p)?
        .scale(error_scale)
        .series(g1)?
        .series(&g2.scale(pitch))?)
}

/// `-1/N(chi)` on the grid; the point at `chi = 1` is at infinity and skipped.
pub fn neg_inv_df_locus(chi_grid: &[f64]) -> Result<LocusCurve, AnalysisError> {
    let mut points = Vec::with_capacity(chi_grid.len());
    for &chi in chi_grid {
        let n = describing_function(chi)?.value;
        let p = -1.0 / n;
        if p.is_finite() {
            points.push((chi, p));
        } else {
            log::debug!("dropping chi = {chi}: -1/N is unbounded");
        }
    }
    Ok(LocusCurve { points })
}

/// Nyquist branch of `g` on `freqs`; samples next to poles are dropped.
pub fn nyquist_locus(g: &RationalTf, freqs: &[f64]) -> LocusCurve {
    let points = freqs
        .par_iter()
        .filter_map(|&f| match g.freq_response(f) {
            Ok(v) if v.is_finite() => Some((f, v)),
            _ => {
                log::debug!("dropping {f} Hz from the Nyquist locus");
                None
            }
        })
        .collect();
    LocusCurve { points }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfSearch {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub n_freq: usize,
    pub chi_grid: Vec<f64>,
    pub tol: f64,
}

impl Default for DfSearch {
    fn default() -> Self {
        Self {
            f_min_hz: 0.01,
            f_max_hz: 15.0,
            n_freq: 2000,
            chi_grid: uniform_chi_grid(500),
            tol: 1e-2,
        }
    }
}

/// `n` uniform points on `[0.001, 0.999]`.
pub fn uniform_chi_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5];
    }
    (0..n)
        .map(|i| 0.001 + 0.998 * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCyclePrediction {
    pub f_l: f64,
    pub chi_l: f64,
    /// `|G N + 1|` at the solution.
    pub gap_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleSearch {
    pub prediction: Option<LimitCyclePrediction>,
    /// Best point found, whether or not it passes the tolerance.
    pub best: LimitCyclePrediction,
    /// Smallest distance on the coarse grid.
    pub coarse_min: f64,
}

fn distance(g: Complex64, chi: f64) -> f64 {
    match describing_function(chi) {
        Ok(p) => (g * p.value + 1.0).norm(),
        Err(_) => f64::INFINITY,
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Searches for a solution of `G(i 2 pi f) N(chi) = -1`: a coarse scan of
/// `|G N + 1|` over the grid, alternating golden-section refinement in
/// log-frequency and chi, and a final Newton polish.
pub fn find_limit_cycle(g_ol: &RationalTf, search: &DfSearch) -> Result<LimitCycleSearch, AnalysisError> {
    if !(search.f_min_hz > 0.0 && search.f_max_hz > search.f_min_hz && search.n_freq >= 2) {
        return Err(AnalysisError::Invalid("frequency range".into()));
    }
    if search.chi_grid.is_empty() || search.chi_grid.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
        return Err(AnalysisError::Invalid("chi grid must lie inside (0, 1)".into()));
    }
    let freqs = log_grid(search.f_min_hz, search.f_max_hz, search.n_freq);
    let nyq = nyquist_locus(g_ol, &freqs);
    if nyq.points.is_empty() {
        return Err(AnalysisError::Degenerate("open loop has no finite samples".into()));
    }
    let ns: Vec<Complex64> = search
        .chi_grid
        .iter()
        .map(|&c| describing_function(c).map(|p| p.value))
        .collect::<Result<_, _>>()?;

    let (fi, ci, coarse_min) = nyq
        .points
        .par_iter()
        .enumerate()
        .map(|(i, &(_, g))| {
            let (j, d) = ns
                .iter()
                .map(|n| (g * n + 1.0).norm())
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((0, f64::INFINITY));
            (i, j, d)
        })
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap_or((0, 0, f64::INFINITY));

    // refinement windows are one coarse cell wide on each side and follow
    // the iterate
    let lf_half = (search.f_max_hz / search.f_min_hz).ln() / (search.n_freq - 1) as f64;
    let chi = &search.chi_grid;
    let chi_half = if chi.len() > 1 {
        chi.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    } else {
        0.5
    };
    let lf_bounds = (search.f_min_hz.ln(), search.f_max_hz.ln());
    let eval_g = |lf: f64| g_ol.freq_response(lf.exp()).ok();
    let mut lf = nyq.points[fi].0.ln();
    let mut c = chi[ci];
    let mut best = coarse_min;
    for _ in 0..200 {
        let Some(g) = eval_g(lf) else { break };
        let (nc, dc) = golden_min(
            |x| distance(g, x),
            (c - chi_half).max(1e-9),
            (c + chi_half).min(1.0 - 1e-9),
            60,
        );
        let (nlf, dlf) = golden_min(
            |x| eval_g(x).map_or(f64::INFINITY, |g| distance(g, nc)),
            (lf - lf_half).max(lf_bounds.0),
            (lf + lf_half).min(lf_bounds.1),
            60,
        );
        if dc.min(dlf) > best {
            break;
        }
        let step = (nc - c).abs() + if dlf <= dc { (nlf - lf).abs() } else { 0.0 };
        c = nc;
        if dlf <= dc {
            lf = nlf;
        }
        best = dc.min(dlf);
        if step < 1e-14 {
            break;
        }
    }
    // Newton polish of G(f) N(chi) = -1 in (ln f, chi)
    let residual = |lf: f64, c: f64| -> Option<Complex64> {
        let n = describing_function(c).ok()?.value;
        Some(eval_g(lf)? * n + 1.0)
    };
    for _ in 0..20 {
        let Some(r) = residual(lf, c) else { break };
        let h = 1e-7;
        let (Some(rf), Some(rc)) = (residual(lf + h, c), residual(lf, c + h)) else {
            break;
        };
        let (jf, jc) = ((rf - r) / h, (rc - r) / h);
        let det = jf.re * jc.im - jc.re * jf.im;
        if det.abs() < 1e-300 {
            break;
        }
        let dlf = -(r.re * jc.im - jc.re * r.im) / det;
        let dc = -(jf.re * r.im - r.re * jf.im) / det;
        let (tlf, tc) = (lf + dlf, c + dc);
        if !(tc > 0.0 && tc < 1.0 && tlf >= lf_bounds.0 && tlf <= lf_bounds.1) {
            break;
        }
        match residual(tlf, tc) {
            Some(tr) if tr.norm() < r.norm() => {
                lf = tlf;
                c = tc;
            }
            _ => break,
        }
    }
    let refined = LimitCyclePrediction {
        f_l: lf.exp(),
        chi_l: c,
        gap_distance: eval_g(lf).map_or(f64::INFINITY, |g| distance(g, c)),
    };
    // refinement never reports worse than the coarse optimum
    let best = if refined.gap_distance <= coarse_min {
        refined
    } else {
        LimitCyclePrediction {
            f_l: nyq.points[fi].0,
            chi_l: chi[ci],
            gap_distance: coarse_min,
        }
    };
    Ok(LimitCycleSearch {
        prediction: (best.gap_distance < search.tol).then_some(best),
        best,
        coarse_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputAmplitude {
    /// Backlash input amplitude `theta_b / chi` [rad].
    pub theta_m: f64,
    /// First-harmonic output amplitude [m].
    pub a_l: f64,
}

/// `|G2(f_l)| |N(chi_l)| Theta_m p`.
pub fn predict_output_amplitude(
    g2: &RationalTf,
    pred: &LimitCyclePrediction,
    theta_b: f64,
    pitch: f64,
) -> Result<OutputAmplitude, AnalysisError> {
    let theta_m = theta_b / pred.chi_l;
    let n = describing_function(pred.chi_l)?.value.norm();
    Ok(OutputAmplitude {
        theta_m,
        a_l: g2.freq_response(pred.f_l)?.norm() * n * theta_m * pitch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ImcSettings;
    use crate::plant::{build_g2, build_motor_chain, LumpedParams, VirtualMotorParams};

    fn plants() -> (RationalTf, RationalTf) {
        (
            build_motor_chain(&VirtualMotorParams::default(), 1.0).unwrap(),
            build_g2(&LumpedParams::default()).unwrap(),
        )
    }

    fn design() -> ImcDesign {
        ImcDesign::from_params(
            ImcSettings::default(),
            &LumpedParams::default(),
            &VirtualMotorParams::default(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn imc_open_loop_shape() {
        let (g1, g2) = plants();
        let d = design();
        let gol = open_loop_imc(&d, &g1, &g2).unwrap();
        assert!(gol.freq_response(0.0).is_err());
        let low = gol.freq_response(1e-4).unwrap();
        assert!((low.arg().to_degrees() + 90.0).abs() < 1.0);
        assert!(gol.freq_response(100.0).unwrap().norm() < 1e-2);

        let ce = equivalent_controller(&d).unwrap();
        let gth = inner_loop_tf(10.0, &g1).unwrap();
        for f in [0.2, 3.0, 9.0] {
            let direct = ce.freq_response(f).unwrap()
                * gth.freq_response(f).unwrap()
                * g2.freq_response(f).unwrap()
                * d.pitch;
            assert!((gol.freq_response(f).unwrap() / direct - 1.0).norm() < 1e-9);
        }
    }

    #[test]
    fn pure_double_integrator_phase() {
        let pid = PidParams {
            kp: 0.0,
            ki: 2.0,
            kd: 0.0,
            tf: 0.0,
        };
        let g = open_loop_pid(&pid, &RationalTf::integrator(1.0), &RationalTf::gain(1.0), 1.0, 1.0)
            .unwrap();
        for f in [0.1, 1.0, 10.0] {
            assert!((g.freq_response(f).unwrap().arg().abs().to_degrees() - 180.0).abs() < 1e-9);
        }
    }

    #[test]
    fn default_pid_crosses_negative_real_axis() {
        let (g1, g2) = plants();
        let g = open_loop_pid(&PidParams::default(), &g1, &g2, LumpedParams::default().pitch, 1e3)
            .unwrap();
        let freqs = log_grid(0.5, 15.0, 2000);
        let phases: Vec<f64> = freqs
            .iter()
            .map(|&f| g.freq_response(f).unwrap())
            .map(|v| v.im.atan2(v.re))
            .collect();
        // a crossing is a jump of the principal argument through +-180 deg
        assert!(phases.windows(2).any(|w| (w[0] - w[1]).abs() > std::f64::consts::PI));
        assert!(g.freq_response(1e4).unwrap().norm() < 1e-6);
    }

    #[test]
    fn locus_points() {
        let l = neg_inv_df_locus(&[1e-9, 0.5, 1.0]).unwrap();
        assert_eq!(l.points.len(), 2);
        assert!((l.points[0].1 + 1.0).norm() < 1e-6);
        let expected = -1.0 / Complex64::new(0.5, -1.0 / std::f64::consts::PI);
        assert!((l.points[1].1 - expected).norm() < 1e-12);
        assert!((expected.re + 1.424).abs() < 1e-3 && (expected.im + 0.9065).abs() < 1e-3);
    }

    #[test]
    fn negative_constant_loop_has_no_cycle() {
        let res = find_limit_cycle(&RationalTf::gain(-2.0), &DfSearch::default()).unwrap();
        assert!(res.prediction.is_none());
        assert!(res.best.gap_distance > 0.1);
    }

    #[test]
    fn refinement_never_worse_than_grid() {
        let (g1, g2) = plants();
        let g = open_loop_pid(&PidParams::default(), &g1, &g2, LumpedParams::default().pitch, 1e3)
            .unwrap();
        let res = find_limit_cycle(&g, &DfSearch::default()).unwrap();
        assert!(res.best.gap_distance <= res.coarse_min);
    }

    #[test]
    fn transparent_loop_amplitude() {
        let pred = LimitCyclePrediction {
            f_l: 1.0,
            chi_l: 1e-12,
            gap_distance: 0.0,
        };
        let out = predict_output_amplitude(&RationalTf::gain(1.0), &pred, 1e-12, 1.0).unwrap();
        assert!((out.a_l - out.theta_m).abs() < 1e-9);
        let half = LimitCyclePrediction {
            chi_l: 0.5,
            ..pred
        };
        let out = predict_output_amplitude(&RationalTf::gain(1.0), &half, 20f64.to_radians(), 1.0)
            .unwrap();
        assert!((out.theta_m.to_degrees() - 40.0).abs() < 1e-12);
    }
}
