//! Controller synthesis: filtered PID, the internal-model controller and its
//! reference model, and the robustness measures of the IMC loop.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{Domain, LtiError, Polynomial, RationalTf};
use crate::nonlin::DeadZoneSpec;
use crate::plant::{build_g2, build_motor_chain, LumpedParams, PlantError, VirtualMotorParams};

/// Zeros with a real part above this are treated as right-half-plane.
pub const MIN_PHASE_TOL: f64 = -1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("internal model is not minimum phase; offending zeros: {}", fmt_roots(.zeros))]
    NonMinimumPhase { zeros: Vec<Complex64> },
    #[error("internal model is unstable; poles: {}", fmt_roots(.poles))]
    UnstableModel { poles: Vec<Complex64> },
    #[error("reference model pole excess {reference} is below the model's {model}")]
    PoleExcess { reference: isize, model: isize },
    #[error("closed loop is unstable; poles: {poles:?}")]
    UnstableLoop { poles: Vec<Complex64> },
    #[error("invalid parameter {name} = {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("uncertainty bound is empty")]
    EmptyBound,
    #[error("sensitivity denominator vanishes at {freq_hz} Hz")]
    Singularity { freq_hz: f64 },
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

fn fmt_roots(r: &[Complex64]) -> String {
    r.iter()
        .map(|z| format!("{}{:+}i", z.re, z.im))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Parallel PID with a first-order filter on the derivative term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Derivative filter time constant [s].
    pub tf: f64,
}

impl Default for PidParams {
    fn default() -> Self {
        Self {
            kp: 1.59,
            ki: 1.01,
            kd: -0.56,
            tf: 0.35,
        }
    }
}

impl PidParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        for (name, value) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd), ("tf", self.tf)] {
            if !value.is_finite() {
                return Err(ControlError::Parameter { name, value });
            }
        }
        if self.kd != 0.0 && !(self.tf > 0.0) {
            return Err(ControlError::Parameter {
                name: "tf",
                value: self.tf,
            });
        }
        Ok(())
    }
}

pub fn pid_tf(p: &PidParams) -> Result<RationalTf, ControlError> {
    p.validate()?;
    if p.kd == 0.0 {
        return Ok(RationalTf::continuous(&[p.ki, p.kp], &[0.0, 1.0])?);
    }
    Ok(RationalTf::continuous(
        &[p.ki, p.kp + p.ki * p.tf, p.kp * p.tf + p.kd],
        &[0.0, 1.0, p.tf],
    )?)
}

/// Double-pole reference model `(1 / ((tau_r / tau_0) s + 1))^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub tau_r: f64,
    pub tau_0: f64,
}

impl Default for ReferenceModel {
    fn default() -> Self {
        Self {
            tau_r: 1.1379,
            tau_0: 6.6385,
        }
    }
}

impl ReferenceModel {
    pub fn with_tau_r(tau_r: f64) -> Self {
        Self {
            tau_r,
            ..Self::default()
        }
    }

    pub fn pole(&self) -> f64 {
        self.tau_0 / self.tau_r
    }
}

pub fn reference_model_tf(rm: &ReferenceModel) -> Result<RationalTf, ControlError> {
    if !(rm.tau_r > 0.0 && rm.tau_r.is_finite()) {
        return Err(ControlError::Parameter {
            name: "tau_r",
            value: rm.tau_r,
        });
    }
    if !(rm.tau_0 > 0.0 && rm.tau_0.is_finite()) {
        return Err(ControlError::Parameter {
            name: "tau_0",
            value: rm.tau_0,
        });
    }
    let a = rm.pole();
    let a2 = a * a;
    Ok(RationalTf::continuous(&[a2], &[a2, 2.0 * a, 1.0])?)
}

/// -3 dB frequency of the reference model [Hz].
pub fn bandwidth_hz(rm: &ReferenceModel) -> f64 {
    rm.tau_0 * (2.0_f64.sqrt() - 1.0).sqrt() / (2.0 * PI * rm.tau_r)
}

fn check_stable_min_phase(g: &RationalTf) -> Result<(), ControlError> {
    let bad_zeros: Vec<_> = g
        .zeros()?
        .into_iter()
        .filter(|z| z.re > MIN_PHASE_TOL)
        .collect();
    if !bad_zeros.is_empty() {
        return Err(ControlError::NonMinimumPhase { zeros: bad_zeros });
    }
    let poles = g.poles()?;
    if poles.iter().any(|p| p.re >= 0.0) {
        return Err(ControlError::UnstableModel { poles });
    }
    Ok(())
}

/// `W = Gr / G2_hat`, kept unreduced.
pub fn design_prefilter(gr: &RationalTf, g2_hat: &RationalTf) -> Result<RationalTf, ControlError> {
    check_stable_min_phase(g2_hat)?;
    if gr.relative_degree() < g2_hat.relative_degree() {
        return Err(ControlError::PoleExcess {
            reference: gr.relative_degree(),
            model: g2_hat.relative_degree(),
        });
    }
    if g2_hat.num().is_zero() {
        return Err(ControlError::Degenerate("internal model is identically zero".into()));
    }
    Ok(gr.series(&g2_hat.reciprocal()?)?)
}

/// `K G1 / (1 + K G1)`, rejected when unstable.
pub fn inner_loop_tf(k_theta: f64, g1: &RationalTf) -> Result<RationalTf, ControlError> {
    let closed = g1.scale(k_theta).feedback(&RationalTf::gain(1.0))?;
    let poles = closed.poles()?;
    if poles.iter().any(|p| p.re >= 0.0) {
        return Err(ControlError::UnstableLoop { poles });
    }
    Ok(closed)
}

pub fn complementary_sensitivity(
    gr: &RationalTf,
    g_theta: &RationalTf,
) -> Result<RationalTf, ControlError> {
    for g in [gr, g_theta] {
        let poles = g.poles()?;
        if poles.iter().any(|p| p.re >= 0.0) {
            return Err(ControlError::UnstableLoop { poles });
        }
    }
    Ok(gr.series(g_theta)?)
}

/// Knobs of an IMC design that are not transfer functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImcSettings {
    pub reference: ReferenceModel,
    pub k_theta: f64,
    /// Dead zone on the inner-loop angle error.
    pub dead_zone: DeadZoneSpec,
    /// Estimated gap [rad]; zero disables the estimator.
    pub estimator_gap: f64,
    /// Estimator on the measured motor angle in the inner feedback.
    pub estimator_in_feedback: bool,
    /// Estimator on the modelled motor angle ahead of the internal model.
    pub estimator_in_model: bool,
}

impl Default for ImcSettings {
    fn default() -> Self {
        Self {
            reference: ReferenceModel::default(),
            k_theta: 10.0,
            dead_zone: DeadZoneSpec::default(),
            estimator_gap: 0.0,
            estimator_in_feedback: true,
            estimator_in_model: true,
        }
    }
}

/// An internal-model controller. The prefilter inverts the transmission
/// including the pitch, so its output is a motor angle reference [rad].
#[derive(Debug, Clone, PartialEq)]
pub struct ImcDesign {
    pub settings: ImcSettings,
    pub gr: RationalTf,
    pub w: RationalTf,
    pub g1_hat: RationalTf,
    pub g2_hat: RationalTf,
    pub pitch: f64,
}

impl ImcDesign {
    /// Design against the lumped-parameter models.
    pub fn from_params(
        settings: ImcSettings,
        lp_hat: &LumpedParams,
        vp_hat: &VirtualMotorParams,
        km: f64,
    ) -> Result<Self, ControlError> {
        let g1_hat = build_motor_chain(vp_hat, km)?;
        let g2_hat = build_g2(lp_hat)?;
        Self::from_models(settings, g1_hat, g2_hat, lp_hat.pitch)
    }

    pub fn from_models(
        settings: ImcSettings,
        g1_hat: RationalTf,
        g2_hat: RationalTf,
        pitch: f64,
    ) -> Result<Self, ControlError> {
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(ControlError::Parameter {
                name: "pitch",
                value: pitch,
            });
        }
        if !(settings.k_theta.is_finite()) {
            return Err(ControlError::Parameter {
                name: "k_theta",
                value: settings.k_theta,
            });
        }
        if !(settings.dead_zone.width >= 0.0) {
            return Err(ControlError::Parameter {
                name: "dead_zone",
                value: settings.dead_zone.width,
            });
        }
        if !(settings.estimator_gap >= 0.0) {
            return Err(ControlError::Parameter {
                name: "estimator_gap",
                value: settings.estimator_gap,
            });
        }
        let gr = reference_model_tf(&settings.reference)?;
        let w = design_prefilter(&gr, &g2_hat.scale(pitch))?;
        inner_loop_tf(settings.k_theta, &g1_hat)?;
        Ok(Self {
            settings,
            gr,
            w,
            g1_hat,
            g2_hat,
            pitch,
        })
    }

    /// `G_theta` of the internal model.
    pub fn g_theta_hat(&self) -> Result<RationalTf, ControlError> {
        inner_loop_tf(self.settings.k_theta, &self.g1_hat)
    }

    pub fn is_linear(&self) -> bool {
        self.settings.dead_zone.width == 0.0 && self.settings.estimator_gap == 0.0
    }

    pub fn to_record(&self) -> DesignRecord {
        DesignRecord {
            tau_r: self.settings.reference.tau_r,
            tau_0: self.settings.reference.tau_0,
            k_theta: self.settings.k_theta,
            dead_zone_deg: self.settings.dead_zone.width.to_degrees(),
            estimator_gap_deg: self.settings.estimator_gap.to_degrees(),
            estimator_in_feedback: self.settings.estimator_in_feedback,
            estimator_in_model: self.settings.estimator_in_model,
            pitch_m_per_rad: self.pitch,
            gr: TfCoeffs::from(&self.gr),
            w: TfCoeffs::from(&self.w),
            g1_hat: TfCoeffs::from(&self.g1_hat),
            g2_hat: TfCoeffs::from(&self.g2_hat),
        }
    }

    /// Rebuilds a design from its record, taking every transfer function
    /// as stored.
    pub fn from_record(rec: &DesignRecord) -> Result<Self, ControlError> {
        Ok(Self {
            settings: ImcSettings {
                reference: ReferenceModel {
                    tau_r: rec.tau_r,
                    tau_0: rec.tau_0,
                },
                k_theta: rec.k_theta,
                dead_zone: DeadZoneSpec {
                    width: rec.dead_zone_deg.to_radians(),
                },
                estimator_gap: rec.estimator_gap_deg.to_radians(),
                estimator_in_feedback: rec.estimator_in_feedback,
                estimator_in_model: rec.estimator_in_model,
            },
            gr: rec.gr.to_tf()?,
            w: rec.w.to_tf()?,
            g1_hat: rec.g1_hat.to_tf()?,
            g2_hat: rec.g2_hat.to_tf()?,
            pitch: rec.pitch_m_per_rad,
        })
    }
}

/// Ascending coefficient arrays of a continuous transfer function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfCoeffs {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl From<&RationalTf> for TfCoeffs {
    fn from(g: &RationalTf) -> Self {
        Self {
            num: g.num().coeffs().to_vec(),
            den: g.den().coeffs().to_vec(),
        }
    }
}

impl TfCoeffs {
    pub fn to_tf(&self) -> Result<RationalTf, LtiError> {
        RationalTf::new(
            Polynomial::new(self.num.clone()),
            Polynomial::new(self.den.clone()),
            Domain::Continuous,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRecord {
    pub tau_r: f64,
    pub tau_0: f64,
    pub k_theta: f64,
    pub dead_zone_deg: f64,
    pub estimator_gap_deg: f64,
    pub estimator_in_feedback: bool,
    pub estimator_in_model: bool,
    pub pitch_m_per_rad: f64,
    pub gr: TfCoeffs,
    pub w: TfCoeffs,
    pub g1_hat: TfCoeffs,
    pub g2_hat: TfCoeffs,
}

/// `C_e = W / (1 - Gr G_theta_hat)`: the unity-feedback controller from the
/// tracking error to the motor angle reference.
pub fn equivalent_controller(d: &ImcDesign) -> Result<RationalTf, ControlError> {
    if !d.is_linear() {
        return Err(ControlError::Degenerate(
            "equivalent controller exists only for the linear design".into(),
        ));
    }
    let gth = d.g_theta_hat()?;
    // W G_theta_hat p G2_hat reduces to Gr G_theta_hat, which keeps the
    // integrator exact
    let open = d.gr.series(&gth)?;
    let one_minus = RationalTf::new(
        open.den() - open.num(),
        open.den().clone(),
        Domain::Continuous,
    )?;
    if one_minus.num().is_zero() {
        return Err(ControlError::Degenerate("1 - Gr G_theta vanishes".into()));
    }
    Ok(d.w.series(&one_minus.reciprocal()?)?)
}

/// Sampled radius `|Delta(f)|` of a multiplicative uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBound {
    pub samples: Vec<(f64, f64)>,
}

impl UncertaintyBound {
    /// `|G_alt / G_hat - 1|` on `freqs`.
    pub fn between(g_hat: &RationalTf, g_alt: &RationalTf, freqs: &[f64]) -> Result<Self, ControlError> {
        let samples = freqs
            .iter()
            .map(|&f| Ok((f, (g_alt.freq_response(f)? / g_hat.freq_response(f)? - 1.0).norm())))
            .collect::<Result<Vec<_>, LtiError>>()?;
        Ok(Self { samples })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustMargin {
    /// `min 1 / (|T0| |Delta|)`; infinite when the bound is identically zero.
    pub margin: f64,
    pub worst_freq_hz: Option<f64>,
}

pub fn robust_stability_margin(
    t0: &RationalTf,
    ub: &UncertaintyBound,
) -> Result<RobustMargin, ControlError> {
    if ub.samples.is_empty() {
        return Err(ControlError::EmptyBound);
    }
    let mut best = RobustMargin {
        margin: f64::INFINITY,
        worst_freq_hz: None,
    };
    for &(f, radius) in &ub.samples {
        let product = t0.freq_response(f)?.norm() * radius;
        if product > 0.0 && 1.0 / product < best.margin {
            best = RobustMargin {
                margin: 1.0 / product,
                worst_freq_hz: Some(f),
            };
        }
    }
    Ok(best)
}

/// `|(1 - Gr G_theta) / (1 + Gr G_theta_hat Delta)|` at each `(f, Delta)`.
pub fn sensitivity_magnitude(
    gr: &RationalTf,
    g_theta: &RationalTf,
    g_theta_hat: &RationalTf,
    delta: &[(f64, Complex64)],
) -> Result<Vec<(f64, f64)>, ControlError> {
    delta
        .iter()
        .map(|&(f, d)| {
            let r = gr.freq_response(f)?;
            let num = 1.0 - r * g_theta.freq_response(f)?;
            let den = 1.0 + r * g_theta_hat.freq_response(f)? * d;
            if den.norm() <= 1e-14 {
                return Err(ControlError::Singularity { freq_hz: f });
            }
            Ok((f, (num / den).norm()))
        })
        .collect()
}
