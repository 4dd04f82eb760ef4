//! Multirate closed-loop simulation of the rig: the plant, virtual motor and
//! backlash advance at the plant rate, the controller at its own rate with
//! its output held in between.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{pid_tf, ControlError, ImcDesign, ImcSettings, PidParams, ReferenceModel};
use crate::ident::{fit_decay, fourier_coeff, harmonic_fit, DecayFit, DecayGuess};
use crate::lti::{LtiError, RationalTf, SisoStepper};
use crate::nonlin::{dead_zone, BacklashState, DeadZoneSpec};
use crate::plant::{
    build_g2_perturbed, build_motor_chain, LumpedParams, MassPerturbation, PlantError,
    VirtualMotorParams,
};

/// Output magnitude treated as divergence [m].
pub const DIVERGENCE_BOUND: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("simulation diverged at t = {t} s")]
    Divergence { t: f64, trace: Box<SimTrace> },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Pid,
    ImcLinear,
    ImcDz,
    ImcDzEstimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Step { amp: f64 },
    Square { amp: f64, period: f64 },
    Sine { amp: f64, freq_hz: f64 },
}

impl Command {
    pub fn value(&self, t: f64) -> f64 {
        command_signal(self, t)
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            Command::Step { amp } | Command::Square { amp, .. } | Command::Sine { amp, .. } => amp,
        }
    }
}

/// `step`: `amp` for `t >= 0`; `square`: `amp sgn(sin(2 pi t / period))`
/// with the first half period positive; `sine`: `amp sin(2 pi f t)`.
pub fn command_signal(kind: &Command, t: f64) -> f64 {
    match *kind {
        Command::Step { amp } => {
            if t >= 0.0 {
                amp
            } else {
                0.0
            }
        }
        Command::Square { amp, period } => {
            if t < 0.0 {
                return 0.0;
            }
            if (t / period).rem_euclid(1.0) < 0.5 {
                amp
            } else {
                -amp
            }
        }
        Command::Sine { amp, freq_hz } => amp * (2.0 * std::f64::consts::PI * freq_hz * t).sin(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BacklashSchedule {
    Constant {
        gap: f64,
    },
    /// Zero until `phase`, then one `step` more at the start of every
    /// `interval`, capped at `max`.
    Staircase {
        step: f64,
        interval: f64,
        max: f64,
        #[serde(default = "default_phase")]
        phase: f64,
    },
}

fn default_phase() -> f64 {
    15.0
}

impl BacklashSchedule {
    pub fn staircase(step: f64, interval: f64, max: f64) -> Self {
        BacklashSchedule::Staircase {
            step,
            interval,
            max,
            phase: default_phase(),
        }
    }
}

pub fn backlash_schedule_value(schedule: &BacklashSchedule, t: f64) -> f64 {
    match *schedule {
        BacklashSchedule::Constant { gap } => gap,
        BacklashSchedule::Staircase {
            step,
            interval,
            max,
            phase,
        } => {
            if t < phase {
                0.0
            } else {
                let n = ((t - phase) / interval).floor() + 1.0;
                (n * step).min(max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub architecture: Architecture,
    pub command: Command,
    pub backlash: BacklashSchedule,
    pub duration: f64,
    pub plant_rate_hz: f64,
    pub controller_rate_hz: f64,
    /// The rig.
    pub plant: LumpedParams,
    pub perturbation: MassPerturbation,
    pub motor: VirtualMotorParams,
    pub km: f64,
    /// Parameters the IMC is designed against; the rig's when absent.
    pub model: Option<LumpedParams>,
    /// Dead-zone width and estimator gap are used only by the
    /// architectures that include them.
    pub imc: ImcSettings,
    pub pid: PidParams,
    /// Multiplies the PID's position error (1e3 feeds it millimetres).
    pub pid_error_scale: f64,
    /// Standard deviation of Gaussian noise on the measured output [m].
    pub noise_std: f64,
    pub seed: u64,
    /// Keep every n-th plant sample in the trace.
    pub record_every: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            architecture: Architecture::ImcLinear,
            command: Command::Step { amp: 1e-3 },
            backlash: BacklashSchedule::Constant { gap: 0.0 },
            duration: 10.0,
            plant_rate_hz: 1e4,
            controller_rate_hz: 1e3,
            plant: LumpedParams::default(),
            perturbation: MassPerturbation::default(),
            motor: VirtualMotorParams::default(),
            km: 1.0,
            model: None,
            imc: ImcSettings {
                dead_zone: DeadZoneSpec {
                    width: 0.9_f64.to_radians(),
                },
                ..ImcSettings::default()
            },
            pid: PidParams::default(),
            pid_error_scale: 1e3,
            noise_std: 0.0,
            seed: 0,
            record_every: 1,
        }
    }
}

impl Scenario {
    /// Plant ticks per controller tick.
    pub fn rate_ratio(&self) -> Result<usize, SimError> {
        if !(self.plant_rate_hz > 0.0 && self.controller_rate_hz > 0.0) {
            return Err(SimError::Invalid("rates must be positive".into()));
        }
        let ratio = self.plant_rate_hz / self.controller_rate_hz;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
            return Err(SimError::Invalid(format!(
                "controller rate {} Hz does not divide plant rate {} Hz",
                self.controller_rate_hz, self.plant_rate_hz
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.rate_ratio()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SimError::Invalid(format!("duration {}", self.duration)));
        }
        if self.record_every == 0 {
            return Err(SimError::Invalid("record_every must be at least 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(SimError::Invalid(format!("noise std {}", self.noise_std)));
        }
        match self.command {
            Command::Square { period, .. } if !(period > 0.0) => {
                return Err(SimError::Invalid(format!("square period {period}")))
            }
            Command::Sine { freq_hz, .. } if !(freq_hz > 0.0) => {
                return Err(SimError::Invalid(format!("sine frequency {freq_hz}")))
            }
            _ => {}
        }
        match self.backlash {
            BacklashSchedule::Constant { gap } if !(gap >= 0.0) => {
                return Err(SimError::Invalid(format!("gap {gap}")))
            }
            BacklashSchedule::Staircase {
                step,
                interval,
                max,
                phase,
            } if !(step >= 0.0 && interval > 0.0 && max >= 0.0 && phase.is_finite()) => {
                return Err(SimError::Invalid("staircase schedule".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// IMC settings with the elements the architecture leaves out zeroed.
    pub fn effective_imc(&self) -> ImcSettings {
        let mut s = self.imc;
        match self.architecture {
            Architecture::Pid | Architecture::ImcLinear => {
                s.dead_zone = DeadZoneSpec::default();
                s.estimator_gap = 0.0;
            }
            Architecture::ImcDz => s.estimator_gap = 0.0,
            Architecture::ImcDzEstimator => {}
        }
        s
    }

    pub fn design(&self) -> Result<ImcDesign, SimError> {
        let model = self.model.as_ref().unwrap_or(&self.plant);
        Ok(ImcDesign::from_params(self.effective_imc(), model, &self.motor, self.km)?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub eps_hat: Vec<f64>,
    pub u: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub theta_d: Vec<f64>,
    pub theta_b_applied: Vec<f64>,
}

impl SimTrace {
    fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            y_hat: Vec::with_capacity(n),
            eps_hat: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            theta_m: Vec::with_capacity(n),
            theta_d: Vec::with_capacity(n),
            theta_b_applied: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn sample_time(&self) -> Option<f64> {
        (self.t.len() > 1).then(|| (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64)
    }

    /// Samples with `t0 <= t < t1`.
    pub fn window(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        self.t.partition_point(|&t| t < t0)..self.t.partition_point(|&t| t < t1)
    }
}

/// Motor chain, backlash and transmission, stepped at the plant rate.
#[derive(Debug, Clone)]
struct Rig {
    g1: SisoStepper,
    g2: SisoStepper,
    play: BacklashState,
    pitch: f64,
    theta_m: f64,
    theta_d: f64,
    y: f64,
}

impl Rig {
    fn new(g1: &RationalTf, g2: &RationalTf, pitch: f64, dt: f64) -> Result<Self, LtiError> {
        Ok(Self {
            g1: SisoStepper::from_tf(g1, dt)?,
            g2: SisoStepper::from_tf(g2, dt)?,
            play: BacklashState::new(0.0),
            pitch,
            theta_m: 0.0,
            theta_d: 0.0,
            y: 0.0,
        })
    }

    /// Refreshes the outputs for the current state under gap `gap`.
    #[inline]
    fn observe(&mut self, gap: f64) {
        self.theta_m = self.g1.output(0.0);
        self.play.gap = gap;
        self.theta_d = self.play.update(self.theta_m);
        self.y = self.g2.output(self.pitch * self.theta_d);
    }

    #[inline]
    fn advance(&mut self, u: f64) {
        self.g1.advance(u);
        self.g2.advance(self.pitch * self.theta_d);
    }
}

enum Controller {
    Pid {
        c: SisoStepper,
        scale: f64,
    },
    Imc {
        w: SisoStepper,
        model: Box<Rig>,
        k_theta: f64,
        dz: DeadZoneSpec,
        est_gap: f64,
        est_fb: Option<BacklashState>,
        est_model: bool,
        u_model: f64,
    },
}

/// Runs the scenario from rest. On divergence the trace up to the failing
/// sample travels with the error.
pub fn run_scenario(sc: &Scenario) -> Result<SimTrace, SimError> {
    sc.validate()?;
    let ratio = sc.rate_ratio()?;
    let dt = 1.0 / sc.plant_rate_hz;
    let dt_c = dt * ratio as f64;

    let g1 = build_motor_chain(&sc.motor, sc.km)?;
    let g2 = build_g2_perturbed(&sc.plant, &sc.perturbation)?;
    let mut rig = Rig::new(&g1, &g2, sc.plant.pitch, dt)?;

    let mut ctrl = match sc.architecture {
        Architecture::Pid => Controller::Pid {
            c: SisoStepper::from_tf(&pid_tf(&sc.pid)?, dt_c)?,
            scale: sc.pid_error_scale,
        },
        _ => {
            let d = sc.design()?;
            let s = d.settings;
            let est_gap = s.estimator_gap;
            Controller::Imc {
                w: SisoStepper::from_tf(&d.w, dt_c)?,
                model: Box::new(Rig::new(&d.g1_hat, &d.g2_hat, d.pitch, dt)?),
                k_theta: s.k_theta,
                dz: s.dead_zone,
                est_gap,
                est_fb: (est_gap > 0.0 && s.estimator_in_feedback)
                    .then(|| BacklashState::new(est_gap)),
                est_model: est_gap > 0.0 && s.estimator_in_model,
                u_model: 0.0,
            }
        }
    };

    let mut rng = StdRng::seed_from_u64(sc.seed);
    let noise = Normal::new(0.0, sc.noise_std).map_err(|e| SimError::Invalid(e.to_string()))?;

    let n_steps = (sc.duration * sc.plant_rate_hz).round() as usize + 1;
    let mut trace = SimTrace::with_capacity(n_steps / sc.record_every + 1);
    let (mut u, mut y_hat, mut eps_hat) = (0.0, 0.0, 0.0);

    for k in 0..n_steps {
        let t = k as f64 * dt;
        let gap = backlash_schedule_value(&sc.backlash, t);
        let r = command_signal(&sc.command, t);
        rig.observe(gap);
        if let Controller::Imc {
            model, est_model, est_gap, ..
        } = &mut ctrl
        {
            model.observe(if *est_model { *est_gap } else { 0.0 });
            y_hat = model.y;
        }

        if k % ratio == 0 {
            let y_meas = if sc.noise_std > 0.0 {
                rig.y + noise.sample(&mut rng)
            } else {
                rig.y
            };
            match &mut ctrl {
                Controller::Pid { c, scale } => {
                    u = c.step(*scale * (r - y_meas));
                }
                Controller::Imc {
                    w,
                    model,
                    k_theta,
                    dz,
                    est_fb,
                    u_model,
                    ..
                } => {
                    eps_hat = y_meas - y_hat;
                    let theta_r = w.step(r - eps_hat);
                    let fb = match est_fb {
                        Some(e) => e.update(rig.theta_m),
                        None => rig.theta_m,
                    };
                    u = *k_theta * dead_zone(theta_r - fb, *dz);
                    *u_model = *k_theta * dead_zone(theta_r - model.theta_d, *dz);
                }
            }
        }

        if k % sc.record_every == 0 {
            trace.t.push(t);
            trace.r.push(r);
            trace.y.push(rig.y);
            trace.y_hat.push(y_hat);
            trace.eps_hat.push(eps_hat);
            trace.u.push(u);
            trace.theta_m.push(rig.theta_m);
            trace.theta_d.push(rig.theta_d);
            trace.theta_b_applied.push(gap);
        }
        if !(rig.y.abs() <= DIVERGENCE_BOUND) {
            return Err(SimError::Divergence {
                t,
                trace: Box::new(trace),
            });
        }

        rig.advance(u);
        if let Controller::Imc { model, u_model, .. } = &mut ctrl {
            model.advance(*u_model);
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    /// Time after which `|y - r_final|` stays within 2% of the command
    /// amplitude; `None` when the trace ends unsettled.
    pub settling_time_2pct: Option<f64>,
    pub overshoot_pct: f64,
    pub residual: Option<DecayFit>,
    /// Why the decay fit failed, when it did.
    pub residual_error: Option<String>,
    pub control_peak: f64,
    pub control_l2: f64,
    /// Lag of the output's fundamental behind the command (sine only).
    pub fundamental_phase_deg: Option<f64>,
}

/// Metrics of a step-like trace; the decay fit uses the samples after
/// `t_s`, centred on their mean.
pub fn compute_metrics(trace: &SimTrace, command: &Command, t_s: f64) -> TraceMetrics {
    let n = trace.len();
    let dt = trace.sample_time().unwrap_or(0.0);
    let amp = command.amplitude().abs();
    let r_final = trace.r.last().copied().unwrap_or(0.0);

    let settling_time_2pct = if n == 0 || amp == 0.0 {
        None
    } else {
        let band = 0.02 * amp;
        match trace.y.iter().rposition(|&y| (y - r_final).abs() > band) {
            None => Some(trace.t[0]),
            Some(i) if i + 1 < n => Some(trace.t[i + 1]),
            Some(_) => None,
        }
    };

    let overshoot_pct = if r_final != 0.0 {
        let peak = trace
            .y
            .iter()
            .map(|y| y * r_final.signum())
            .fold(f64::NEG_INFINITY, f64::max);
        (100.0 * (peak - r_final.abs()) / r_final.abs()).max(0.0)
    } else {
        0.0
    };

    let (residual, residual_error) = residual_fit(trace, t_s);

    let control_peak = trace.u.iter().fold(0.0_f64, |m, u| m.max(u.abs()));
    let control_l2 = (trace.u.iter().map(|u| u * u).sum::<f64>() * dt).sqrt();

    let fundamental_phase_deg = match *command {
        Command::Sine { freq_hz, .. } => {
            let w = trace.window(t_s, f64::INFINITY);
            fundamental_lag_deg(&trace.t[w.clone()], &trace.r[w.clone()], &trace.y[w], freq_hz)
        }
        _ => None,
    };

    TraceMetrics {
        settling_time_2pct,
        overshoot_pct,
        residual,
        residual_error,
        control_peak,
        control_l2,
        fundamental_phase_deg,
    }
}

fn residual_fit(trace: &SimTrace, t_s: f64) -> (Option<DecayFit>, Option<String>) {
    let w = trace.window(t_s, f64::INFINITY);
    let (t, y) = (&trace.t[w.clone()], &trace.y[w]);
    if t.is_empty() {
        return (None, Some(format!("no samples after {t_s} s")));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let eta: Vec<f64> = y.iter().map(|v| v - mean).collect();
    match fit_decay(&eta, t, t_s, DecayGuess::default()) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

/// Phase of the command's fundamental minus the output's, in degrees,
/// wrapped to (-180, 180].
pub fn fundamental_lag_deg(t: &[f64], r: &[f64], y: &[f64], freq_hz: f64) -> Option<f64> {
    let fr = harmonic_fit(r, t, freq_hz, 1).ok()?;
    let fy = harmonic_fit(y, t, freq_hz, 1).ok()?;
    let ratio = fourier_coeff(&fr) / fourier_coeff(&fy);
    ratio.is_finite().then(|| ratio.arg().to_degrees())
}

/// One command period of a sine-tracking trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub t_start: f64,
    /// Gap at the middle of the cycle [rad].
    pub gap: f64,
    pub lag_deg: f64,
    pub control_peak: f64,
}

/// Splits the trace into whole command periods from `t_start` and
/// measures each.
pub fn per_cycle_stats(trace: &SimTrace, freq_hz: f64, t_start: f64) -> Vec<CycleStats> {
    let period = 1.0 / freq_hz;
    let end = trace.t.last().copied().unwrap_or(0.0);
    let mut out = Vec::new();
    let mut t0 = t_start;
    while t0 + period <= end + 1e-9 {
        let w = trace.window(t0, t0 + period);
        if let Some(lag) = fundamental_lag_deg(
            &trace.t[w.clone()],
            &trace.r[w.clone()],
            &trace.y[w.clone()],
            freq_hz,
        ) {
            let mid = w.start + (w.end - w.start) / 2;
            out.push(CycleStats {
                t_start: t0,
                gap: trace.theta_b_applied[mid],
                lag_deg: lag,
                control_peak: trace.u[w].iter().fold(0.0_f64, |m, u| m.max(u.abs())),
            });
        }
        t0 += period;
    }
    out
}

/// Dominant sinusoid of a record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub freq_hz: f64,
    /// First-harmonic amplitude.
    pub amplitude: f64,
}

/// Frequency in `[f_lo, f_hi]` whose single-harmonic least-squares fit
/// leaves the smallest residual: a grid scan then golden-section. Long
/// records are thinned to about 4000 samples.
pub fn fit_oscillation(t: &[f64], y: &[f64], f_lo: f64, f_hi: f64) -> Option<Oscillation> {
    if t.len() != y.len() || t.len() < 8 || !(f_lo > 0.0 && f_hi > f_lo) {
        return None;
    }
    let stride = (t.len() / 4000).max(1);
    let ts: Vec<f64> = t.iter().step_by(stride).copied().collect();
    let ys: Vec<f64> = y.iter().step_by(stride).copied().collect();
    let cost = |f: f64| -> f64 {
        match harmonic_fit(&ys, &ts, f, 1) {
            Ok(h) => ts.iter().zip(&ys).map(|(&t, &y)| (y - h.eval(t)).powi(2)).sum(),
            Err(_) => f64::INFINITY,
        }
    };
    let n = 200;
    let grid: Vec<f64> = (0..n)
        .map(|i| f_lo * (f_hi / f_lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    let costs: Vec<f64> = grid.iter().map(|&f| cost(f)).collect();
    let i = (0..n).min_by(|&a, &b| costs[a].total_cmp(&costs[b]))?;
    let (mut a, mut b) = (grid[i.saturating_sub(1)], grid[(i + 1).min(n - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = cost(d);
        }
    }
    let f = 0.5 * (a + b);
    let h = harmonic_fit(&ys, &ts, f, 1).ok()?;
    Some(Oscillation {
        freq_hz: f,
        amplitude: h.a_c[0].hypot(h.b_s[0]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Dead-zone half-width [rad].
    DeadZone,
    /// Estimator gap [rad].
    EstimatorGap,
    /// Reference-model settling time [s].
    TauR,
    /// Constant backlash gap [rad].
    Backlash,
    /// Added to the model's plate mass [kg].
    MassMismatch,
    /// Added to the model's stiffness [N/m].
    StiffnessMismatch,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::DeadZone => "dead_zone",
            SweepAxis::EstimatorGap => "estimator_gap",
            SweepAxis::TauR => "tau_r",
            SweepAxis::Backlash => "backlash",
            SweepAxis::MassMismatch => "mass_mismatch",
            SweepAxis::StiffnessMismatch => "stiffness_mismatch",
        }
    }

    /// Applies `value` to a copy of `sc`.
    pub fn apply(&self, sc: &Scenario, value: f64) -> Scenario {
        let mut s = sc.clone();
        match self {
            SweepAxis::DeadZone => s.imc.dead_zone = DeadZoneSpec { width: value },
            SweepAxis::EstimatorGap => s.imc.estimator_gap = value,
            SweepAxis::TauR => {
                s.imc.reference = ReferenceModel {
                    tau_r: value,
                    ..s.imc.reference
                }
            }
            SweepAxis::Backlash => s.backlash = BacklashSchedule::Constant { gap: value },
            SweepAxis::MassMismatch => {
                let mut m = s.model.unwrap_or(s.plant);
                m.m += value;
                s.model = Some(m);
            }
            SweepAxis::StiffnessMismatch => {
                let mut m = s.model.unwrap_or(s.plant);
                m.k += value;
                s.model = Some(m);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub values: Vec<(SweepAxis, f64)>,
    pub metrics: Option<TraceMetrics>,
    pub error: Option<String>,
}

/// One run per value of `axis`, in input order.
pub fn sweep(base: &Scenario, axis: SweepAxis, values: &[f64], t_s: f64) -> Vec<SweepCell> {
    let cells: Vec<Vec<(SweepAxis, f64)>> = values.iter().map(|&v| vec![(axis, v)]).collect();
    run_cells(base, &cells, t_s)
}

/// Full grid over two axes; the second axis varies fastest.
pub fn sweep_grid(
    base: &Scenario,
    a: (SweepAxis, &[f64]),
    b: (SweepAxis, &[f64]),
    t_s: f64,
) -> Vec<SweepCell> {
    let cells: Vec<Vec<(SweepAxis, f64)>> = a
        .1
        .iter()
        .flat_map(|&va| b.1.iter().map(move |&vb| vec![(a.0, va), (b.0, vb)]))
        .collect();
    run_cells(base, &cells, t_s)
}

/// Runs each cell independently; a failing cell records its error and the
/// others carry on.
pub fn run_cells(base: &Scenario, cells: &[Vec<(SweepAxis, f64)>], t_s: f64) -> Vec<SweepCell> {
    cells
        .par_iter()
        .map(|values| {
            let sc = values.iter().fold(base.clone(), |s, (ax, v)| ax.apply(&s, *v));
            match run_scenario(&sc) {
                Ok(tr) => SweepCell {
                    values: values.clone(),
                    metrics: Some(compute_metrics(&tr, &sc.command, t_s)),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell {values:?} failed: {e}");
                    SweepCell {
                        values: values.clone(),
                        metrics: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}
