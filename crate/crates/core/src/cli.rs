//! Command-line front end. Configs are JSON with angles in degrees, lengths
//! in millimetres and stiffness in N/mm; everything is converted to SI on
//! the way in.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    find_limit_cycle, log_grid, neg_inv_df_locus, nyquist_locus, open_loop_imc, open_loop_pid,
    predict_output_amplitude, uniform_chi_grid, AnalysisError, DfSearch, LimitCycleSearch,
    LocusCurve,
};
use crate::control::{
    bandwidth_hz, complementary_sensitivity, inner_loop_tf, robust_stability_margin,
    sensitivity_magnitude, ControlError, DesignRecord, ImcDesign, ImcSettings, PidParams,
    ReferenceModel, RobustMargin, TfCoeffs, UncertaintyBound,
};
use crate::ident::{
    fit_lumped_params, fit_rational_frf, stepped_sine_frf, IdentError, SteppedSineConfig,
};
use crate::lti::{RationalTf, SisoStepper};
use crate::nonlin::DeadZoneSpec;
use crate::plant::{
    build_g2, build_g2_perturbed, build_motor_chain, LumpedParams, MassPerturbation,
    VirtualMotorParams,
};
use crate::sim::{
    compute_metrics, run_cells, run_scenario, Architecture, BacklashSchedule, Command, Scenario,
    SimError, SimTrace, SweepAxis, SweepCell, TraceMetrics,
};

#[derive(Debug, Parser)]
#[command(name = "backlash-imc", version, about = "IMC design and simulation for servo systems with sandwiched backlash")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Synthesize the IMC and write the design, T0/S tables and margins.
    Design(CommonArgs),
    /// Run one scenario; writes trace.csv and metrics.json.
    Simulate(CommonArgs),
    /// Describing-function limit-cycle search for the PID and IMC loops.
    Stability(CommonArgs),
    /// Stepped-sine FRF of the simulated plant, optionally fitted.
    Frf(CommonArgs),
    /// Parameter sweep over one or two axes.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps and FRFs.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides the scenario's noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("design: {0}")]
    Design(String),
    #[error("{0}")]
    Unstable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Design(_) => 2,
            CliError::Unstable(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn design_err(e: impl std::fmt::Display) -> CliError {
    CliError::Design(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub m_kg: f64,
    pub m_m_kg: f64,
    pub c_n_s_per_mm: f64,
    pub k_n_per_mm: f64,
    /// Lead-screw advance per revolution.
    pub lead_mm_per_rev: f64,
    pub added_mass_middle_kg: f64,
    pub added_mass_top_kg: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig::from_params(&LumpedParams::default(), &MassPerturbation::default())
    }
}

impl PlantConfig {
    pub fn params(&self) -> LumpedParams {
        LumpedParams {
            m: self.m_kg,
            m_m: self.m_m_kg,
            c: self.c_n_s_per_mm * 1e3,
            k: self.k_n_per_mm * 1e3,
            pitch: self.lead_mm_per_rev * 1e-3 / (2.0 * PI),
        }
    }

    pub fn perturbation(&self) -> MassPerturbation {
        MassPerturbation {
            middle: self.added_mass_middle_kg,
            top: self.added_mass_top_kg,
        }
    }

    pub fn from_params(lp: &LumpedParams, pert: &MassPerturbation) -> Self {
        Self {
            m_kg: lp.m,
            m_m_kg: lp.m_m,
            c_n_s_per_mm: lp.c * 1e-3,
            k_n_per_mm: lp.k * 1e-3,
            lead_mm_per_rev: lp.pitch * 2.0 * PI * 1e3,
            added_mass_middle_kg: pert.middle,
            added_mass_top_kg: pert.top,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotorConfig {
    pub inertia: f64,
    pub inductance: f64,
    pub resistance: f64,
    pub torque_constant: f64,
    pub back_emf_constant: f64,
    /// Stepper integrator gain [rad/s per unit].
    pub km: f64,
}

impl Default for MotorConfig {
    fn default() -> Self {
        let v = VirtualMotorParams::default();
        Self {
            inertia: v.inertia,
            inductance: v.inductance,
            resistance: v.resistance,
            torque_constant: v.torque_constant,
            back_emf_constant: v.back_emf_constant,
            km: 1.0,
        }
    }
}

impl MotorConfig {
    pub fn params(&self) -> VirtualMotorParams {
        VirtualMotorParams {
            inertia: self.inertia,
            inductance: self.inductance,
            resistance: self.resistance,
            torque_constant: self.torque_constant,
            back_emf_constant: self.back_emf_constant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub tf: f64,
    /// Multiplies the position error in metres (1000 feeds millimetres).
    pub error_scale: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        let p = PidParams::default();
        Self {
            kp: p.kp,
            ki: p.ki,
            kd: p.kd,
            tf: p.tf,
            error_scale: 1e3,
        }
    }
}

impl PidConfig {
    pub fn params(&self) -> PidParams {
        PidParams {
            kp: self.kp,
            ki: self.ki,
            kd: self.kd,
            tf: self.tf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kind: Architecture,
    pub pid: PidConfig,
    pub tau_r: f64,
    pub tau_0: f64,
    pub k_theta: f64,
    pub dead_zone_deg: f64,
    pub estimator_gap_deg: f64,
    pub estimator_in_feedback: bool,
    pub estimator_in_model: bool,
    /// Parameters of the internal model when they differ from the plant.
    pub model: Option<PlantConfig>,
    /// Explicit internal model `G2_hat` (ascending coefficients); design
    /// and stability only.
    pub g2_hat: Option<TfCoeffs>,
    /// Plant used for the robust-stability margin of `design`.
    pub alternate_plant: Option<PlantConfig>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let rm = ReferenceModel::default();
        Self {
            kind: Architecture::ImcLinear,
            pid: PidConfig::default(),
            tau_r: rm.tau_r,
            tau_0: rm.tau_0,
            k_theta: 10.0,
            dead_zone_deg: 0.9,
            estimator_gap_deg: 0.0,
            estimator_in_feedback: true,
            estimator_in_model: true,
            model: None,
            g2_hat: None,
            alternate_plant: None,
        }
    }
}

impl ControllerConfig {
    pub fn imc_settings(&self) -> ImcSettings {
        ImcSettings {
            reference: ReferenceModel {
                tau_r: self.tau_r,
                tau_0: self.tau_0,
            },
            k_theta: self.k_theta,
            dead_zone: DeadZoneSpec {
                width: self.dead_zone_deg.to_radians(),
            },
            estimator_gap: self.estimator_gap_deg.to_radians(),
            estimator_in_feedback: self.estimator_in_feedback,
            estimator_in_model: self.estimator_in_model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommandConfig {
    Step { amp_mm: f64 },
    Square { amp_mm: f64, period_s: f64 },
    Sine { amp_mm: f64, freq_hz: f64 },
}

impl CommandConfig {
    pub fn command(&self) -> Command {
        match *self {
            CommandConfig::Step { amp_mm } => Command::Step { amp: amp_mm * 1e-3 },
            CommandConfig::Square { amp_mm, period_s } => Command::Square {
                amp: amp_mm * 1e-3,
                period: period_s,
            },
            CommandConfig::Sine { amp_mm, freq_hz } => Command::Sine {
                amp: amp_mm * 1e-3,
                freq_hz,
            },
        }
    }
}

fn default_phase_s() -> f64 {
    15.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BacklashConfig {
    Constant {
        gap_deg: f64,
    },
    Staircase {
        step_deg: f64,
        interval_s: f64,
        max_deg: f64,
        #[serde(default = "default_phase_s")]
        phase_s: f64,
    },
}

impl BacklashConfig {
    pub fn schedule(&self) -> BacklashSchedule {
        match *self {
            BacklashConfig::Constant { gap_deg } => BacklashSchedule::Constant {
                gap: gap_deg.to_radians(),
            },
            BacklashConfig::Staircase {
                step_deg,
                interval_s,
                max_deg,
                phase_s,
            } => BacklashSchedule::Staircase {
                step: step_deg.to_radians(),
                interval: interval_s,
                max: max_deg.to_radians(),
                phase: phase_s,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub command: CommandConfig,
    pub backlash: BacklashConfig,
    pub duration_s: f64,
    pub plant_rate_hz: f64,
    pub controller_rate_hz: f64,
    /// Start of the residual-vibration window.
    pub metrics_from_s: f64,
    pub noise_std_um: f64,
    pub seed: u64,
    pub record_every: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            command: CommandConfig::Step { amp_mm: 1.0 },
            backlash: BacklashConfig::Constant { gap_deg: 0.0 },
            duration_s: 10.0,
            plant_rate_hz: 1e4,
            controller_rate_hz: 1e3,
            metrics_from_s: 5.0,
            noise_std_um: 0.0,
            seed: 0,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxisConfig {
    pub axis: SweepAxis,
    /// Degrees for angles, seconds for `tau_r`, kg for mass, N/mm for
    /// stiffness.
    pub values: Vec<f64>,
}

impl SweepAxisConfig {
    fn si_values(&self) -> Vec<f64> {
        let f: fn(f64) -> f64 = match self.axis {
            SweepAxis::DeadZone | SweepAxis::EstimatorGap | SweepAxis::Backlash => f64::to_radians,
            SweepAxis::StiffnessMismatch => |v| v * 1e3,
            SweepAxis::TauR | SweepAxis::MassMismatch => |v| v,
        };
        self.values.iter().map(|&v| f(v)).collect()
    }

    fn boundary_value(axis: SweepAxis, v: f64) -> f64 {
        match axis {
            SweepAxis::DeadZone | SweepAxis::EstimatorGap | SweepAxis::Backlash => v.to_degrees(),
            SweepAxis::StiffnessMismatch => v * 1e-3,
            SweepAxis::TauR | SweepAxis::MassMismatch => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// One axis, or two for a full grid (second varies fastest).
    pub axes: Vec<SweepAxisConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub n_freq: usize,
    pub chi_points: usize,
    pub tol: f64,
    /// Gap used to turn a predicted chi into amplitudes.
    pub gap_deg: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        let d = DfSearch::default();
        Self {
            f_min_hz: d.f_min_hz,
            f_max_hz: d.f_max_hz,
            n_freq: d.n_freq,
            chi_points: d.chi_grid.len(),
            tol: d.tol,
            gap_deg: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalOrder {
    pub n_poles: usize,
    pub n_zeros: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrfConfig {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub n_freq: usize,
    /// Motor-angle excitation amplitude.
    pub amp_deg: f64,
    pub settle_s: f64,
    pub record_s: f64,
    pub fade_in_s: f64,
    pub dt: f64,
    pub n_harmonics: usize,
    /// Starting point of a lumped-parameter fit; no fit when absent.
    pub lumped_init: Option<PlantConfig>,
    pub rational: Option<RationalOrder>,
}

impl Default for FrfConfig {
    fn default() -> Self {
        let s = SteppedSineConfig::default();
        Self {
            f_min_hz: 0.5,
            f_max_hz: 15.0,
            n_freq: 60,
            amp_deg: 90.0,
            settle_s: s.settle_s,
            record_s: s.record_s,
            fade_in_s: s.fade_in_s,
            dt: s.dt,
            n_harmonics: s.n_harmonics,
            lumped_init: None,
            rational: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub motor: MotorConfig,
    pub controller: ControllerConfig,
    pub scenario: ScenarioConfig,
    pub sweep: Option<SweepConfig>,
    pub stability: StabilityConfig,
    pub frf: FrfConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// The simulation scenario, validated.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        if self.controller.g2_hat.is_some() {
            return Err(CliError::Config(
                "controller.g2_hat is only supported by design and stability".into(),
            ));
        }
        let sc = &self.scenario;
        let out = Scenario {
            architecture: self.controller.kind,
            command: sc.command.command(),
            backlash: sc.backlash.schedule(),
            duration: sc.duration_s,
            plant_rate_hz: sc.plant_rate_hz,
            controller_rate_hz: sc.controller_rate_hz,
            plant: self.plant.params(),
            perturbation: self.plant.perturbation(),
            motor: self.motor.params(),
            km: self.motor.km,
            model: self.controller.model.map(|m| m.params()),
            imc: self.controller.imc_settings(),
            pid: self.controller.pid.params(),
            pid_error_scale: self.controller.pid.error_scale,
            noise_std: sc.noise_std_um * 1e-6,
            seed: sc.seed,
            record_every: sc.record_every,
        };
        out.validate().map_err(config_err)?;
        out.plant.validate().map_err(config_err)?;
        out.motor.validate().map_err(config_err)?;
        Ok(out)
    }

    fn model_params(&self) -> LumpedParams {
        self.controller.model.unwrap_or(self.plant).params()
    }

    /// IMC designed against the configured internal model.
    pub fn design(&self) -> Result<ImcDesign, CliError> {
        let settings = self.controller.imc_settings();
        let model = self.model_params();
        let g1_hat = build_motor_chain(&self.motor.params(), self.motor.km).map_err(config_err)?;
        let g2_hat = match &self.controller.g2_hat {
            Some(c) => c.to_tf().map_err(config_err)?,
            None => build_g2(&model).map_err(config_err)?,
        };
        ImcDesign::from_models(settings, g1_hat, g2_hat, model.pitch).map_err(design_err)
    }
}

/// Metrics in boundary units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub settling_time_s: Option<f64>,
    pub unsettled: bool,
    pub overshoot_pct: f64,
    pub a_res_mm: Option<f64>,
    pub f_r_hz: Option<f64>,
    pub zeta_r: Option<f64>,
    pub r_squared: Option<f64>,
    pub residual_error: Option<String>,
    pub control_peak: f64,
    pub control_l2: f64,
    pub fundamental_phase_deg: Option<f64>,
}

impl From<&TraceMetrics> for MetricsRecord {
    fn from(m: &TraceMetrics) -> Self {
        Self {
            settling_time_s: m.settling_time_2pct,
            unsettled: m.settling_time_2pct.is_none(),
            overshoot_pct: m.overshoot_pct,
            a_res_mm: m.residual.map(|r| r.amplitude.abs() * 1e3),
            f_r_hz: m.residual.map(|r| r.frequency_hz),
            zeta_r: m.residual.map(|r| r.damping_ratio),
            r_squared: m.residual.map(|r| r.r_squared),
            residual_error: m.residual_error.clone(),
            control_peak: m.control_peak,
            control_l2: m.control_l2,
            fundamental_phase_deg: m.fundamental_phase_deg,
        }
    }
}

type Handler = fn(&RunConfig, &Path) -> Result<(), CliError>;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let (args, cmd): (&CommonArgs, Handler) = match &cli.command {
        Cmd::Design(a) => (a, cmd_design),
        Cmd::Simulate(a) => (a, cmd_simulate),
        Cmd::Stability(a) => (a, cmd_stability),
        Cmd::Frf(a) => (a, cmd_frf),
        Cmd::Sweep(a) => (a, cmd_sweep),
    };
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| cmd(&cfg, &out))
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, tr: &SimTrace) -> Result<(), CliError> {
    let header = [
        "t",
        "r",
        "y",
        "y_hat",
        "eps_hat",
        "u",
        "theta_m_deg",
        "theta_d_deg",
        "theta_b_deg",
    ];
    let rows = (0..tr.len()).map(|i| {
        vec![
            tr.t[i],
            tr.r[i] * 1e3,
            tr.y[i] * 1e3,
            tr.y_hat[i] * 1e3,
            tr.eps_hat[i] * 1e3,
            tr.u[i],
            tr.theta_m[i].to_degrees(),
            tr.theta_d[i].to_degrees(),
            tr.theta_b_applied[i].to_degrees(),
        ]
    });
    write_rows(path, &header, rows)
}

fn write_locus(path: &Path, l: &LocusCurve) -> Result<(), CliError> {
    write_rows(
        path,
        &["param", "re", "im"],
        l.points.iter().map(|(p, z)| vec![*p, z.re, z.im]),
    )
}

#[derive(Debug, Serialize)]
struct DesignReport {
    gr_poles: Vec<Complex64>,
    bandwidth_hz: f64,
    w_poles: Vec<Complex64>,
    w_zeros: Vec<Complex64>,
    robust_margin: Option<RobustMargin>,
}

pub fn cmd_design(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let d = cfg.design()?;
    let g_theta_hat = d.g_theta_hat().map_err(design_err)?;
    let t0 = complementary_sensitivity(&d.gr, &g_theta_hat).map_err(design_err)?;
    let freqs = log_grid(0.1, 50.0, 400);

    let alt = match &cfg.controller.alternate_plant {
        Some(p) => Some(build_g2_perturbed(&p.params(), &p.perturbation()).map_err(config_err)?),
        None => None,
    };
    let (margin, s_alt) = match &alt {
        Some(g_alt) => {
            let ub = UncertaintyBound::between(&d.g2_hat, g_alt, &freqs).map_err(design_err)?;
            let deltas = freqs
                .iter()
                .map(|&f| Ok((f, g_alt.freq_response(f)? / d.g2_hat.freq_response(f)? - 1.0)))
                .collect::<Result<Vec<_>, crate::lti::LtiError>>()
                .map_err(design_err)?;
            let s = sensitivity_magnitude(&d.gr, &g_theta_hat, &g_theta_hat, &deltas)
                .map_err(design_err)?;
            (
                Some(robust_stability_margin(&t0, &ub).map_err(design_err)?),
                Some(s),
            )
        }
        None => (None, None),
    };

    let report = DesignReport {
        gr_poles: d.gr.poles().map_err(design_err)?,
        bandwidth_hz: bandwidth_hz(&d.settings.reference),
        w_poles: d.w.poles().map_err(design_err)?,
        w_zeros: d.w.zeros().map_err(design_err)?,
        robust_margin: margin,
    };
    let mut rows = Vec::with_capacity(freqs.len());
    for (i, &f) in freqs.iter().enumerate() {
        let t = t0.freq_response(f).map_err(design_err)?;
        let mut row = vec![f, t.norm(), t.arg().to_degrees(), (1.0 - t).norm()];
        if let Some(s) = &s_alt {
            row.push(s[i].1);
        }
        rows.push(row);
    }
    let mut header = vec!["freq_hz", "t0_mag", "t0_phase_deg", "s_mag"];
    if s_alt.is_some() {
        header.push("s_alt_mag");
    }

    create_out(out)?;
    write_json(&out.join("design.json"), &d.to_record())?;
    write_json(&out.join("design_report.json"), &report)?;
    write_rows(&out.join("t0_s.csv"), &header, rows)?;
    log::info!("design written to {}", out.display());
    Ok(())
}

/// Reads a design written by `design`.
pub fn load_design(path: &Path) -> Result<ImcDesign, CliError> {
    let text = fs::read_to_string(path)?;
    let rec: DesignRecord = serde_json::from_str(&text).map_err(config_err)?;
    ImcDesign::from_record(&rec).map_err(design_err)
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Invalid(m) => CliError::Config(m),
        SimError::Divergence { t, .. } => CliError::Unstable(format!("simulation diverged at t = {t} s")),
        SimError::Control(c) => design_err(c),
        other => CliError::Config(other.to_string()),
    }
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sc = cfg.scenario()?;
    if sc.architecture != Architecture::Pid {
        sc.design().map_err(sim_error)?;
    }
    match run_scenario(&sc) {
        Ok(tr) => {
            let m = compute_metrics(&tr, &sc.command, cfg.scenario.metrics_from_s);
            create_out(out)?;
            write_trace(&out.join("trace.csv"), &tr)?;
            write_json(&out.join("metrics.json"), &MetricsRecord::from(&m))?;
            Ok(())
        }
        Err(SimError::Divergence { t, trace }) => {
            create_out(out)?;
            write_trace(&out.join("trace.csv"), &trace)?;
            Err(CliError::Unstable(format!("simulation diverged at t = {t} s")))
        }
        Err(e) => Err(sim_error(e)),
    }
}

#[derive(Debug, Serialize)]
struct AmplitudeRecord {
    theta_m_deg: f64,
    a_l_mm: f64,
}

#[derive(Debug, Serialize)]
struct LoopPrediction {
    search: LimitCycleSearch,
    amplitude: Option<AmplitudeRecord>,
}

fn analysis_err(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::Invalid(m) => CliError::Config(m),
        other => design_err(other),
    }
}

pub fn cmd_stability(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let st = &cfg.stability;
    if st.chi_points == 0 || st.n_freq < 2 || !(st.tol > 0.0) || !(st.gap_deg >= 0.0) {
        return Err(CliError::Config("stability settings".into()));
    }
    let search = DfSearch {
        f_min_hz: st.f_min_hz,
        f_max_hz: st.f_max_hz,
        n_freq: st.n_freq,
        chi_grid: uniform_chi_grid(st.chi_points),
        tol: st.tol,
    };
    let plant = cfg.plant.params();
    let g1 = build_motor_chain(&cfg.motor.params(), cfg.motor.km).map_err(config_err)?;
    let g2 = build_g2_perturbed(&plant, &cfg.plant.perturbation()).map_err(config_err)?;
    let pid = cfg.controller.pid;
    let d = cfg.design()?;
    let linear = ImcDesign {
        settings: ImcSettings {
            dead_zone: DeadZoneSpec::default(),
            estimator_gap: 0.0,
            ..d.settings
        },
        ..d
    };
    let g_pid = open_loop_pid(&pid.params(), &g1, &g2, plant.pitch, pid.error_scale).map_err(analysis_err)?;
    let g_imc = open_loop_imc(&linear, &g1, &g2).map_err(analysis_err)?;

    let gap = st.gap_deg.to_radians();
    let predict = |g: &RationalTf| -> Result<LoopPrediction, CliError> {
        let s = find_limit_cycle(g, &search).map_err(analysis_err)?;
        let amplitude = match &s.prediction {
            Some(p) => {
                let a = predict_output_amplitude(&g2, p, gap, plant.pitch).map_err(analysis_err)?;
                Some(AmplitudeRecord {
                    theta_m_deg: a.theta_m.to_degrees(),
                    a_l_mm: a.a_l * 1e3,
                })
            }
            None => None,
        };
        Ok(LoopPrediction { search: s, amplitude })
    };
    let pid_pred = predict(&g_pid)?;
    let imc_pred = predict(&g_imc)?;
    let freqs = log_grid(st.f_min_hz, st.f_max_hz, st.n_freq);
    let df = neg_inv_df_locus(&search.chi_grid).map_err(analysis_err)?;

    create_out(out)?;
    write_locus(&out.join("locus_pid.csv"), &nyquist_locus(&g_pid, &freqs))?;
    write_locus(&out.join("locus_imc.csv"), &nyquist_locus(&g_imc, &freqs))?;
    write_locus(&out.join("locus_neg_inv_df.csv"), &df)?;
    write_json(
        &out.join("prediction.json"),
        &serde_json::json!({ "pid": pid_pred, "imc": imc_pred }),
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct LumpedFitRecord {
    plant: PlantConfig,
    cost: f64,
    iterations: usize,
    phase_rms_deg: f64,
}

#[derive(Debug, Serialize)]
struct RationalFitRecord {
    num: Vec<f64>,
    den: Vec<f64>,
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
}

fn ident_err(e: IdentError) -> CliError {
    match e {
        IdentError::Unstable { .. } => CliError::Unstable(e.to_string()),
        IdentError::Invalid(_) | IdentError::TooFewSamples { .. } | IdentError::Improper { .. } => {
            CliError::Config(e.to_string())
        }
        other => CliError::Design(other.to_string()),
    }
}

pub fn cmd_frf(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let fc = &cfg.frf;
    if !(fc.f_min_hz > 0.0 && fc.f_max_hz >= fc.f_min_hz && fc.n_freq >= 1 && fc.amp_deg > 0.0) {
        return Err(CliError::Config("frf grid".into()));
    }
    if !(fc.fade_in_s >= 0.0 && fc.fade_in_s <= fc.settle_s) {
        return Err(CliError::Config("fade_in_s must lie within the settle window".into()));
    }
    let plant = cfg.plant.params();
    let g2 = build_g2_perturbed(&plant, &cfg.plant.perturbation()).map_err(config_err)?;
    let ss = SteppedSineConfig {
        amplitude: fc.amp_deg.to_radians(),
        settle_s: fc.settle_s,
        record_s: fc.record_s,
        dt: fc.dt,
        n_harmonics: fc.n_harmonics,
        input_scale: plant.pitch,
        fade_in_s: fc.fade_in_s,
    };
    let freqs = log_grid(fc.f_min_hz, fc.f_max_hz, fc.n_freq);
    let proto = SisoStepper::from_tf(&g2.scale(plant.pitch), fc.dt).map_err(config_err)?;
    let frf = stepped_sine_frf(|| proto.clone(), &freqs, &ss).map_err(ident_err)?;

    let lumped = match &fc.lumped_init {
        Some(init) => {
            let fit = fit_lumped_params(&frf, &init.params()).map_err(ident_err)?;
            Some(LumpedFitRecord {
                plant: PlantConfig::from_params(&fit.params, &MassPerturbation::default()),
                cost: fit.cost,
                iterations: fit.iterations,
                phase_rms_deg: fit.phase_rms_deg,
            })
        }
        None => None,
    };
    let rational = match fc.rational {
        Some(o) => {
            let g = fit_rational_frf(&frf, o.n_poles, o.n_zeros).map_err(ident_err)?;
            Some(RationalFitRecord {
                num: g.num().coeffs().to_vec(),
                den: g.den().coeffs().to_vec(),
                zeros: g.zeros().map_err(design_err)?,
                poles: g.poles().map_err(design_err)?,
            })
        }
        None => None,
    };

    create_out(out)?;
    write_rows(
        &out.join("frf.csv"),
        &["freq_hz", "re", "im"],
        frf.points
            .iter()
            .map(|p| vec![p.freq_hz, p.response.re, p.response.im]),
    )?;
    write_json(
        &out.join("fit.json"),
        &serde_json::json!({ "lumped": lumped, "rational": rational }),
    )?;
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing sweep section".into()))?;
    if sweep.axes.is_empty() || sweep.axes.len() > 2 || sweep.axes.iter().any(|a| a.values.is_empty()) {
        return Err(CliError::Config("sweep needs one or two non-empty axes".into()));
    }
    let base = cfg.scenario()?;
    let axes: Vec<(SweepAxis, Vec<f64>)> = sweep.axes.iter().map(|a| (a.axis, a.si_values())).collect();
    let cells: Vec<Vec<(SweepAxis, f64)>> = match axes.as_slice() {
        [(a, va)] => va.iter().map(|&v| vec![(*a, v)]).collect(),
        [(a, va), (b, vb)] => va
            .iter()
            .flat_map(|&x| vb.iter().map(move |&y| vec![(*a, x), (*b, y)]))
            .collect(),
        _ => unreachable!(),
    };
    let results = run_cells(&base, &cells, cfg.scenario.metrics_from_s);

    create_out(out)?;
    write_sweep(&out.join("sweep.csv"), &axes.iter().map(|a| a.0).collect::<Vec<_>>(), &results)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep(path: &Path, axes: &[SweepAxis], cells: &[SweepCell]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = axes.iter().map(|a| a.name().to_string()).collect();
    header.extend(
        [
            "settling_time_s",
            "overshoot_pct",
            "a_res_mm",
            "f_r_hz",
            "zeta_r",
            "r_squared",
            "control_peak",
            "control_l2",
            "fundamental_phase_deg",
            "error",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for c in cells {
        let mut row: Vec<String> = c
            .values
            .iter()
            .map(|(a, v)| SweepAxisConfig::boundary_value(*a, *v).to_string())
            .collect();
        match &c.metrics {
            Some(m) => {
                let r = MetricsRecord::from(m);
                row.extend([
                    opt(r.settling_time_s),
                    r.overshoot_pct.to_string(),
                    opt(r.a_res_mm),
                    opt(r.f_r_hz),
                    opt(r.zeta_r),
                    opt(r.r_squared),
                    r.control_peak.to_string(),
                    r.control_l2.to_string(),
                    opt(r.fundamental_phase_deg),
                    r.residual_error.unwrap_or_default(),
                ]);
            }
            None => {
                row.extend(std::iter::repeat_n(String::new(), 9));
                row.push(c.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `G_theta` of the configured rig (for reports and tests).
pub fn rig_inner_loop(cfg: &RunConfig) -> Result<RationalTf, CliError> {
    let g1 = build_motor_chain(&cfg.motor.params(), cfg.motor.km).map_err(config_err)?;
    inner_loop_tf(cfg.controller.k_theta, &g1).map_err(|e: ControlError| design_err(e))
}
