//! Backlash and dead-zone operators, and the first-harmonic describing
//! function of backlash.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinError {
    #[error("amplitude ratio chi = {0} outside [0, 1]")]
    ChiOutOfRange(f64),
    #[error("input amplitude {amplitude} does not exceed the gap {gap}")]
    AmplitudeBelowGap { amplitude: f64, gap: f64 },
}

/// Play operator state: gap half-width `gap` and driven-side angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BacklashState {
    pub gap: f64,
    pub driven_angle: f64,
}

impl BacklashState {
    pub fn new(gap: f64) -> Self {
        Self {
            gap: gap.abs(),
            driven_angle: 0.0,
        }
    }

    /// Feeds the motor angle and returns the driven angle. The driven side
    /// only moves when pushed against either flank of the gap.
    #[inline]
    pub fn update(&mut self, theta_m: f64) -> f64 {
        let lo = theta_m - self.gap;
        let hi = theta_m + self.gap;
        let mut d = self.driven_angle.clamp(lo, hi);
        // `theta_m - gap` can round so that the difference exceeds the gap
        // by an ulp; nudge back inside.
        while theta_m - d > self.gap {
            d = d.next_up();
        }
        while d - theta_m > self.gap {
            d = d.next_down();
        }
        self.driven_angle = d;
        d
    }
}

/// Functional form of [`BacklashState::update`].
pub fn backlash_update(st: BacklashState, theta_m: f64) -> (BacklashState, f64) {
    let mut next = st;
    let theta_d = next.update(theta_m);
    (next, theta_d)
}

/// Velocity-gated backlash, integrated with explicit Euler. Kept as a
/// reference for the play operator; it drifts by up to one step of motion
/// at each engagement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VelocityGateBacklash {
    pub gap: f64,
    pub motor_angle: f64,
    pub driven_angle: f64,
}

impl VelocityGateBacklash {
    pub fn new(gap: f64) -> Self {
        Self {
            gap: gap.abs(),
            ..Self::default()
        }
    }

    /// Advances both angles by `dt` and returns the driven-side speed.
    pub fn step(&mut self, omega_m: f64, dt: f64) -> f64 {
        let z = self.motor_angle - self.driven_angle;
        let engaged = (omega_m > 0.0 && z >= self.gap) || (omega_m < 0.0 && z <= -self.gap);
        let omega_d = if engaged { omega_m } else { 0.0 };
        self.motor_angle += omega_m * dt;
        self.driven_angle += omega_d * dt;
        omega_d
    }
}

/// Dead-zone half-width [rad].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeadZoneSpec {
    pub width: f64,
}

/// Subtractive dead zone `sign(e) max(0, |e| - w)`.
#[inline]
pub fn dead_zone(e: f64, dz: DeadZoneSpec) -> f64 {
    let w = dz.width.abs();
    if e > w {
        e - w
    } else if e < -w {
        e + w
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescribingFunctionPoint {
    pub chi: f64,
    pub gamma: f64,
    pub value: Complex64,
}

/// Backlash describing function at gap-to-amplitude ratio `chi`. The
/// endpoints return their limits, `N(0) = 1` and `N(1) = 0`.
pub fn describing_function(chi: f64) -> Result<DescribingFunctionPoint, NonlinError> {
    if !(0.0..=1.0).contains(&chi) {
        return Err(NonlinError::ChiOutOfRange(chi));
    }
    let gamma = (1.0 - 2.0 * chi).asin();
    let re = (FRAC_PI_2 + gamma + 2.0 * (1.0 - 2.0 * chi) * (chi * (1.0 - chi)).sqrt()) / PI;
    let im = 4.0 / PI * chi * (chi - 1.0);
    Ok(DescribingFunctionPoint {
        chi,
        gamma,
        value: Complex64::new(re, im),
    })
}

/// First-harmonic cosine and sine coefficients `(a1, b1)` of the driven
/// angle for a sinusoidal motor angle of amplitude `amplitude`.
pub fn df_fourier_coeffs(amplitude: f64, gap: f64) -> Result<(f64, f64), NonlinError> {
    if !(amplitude > gap && gap >= 0.0 && amplitude.is_finite()) {
        return Err(NonlinError::AmplitudeBelowGap { amplitude, gap });
    }
    let chi = gap / amplitude;
    let gamma = (1.0 - 2.0 * chi).asin();
    let a1 = 4.0 * gap / PI * (chi - 1.0);
    let b1 = amplitude / PI
        * (FRAC_PI_2 + gamma + 2.0 * (1.0 - 2.0 * chi) * (chi * (1.0 - chi)).sqrt());
    Ok((a1, b1))
}

/// Steady-state driven angle over one period, normalized by the input
/// amplitude, for `tau` in `[pi/2, 5 pi/2)`. Values outside are wrapped.
pub fn backlash_zone_waveform(tau: f64, chi: f64) -> f64 {
    let tau = FRAC_PI_2 + (tau - FRAC_PI_2).rem_euclid(2.0 * PI);
    let gamma = (1.0 - 2.0 * chi).asin();
    if tau < PI - gamma {
        1.0 - chi
    } else if tau < 1.5 * PI {
        tau.sin() + chi
    } else if tau < 2.0 * PI - gamma {
        chi - 1.0
    } else {
        tau.sin() - chi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEG: f64 = PI / 180.0;

    #[test]
    fn inside_gap_holds() {
        let (_, d) = backlash_update(BacklashState::new(20.0 * DEG), 5.0 * DEG);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn beyond_gap_clamps() {
        let (st, d) = backlash_update(BacklashState::new(20.0 * DEG), 30.0 * DEG);
        assert!((d - 10.0 * DEG).abs() < 1e-15);
        assert_eq!(st.driven_angle, d);
    }

    #[test]
    fn zero_gap_is_identity() {
        let mut st = BacklashState::new(0.0);
        for x in [0.3, -1.2, 4.0, 4.0, -7.5] {
            assert_eq!(st.update(x), x);
        }
    }

    #[test]
    fn gate_idle_without_motion() {
        let mut g = VelocityGateBacklash::new(0.1);
        assert_eq!(g.step(0.0, 1e-3), 0.0);
        assert_eq!(g, VelocityGateBacklash::new(0.1));
    }

    #[test]
    fn gate_engaged_on_boundary() {
        let mut g = VelocityGateBacklash {
            gap: 0.1,
            motor_angle: 0.1,
            driven_angle: 0.0,
        };
        assert_eq!(g.step(2.0, 1e-3), 2.0);
        let mut g = VelocityGateBacklash {
            gap: 0.1,
            motor_angle: -0.1,
            driven_angle: 0.0,
        };
        assert_eq!(g.step(-2.0, 1e-3), -2.0);
        assert_eq!(g.step(2.0, 1e-3), 0.0);
    }

    #[test]
    fn growing_sinusoid_dwells_after_reversal() {
        let gap = 20.0 * DEG;
        let dt = 1e-4;
        let mut st = BacklashState::new(gap);
        let mut prev_m = 0.0;
        let mut prev_d = 0.0;
        let mut flats = 0usize;
        for i in 1..=40_000 {
            let t = i as f64 * dt;
            let m = (1.0 + t / 10.0) * (2.0 * PI * t).sin();
            let d = st.update(m);
            assert!((m - d).abs() <= gap + 1e-15);
            if d == prev_d && m != prev_m {
                flats += 1;
            } else {
                // when moving, the driven side trails by exactly the gap
                assert!(((m - d).abs() - gap).abs() < 1e-12);
            }
            prev_m = m;
            prev_d = d;
        }
        assert!(flats > 1000);
    }

    #[test]
    fn dead_zone_forms() {
        let dz = DeadZoneSpec { width: 0.9 };
        assert_eq!(dead_zone(0.5, dz), 0.0);
        assert!((dead_zone(2.0, dz) - 1.1).abs() < 1e-15);
        assert!((dead_zone(-2.0, dz) + 1.1).abs() < 1e-15);
        assert_eq!(dead_zone(0.37, DeadZoneSpec::default()), 0.37);
    }

    #[test]
    fn df_half_gap() {
        let p = describing_function(0.5).unwrap();
        assert!(p.gamma.abs() < 1e-15);
        assert!((p.value.re - 0.5).abs() < 1e-15);
        assert!((p.value.im + 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn df_limits() {
        let n0 = describing_function(0.0).unwrap().value;
        assert!((n0 - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let n1 = describing_function(1.0).unwrap().value;
        assert!(n1.norm() < 1e-15);
        let near = describing_function(1.0 - 1e-6).unwrap().value;
        assert!((near.arg().to_degrees() + 90.0).abs() < 0.1);
        assert!(describing_function(1.5).is_err());
        assert!(describing_function(-0.1).is_err());
    }

    #[test]
    fn fourier_coeffs_half_gap() {
        let (a1, b1) = df_fourier_coeffs(2.0, 1.0).unwrap();
        assert!((a1 + 2.0 / PI).abs() < 1e-15);
        assert!((b1 - 1.0).abs() < 1e-15);
        let (a1, b1) = df_fourier_coeffs(3.0, 0.0).unwrap();
        assert_eq!(a1, 0.0);
        assert!((b1 - 3.0).abs() < 1e-15);
        assert!(df_fourier_coeffs(1.0, 1.0).is_err());
    }

    #[test]
    fn zone_waveform_boundaries() {
        let chi = 0.3;
        assert!((backlash_zone_waveform(FRAC_PI_2, chi) - 0.7).abs() < 1e-15);
        assert!((backlash_zone_waveform(1.5 * PI, chi) - (chi - 1.0)).abs() < 1e-15);
        let gamma = (1.0 - 2.0 * chi).asin();
        for edge in [PI - gamma, 1.5 * PI, 2.0 * PI - gamma, 2.5 * PI] {
            let below = backlash_zone_waveform(edge - 1e-9, chi);
            let above = backlash_zone_waveform(edge + 1e-9, chi);
            assert!((below - above).abs() < 1e-8, "jump at {edge}");
        }
    }
}
