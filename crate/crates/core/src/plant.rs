//! Linear models of the rig: the reduced two-platform transmission driven by
//! base excitation, the virtual dc-motor, the stepper integrator, and the
//! modal analysis of mass-perturbed configurations.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{LtiError, ModeEstimate, Polynomial, RationalTf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("mass matrix is not positive definite")]
    MassNotPositiveDefinite,
    #[error(transparent)]
    Lti(#[from] LtiError),
}

fn non_negative(name: &'static str, value: f64) -> Result<(), PlantError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(PlantError::Parameter {
            name,
            value,
            reason: "must be non-negative and finite",
        })
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), PlantError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(PlantError::Parameter {
            name,
            value,
            reason: "must be strictly positive and finite",
        })
    }
}

/// Lumped parameters of the three-platform structure, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumpedParams {
    /// Plate mass [kg].
    pub m: f64,
    /// Stepper motor mass [kg].
    pub m_m: f64,
    /// Viscous damping per beam set [N s/m].
    pub c: f64,
    /// Total beam stiffness [N/m].
    pub k: f64,
    /// Lead-screw pitch [m/rad].
    pub pitch: f64,
}

impl Default for LumpedParams {
    fn default() -> Self {
        Self {
            m: 16.06,
            m_m: 2.4,
            c: 12.0,
            k: 43_570.0,
            pitch: 2.54e-3 / (2.0 * PI),
        }
    }
}

impl LumpedParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        positive("m", self.m)?;
        positive("m_m", self.m_m)?;
        // an undamped structure is still a valid model
        non_negative("c", self.c)?;
        positive("k", self.k)?;
        positive("pitch", self.pitch)
    }

    /// Characteristic polynomial of the reduced model (ascending powers).
    pub fn delta_g(&self) -> Polynomial {
        let Self { m, m_m, c, k, .. } = *self;
        Polynomial::new(vec![
            k * k,
            2.0 * c * k,
            4.0 * m * k + m_m * k + c * c,
            4.0 * m * c + m_m * c,
            (2.0 * m + m_m) * m,
        ])
    }
}

/// Virtual dc-motor constants, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualMotorParams {
    /// Rotor inertia [kg m^2].
    pub inertia: f64,
    /// Winding inductance [H].
    pub inductance: f64,
    /// Winding resistance [ohm].
    pub resistance: f64,
    /// Torque constant [N m/A].
    pub torque_constant: f64,
    /// Back-emf constant [V s/rad].
    pub back_emf_constant: f64,
}

impl Default for VirtualMotorParams {
    fn default() -> Self {
        Self {
            inertia: 5e-6,
            inductance: 0.01,
            resistance: 44.72,
            torque_constant: 0.5,
            back_emf_constant: 0.5,
        }
    }
}

impl VirtualMotorParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        positive("inertia", self.inertia)?;
        positive("inductance", self.inductance)?;
        positive("resistance", self.resistance)?;
        positive("torque_constant", self.torque_constant)?;
        positive("back_emf_constant", self.back_emf_constant)
    }
}

/// Masses added to the middle and top platforms [kg].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MassPerturbation {
    pub middle: f64,
    pub top: f64,
}

/// Mass, damping and stiffness matrices of the two free platforms plus the
/// base-excitation forcing vectors multiplying `v''`, `v'` and `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrices {
    pub mass: Matrix2<f64>,
    pub damping: Matrix2<f64>,
    pub stiffness: Matrix2<f64>,
    pub forcing_acc: Vector2<f64>,
    pub forcing_vel: Vector2<f64>,
    pub forcing_disp: Vector2<f64>,
}

pub fn build_reduced_matrices(
    lp: &LumpedParams,
    pert: &MassPerturbation,
) -> Result<ReducedMatrices, PlantError> {
    lp.validate()?;
    let LumpedParams { m, m_m, c, k, .. } = *lp;
    let m_mid = m + pert.middle;
    let m_top = m + pert.top;
    if !(m_mid > 0.0) {
        return Err(PlantError::Parameter {
            name: "middle mass",
            value: m_mid,
            reason: "effective mass must be positive",
        });
    }
    if !(m_top > 0.0) {
        return Err(PlantError::Parameter {
            name: "top mass",
            value: m_top,
            reason: "effective mass must be positive",
        });
    }
    Ok(ReducedMatrices {
        mass: Matrix2::new(m_mid + m + m_m, 0.0, 0.0, m_top),
        damping: Matrix2::new(2.0 * c, -c, -c, c),
        stiffness: Matrix2::new(2.0 * k, -k, -k, k),
        // the base-excitation side keeps the nominal first-plate mass
        forcing_acc: Vector2::new(m + m_m, 0.0),
        forcing_vel: Vector2::new(c, 0.0),
        forcing_disp: Vector2::new(k, 0.0),
    })
}

/// Transfer functions `v -> q2` and `v -> q3` of the reduced model by
/// Cramer's rule on `(M s^2 + C s + K) q = f(s) v`.
pub fn transmission(rm: &ReducedMatrices) -> Result<(RationalTf, RationalTf), PlantError> {
    let entry = |i: usize, j: usize| {
        Polynomial::new(vec![rm.stiffness[(i, j)], rm.damping[(i, j)], rm.mass[(i, j)]])
    };
    let force = |i: usize| {
        Polynomial::new(vec![rm.forcing_disp[i], rm.forcing_vel[i], rm.forcing_acc[i]])
    };
    let (a11, a12, a21, a22) = (entry(0, 0), entry(0, 1), entry(1, 0), entry(1, 1));
    let (f1, f2) = (force(0), force(1));
    let det = &(&a11 * &a22) - &(&a12 * &a21);
    let q2 = &(&f1 * &a22) - &(&a12 * &f2);
    let q3 = &(&a11 * &f2) - &(&a21 * &f1);
    let g_mid = RationalTf::new(q2, det.clone(), crate::lti::Domain::Continuous)?;
    let g_top = RationalTf::new(q3, det, crate::lti::Domain::Continuous)?;
    Ok((g_mid, g_top))
}

/// `G2 = G_{v->q3}`: base excitation to top-platform displacement.
pub fn build_g2(lp: &LumpedParams) -> Result<RationalTf, PlantError> {
    build_g2_perturbed(lp, &MassPerturbation::default())
}

pub fn build_g2_perturbed(
    lp: &LumpedParams,
    pert: &MassPerturbation,
) -> Result<RationalTf, PlantError> {
    Ok(transmission(&build_reduced_matrices(lp, pert)?)?.1)
}

/// `G_{v->q2}`: base excitation to middle-platform displacement.
pub fn build_g2_mid(lp: &LumpedParams) -> Result<RationalTf, PlantError> {
    Ok(transmission(&build_reduced_matrices(lp, &MassPerturbation::default())?)?.0)
}

/// Virtual dc-motor, volts to shaft speed [rad/s].
pub fn build_virtual_motor(vp: &VirtualMotorParams) -> Result<RationalTf, PlantError> {
    vp.validate()?;
    let VirtualMotorParams {
        inertia: j,
        inductance: l,
        resistance: r,
        torque_constant: kt,
        back_emf_constant: kb,
    } = *vp;
    Ok(RationalTf::continuous(&[kt], &[kb * kt, j * r, j * l])?)
}

/// Voltage to motor angle: the virtual motor followed by the stepper,
/// modelled as an integrator with gain `km` [rad/s per unit].
pub fn build_motor_chain(vp: &VirtualMotorParams, km: f64) -> Result<RationalTf, PlantError> {
    positive("km", km)?;
    Ok(build_virtual_motor(vp)?.series(&RationalTf::integrator(km))?)
}

/// Undamped modes of `(K - w^2 M) phi = 0` with modal damping
/// `phi^T C phi / (2 w)` for mass-normalized `phi`, ascending in frequency.
pub fn perturbed_modes(rm: &ReducedMatrices) -> Result<[ModeEstimate; 2], PlantError> {
    let m = &rm.mass;
    let k = &rm.stiffness;
    if !(m[(0, 0)] > 0.0 && m.determinant() > 0.0) {
        return Err(PlantError::MassNotPositiveDefinite);
    }
    // det(K - l M) = a l^2 + b l + c
    let a = m.determinant();
    let b = -(k[(0, 0)] * m[(1, 1)] + k[(1, 1)] * m[(0, 0)]
        - k[(0, 1)] * m[(1, 0)]
        - k[(1, 0)] * m[(0, 1)]);
    let c = k.determinant();
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut lambdas = [q / a, c / q];
    lambdas.sort_by(f64::total_cmp);

    let mut modes = [ModeEstimate {
        natural_frequency_hz: 0.0,
        damping_ratio: 0.0,
    }; 2];
    for (mode, &lambda) in modes.iter_mut().zip(&lambdas) {
        if !(lambda > 0.0) {
            return Err(PlantError::Parameter {
                name: "stiffness",
                value: lambda,
                reason: "generalized eigenvalue must be positive",
            });
        }
        let shifted = k - m * lambda;
        let mut phi = Vector2::new(shifted[(1, 1)], -shifted[(1, 0)]);
        if phi.norm() < 1e-12 * k.norm() {
            phi = Vector2::new(shifted[(0, 1)], -shifted[(0, 0)]);
        }
        let norm = (phi.transpose() * m * phi)[(0, 0)].sqrt();
        phi /= norm;
        let wn = lambda.sqrt();
        *mode = ModeEstimate {
            natural_frequency_hz: wn / (2.0 * PI),
            damping_ratio: (phi.transpose() * rm.damping * phi)[(0, 0)] / (2.0 * wn),
        };
    }
    Ok(modes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_mass_matrix() {
        let rm =
            build_reduced_matrices(&LumpedParams::default(), &MassPerturbation::default()).unwrap();
        assert!((rm.mass[(0, 0)] - 34.52).abs() < 1e-12);
        assert!((rm.mass[(1, 1)] - 16.06).abs() < 1e-12);
        assert_eq!(rm.forcing_acc[0], 16.06 + 2.4);
    }

    #[test]
    fn top_mass_perturbation() {
        let rm = build_reduced_matrices(
            &LumpedParams::default(),
            &MassPerturbation {
                middle: 0.0,
                top: 5.0,
            },
        )
        .unwrap();
        assert!((rm.mass[(0, 0)] - 34.52).abs() < 1e-12);
        assert!((rm.mass[(1, 1)] - 21.06).abs() < 1e-12);
    }

    #[test]
    fn undamped_matrices_are_zero() {
        let lp = LumpedParams {
            c: 0.0,
            ..LumpedParams::default()
        };
        let rm = build_reduced_matrices(&lp, &MassPerturbation::default()).unwrap();
        assert_eq!(rm.damping, Matrix2::zeros());
        assert!(build_reduced_matrices(
            &LumpedParams { c: -1.0, ..lp },
            &MassPerturbation::default()
        )
        .is_err());
    }

    #[test]
    fn matrices_symmetric() {
        let rm =
            build_reduced_matrices(&LumpedParams::default(), &MassPerturbation::default()).unwrap();
        assert_eq!(rm.damping, rm.damping.transpose());
        assert_eq!(rm.stiffness, rm.stiffness.transpose());
    }

    #[test]
    fn nominal_modes_match_characteristic_roots() {
        let lp = LumpedParams::default();
        let rm = build_reduced_matrices(&lp, &MassPerturbation::default()).unwrap();
        let modal = perturbed_modes(&rm).unwrap();
        let roots = crate::lti::oscillatory_modes(&lp.delta_g()).unwrap();
        assert_eq!(roots.len(), 2);
        for (a, b) in modal.iter().zip(&roots) {
            let rel = (a.natural_frequency_hz - b.natural_frequency_hz).abs() / b.natural_frequency_hz;
            assert!(rel < 2e-3, "{a:?} vs {b:?}");
        }
        assert!((roots[0].natural_frequency_hz - 4.40).abs() < 0.022);
        assert!((roots[1].natural_frequency_hz - 10.64).abs() < 0.02);
    }

    #[test]
    fn zero_pair_location() {
        let lp = LumpedParams::default();
        let zeros = build_g2(&lp).unwrap().zeros().unwrap();
        let expected = (lp.k / (lp.m + lp.m_m)).sqrt() / (2.0 * PI);
        let osc: Vec<_> = zeros.iter().filter(|z| z.im > 0.0).collect();
        assert_eq!(osc.len(), 1);
        assert!((osc[0].norm() / (2.0 * PI) - expected).abs() < 1e-6 * expected);
        assert!((expected - 7.73).abs() < 0.01);
    }

    #[test]
    fn table_one_first_modes() {
        let lp = LumpedParams::default();
        let cases = [
            (0.0, 0.0, 4.40, 0.0038),
            (0.0, 5.0, 4.10, 0.0036),
            (0.0, 10.0, 3.85, 0.0033),
            (5.0, 5.0, 3.98, 0.0034),
        ];
        for (dm2, dm3, f, z) in cases {
            let rm = build_reduced_matrices(&lp, &MassPerturbation { middle: dm2, top: dm3 })
                .unwrap();
            let m1 = perturbed_modes(&rm).unwrap()[0];
            assert!((m1.natural_frequency_hz - f).abs() <= 0.005 * f, "{m1:?}");
            assert!((m1.damping_ratio - z).abs() <= 0.1 * z, "{m1:?}");
        }
    }

    #[test]
    fn negative_effective_mass_rejected() {
        let err = build_reduced_matrices(
            &LumpedParams::default(),
            &MassPerturbation {
                middle: 0.0,
                top: -20.0,
            },
        );
        assert!(matches!(err, Err(PlantError::Parameter { .. })));
    }

    #[test]
    fn g2_matches_closed_form() {
        let lp = LumpedParams::default();
        let g2 = build_g2(&lp).unwrap();
        assert_eq!(g2.num().degree(), 3);
        assert_eq!(g2.den().degree(), 4);
        let num = &Polynomial::new(vec![lp.k, lp.c, lp.m + lp.m_m])
            * &Polynomial::new(vec![lp.k, lp.c]);
        let lead = lp.delta_g().leading();
        for (a, b) in g2.num().coeffs().iter().zip(num.coeffs()) {
            assert!((a - b / lead).abs() <= 1e-12 * (b / lead).abs());
        }
        for (a, b) in g2.den().coeffs().iter().zip(lp.delta_g().coeffs()) {
            assert!((a - b / lead).abs() <= 1e-12 * (b / lead).abs());
        }
    }

    #[test]
    fn dc_transmission_is_unity() {
        let lp = LumpedParams::default();
        assert!((build_g2(&lp).unwrap().dc_gain().unwrap() - 1.0).abs() < 1e-12);
        assert!((build_g2_mid(&lp).unwrap().dc_gain().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mid_transmission_high_frequency_limit() {
        let lp = LumpedParams::default();
        let g = build_g2_mid(&lp).unwrap();
        assert_eq!(g.num().degree(), 4);
        let limit = (lp.m + lp.m_m) * lp.m / ((2.0 * lp.m + lp.m_m) * lp.m);
        assert!((g.num().leading() - limit).abs() < 1e-12);
    }

    #[test]
    fn virtual_motor_dc_gain_and_poles() {
        let vp = VirtualMotorParams::default();
        let gv = build_virtual_motor(&vp).unwrap();
        assert!((gv.dc_gain().unwrap() - 2.0).abs() < 1e-12);
        let poles = gv.poles().unwrap();
        assert!(poles.iter().all(|p| p.re < 0.0));
        // R sits just below the critical-damping value sqrt(4 L k_b k_t / J)
        for p in &poles {
            assert!(p.im.abs() < 0.01 * p.norm());
        }
        let stiff = build_virtual_motor(&VirtualMotorParams {
            back_emf_constant: 1e9,
            ..vp
        })
        .unwrap();
        assert!(stiff.dc_gain().unwrap() < 1e-8);
    }

    #[test]
    fn motor_chain_has_integrator() {
        let g1 = build_motor_chain(&VirtualMotorParams::default(), 1.0).unwrap();
        assert_eq!(g1.den().degree(), 3);
        assert!(g1.poles().unwrap().iter().any(|p| p.norm() == 0.0));
        assert!(build_motor_chain(&VirtualMotorParams::default(), 0.0).is_err());
    }
}
