use std::f64::consts::PI;

use backlash_imc::lti::{Polynomial, RationalTf, SisoStepper};
use num_complex::Complex64;
use proptest::prelude::*;

/// Stable roots: real poles and conjugate pairs in the open left half-plane.
fn stable_roots(max_deg: usize) -> impl Strategy<Value = Vec<Complex64>> {
    let real = (0.2f64..20.0).prop_map(|a| vec![Complex64::new(-a, 0.0)]);
    let pair = (0.2f64..10.0, 0.5f64..30.0)
        .prop_map(|(s, w)| vec![Complex64::new(-s, w), Complex64::new(-s, -w)]);
    prop::collection::vec(prop_oneof![real, pair], 1..=max_deg).prop_map(move |groups| {
        let mut r: Vec<Complex64> = groups.into_iter().flatten().collect();
        r.truncate(max_deg);
        if r.last().is_some_and(|z| z.im > 0.0) {
            r.pop();
        }
        r
    })
}

fn coeff_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..5.0, n)
}

/// A random stable proper TF of degree up to three.
fn stable_tf() -> impl Strategy<Value = RationalTf> {
    (stable_roots(3).prop_filter("non-empty", |r| !r.is_empty()), 0.2f64..5.0, 0usize..3).prop_flat_map(
        |(poles, k, nz)| {
            let nz = nz.min(poles.len() - 1);
            coeff_strategy(nz + 1).prop_map(move |num| {
                let den = Polynomial::from_roots(&poles);
                RationalTf::new(Polynomial::new(num).scale(k), den, backlash_imc::lti::Domain::Continuous).unwrap()
            })
        },
    )
}

fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
    (a - b).norm() <= tol * a.norm().max(b.norm()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn roots_round_trip(roots in stable_roots(6), lead in 0.5f64..3.0) {
        prop_assume!(!roots.is_empty());
        let p = Polynomial::from_roots(&roots).scale(lead);
        let back = Polynomial::from_roots(&p.roots().unwrap()).scale(lead);
        let scale = p.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        for (a, b) in p.coeffs().iter().zip(back.coeffs()) {
            prop_assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn connection_algebra(a in stable_tf(), b in stable_tf(), f in 0.01f64..20.0) {
        let ga = a.freq_response(f).unwrap();
        let gb = b.freq_response(f).unwrap();
        let s = a.series(&b).unwrap().freq_response(f).unwrap();
        let p = a.parallel(&b).unwrap().freq_response(f).unwrap();
        prop_assert!(close(s, ga * gb, 1e-10));
        prop_assert!(close(p, ga + gb, 1e-10));
        if let Ok(fb) = a.feedback(&b).unwrap().freq_response(f) {
            let expect = ga / (1.0 + ga * gb);
            prop_assert!(close(fb, expect, 1e-9), "{fb} vs {expect}");
        }
    }

    #[test]
    fn zoh_matches_continuous_step(poles in stable_roots(4), k in 0.5f64..3.0, dt_exp in -4.0f64..-3.0) {
        prop_assume!(!poles.is_empty());
        // Distinct poles so the residue expansion below applies.
        for i in 0..poles.len() {
            for j in 0..i {
                prop_assume!((poles[i] - poles[j]).norm() > 1e-2);
            }
        }
        let dt = 10f64.powf(dt_exp);
        let den = Polynomial::from_roots(&poles);
        let g = RationalTf::new(Polynomial::constant(k * den.coeffs()[0]), den.clone(), backlash_imc::lti::Domain::Continuous).unwrap();
        // y(t) = G(0) + sum_i N(p_i) exp(p_i t) / (p_i D'(p_i))
        let d_den = den.derivative();
        let num0 = k * den.coeffs()[0];
        let step = |t: f64| -> f64 {
            let mut y = Complex64::new(k, 0.0);
            for &p in &poles {
                y += num0 * (p * t).exp() / (p * d_den.eval_complex(p));
            }
            y.re
        };
        let slowest = poles.iter().map(|p| -p.re).fold(f64::INFINITY, f64::min);
        let horizon = (5.0 / slowest).min(20.0);
        let n = (horizon / dt) as usize;
        let mut st = SisoStepper::from_tf(&g, dt).unwrap();
        for i in 0..n {
            let y = st.step(1.0);
            let exact = step(i as f64 * dt);
            prop_assert!((y - exact).abs() <= 1e-3 * k, "t = {} y = {y} exact = {exact}", i as f64 * dt);
        }
    }

    #[test]
    fn zoh_preserves_dc_gain(g in stable_tf(), dt in 1e-4f64..1e-2) {
        let c = g.to_state_space().unwrap();
        let d = c.discretize_zoh(dt).unwrap();
        let gc = c.dc_gain().unwrap()[(0, 0)];
        let gd = d.dc_gain().unwrap()[(0, 0)];
        prop_assert!((gc - gd).abs() <= 1e-8 * gc.abs().max(1e-12), "{gc} vs {gd}");
        prop_assert!((gc - g.dc_gain().unwrap()).abs() <= 1e-10 * gc.abs());
    }
}

#[test]
fn continuous_frequency_response_of_lag() {
    let g = RationalTf::continuous(&[2.0], &[2.0, 1.0]).unwrap();
    let f = 1.0 / PI;
    let v = g.freq_response(f).unwrap();
    assert!((v - Complex64::new(2.0, 0.0) / Complex64::new(2.0, 2.0)).norm() < 1e-15);
}
