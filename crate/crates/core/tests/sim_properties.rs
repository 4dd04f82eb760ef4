use backlash_imc::control::pid_tf;
use backlash_imc::lti::SisoStepper;
use backlash_imc::plant::{build_g2, build_motor_chain};
use backlash_imc::sim::{command_signal, run_scenario, Architecture, BacklashSchedule, Command, Scenario, SimTrace};
use proptest::prelude::*;

const DEG: f64 = std::f64::consts::PI / 180.0;

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn range(v: &[f64]) -> f64 {
    v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x)) - v.iter().fold(f64::INFINITY, |m, x| m.min(*x))
}

/// The same loops without any backlash element, written out directly.
fn linear_loop(sc: &Scenario) -> Vec<f64> {
    let dt = 1.0 / sc.plant_rate_hz;
    let ratio = (sc.plant_rate_hz / sc.controller_rate_hz).round() as usize;
    let p = sc.plant.pitch;
    let g1 = build_motor_chain(&sc.motor, sc.km).unwrap();
    let g2 = build_g2(&sc.plant).unwrap();
    let mut plant1 = SisoStepper::from_tf(&g1, dt).unwrap();
    let mut plant2 = SisoStepper::from_tf(&g2, dt).unwrap();
    let n = (sc.duration * sc.plant_rate_hz).round() as usize + 1;
    let mut ys = Vec::with_capacity(n);
    let mut u = 0.0;
    match sc.architecture {
        Architecture::Pid => {
            let mut c = SisoStepper::from_tf(&pid_tf(&sc.pid).unwrap(), dt * ratio as f64).unwrap();
            for k in 0..n {
                let t = k as f64 * dt;
                let th = plant1.output(0.0);
                let y = plant2.output(p * th);
                if k % ratio == 0 {
                    u = c.step(sc.pid_error_scale * (command_signal(&sc.command, t) - y));
                }
                ys.push(y);
                plant1.advance(u);
                plant2.advance(p * th);
            }
        }
        _ => {
            let d = sc.design().unwrap();
            let k_theta = d.settings.k_theta;
            let mut w = SisoStepper::from_tf(&d.w, dt * ratio as f64).unwrap();
            let mut m1 = SisoStepper::from_tf(&d.g1_hat, dt).unwrap();
            let mut m2 = SisoStepper::from_tf(&d.g2_hat, dt).unwrap();
            let mut u_model = 0.0;
            for k in 0..n {
                let t = k as f64 * dt;
                let th = plant1.output(0.0);
                let y = plant2.output(p * th);
                let th_hat = m1.output(0.0);
                let y_hat = m2.output(d.pitch * th_hat);
                if k % ratio == 0 {
                    let theta_r = w.step(command_signal(&sc.command, t) - (y - y_hat));
                    u = k_theta * (theta_r - th);
                    u_model = k_theta * (theta_r - th_hat);
                }
                ys.push(y);
                plant1.advance(u);
                plant2.advance(p * th);
                m1.advance(u_model);
                m2.advance(d.pitch * th_hat);
            }
        }
    }
    ys
}

fn arch() -> impl Strategy<Value = Architecture> {
    prop_oneof![
        Just(Architecture::Pid),
        Just(Architecture::ImcLinear),
        Just(Architecture::ImcDz),
        Just(Architecture::ImcDzEstimator),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn runs_are_deterministic(a in arch(), seed in any::<u64>(), noise in prop_oneof![Just(0.0), 1e-7f64..1e-6], gap in 0.0f64..100.0) {
        let mut sc = Scenario {
            architecture: a,
            duration: 2.0,
            noise_std: noise,
            seed,
            backlash: BacklashSchedule::Constant { gap: gap * DEG },
            ..Scenario::default()
        };
        sc.imc.estimator_gap = gap * DEG;
        let x = run_scenario(&sc).unwrap();
        let y = run_scenario(&sc).unwrap();
        prop_assert_eq!(bits(&x.y), bits(&y.y));
        prop_assert_eq!(bits(&x.u), bits(&y.u));
        prop_assert_eq!(bits(&x.theta_m), bits(&y.theta_m));
    }

    #[test]
    fn zero_gap_equals_linear_loop(a in prop_oneof![Just(Architecture::Pid), Just(Architecture::ImcLinear)], amp in 0.2f64..2.0) {
        let sc = Scenario {
            architecture: a,
            duration: if a == Architecture::Pid { 5.0 } else { 3.0 },
            command: Command::Step { amp: amp * 1e-3 },
            ..Scenario::default()
        };
        let tr = run_scenario(&sc).unwrap();
        let ys = linear_loop(&sc);
        prop_assert_eq!(tr.len(), ys.len());
        for (a, b) in tr.y.iter().zip(&ys) {
            prop_assert!((a - b).abs() <= 1e-12 * amp * 1e-3);
        }
    }

    #[test]
    fn silent_without_command(a in arch(), gap in 0.0f64..100.0) {
        let sc = Scenario {
            architecture: a,
            duration: 2.0,
            command: Command::Step { amp: 0.0 },
            backlash: BacklashSchedule::Constant { gap: gap * DEG },
            ..Scenario::default()
        };
        let tr = run_scenario(&sc).unwrap();
        for v in [&tr.y, &tr.y_hat, &tr.eps_hat, &tr.u, &tr.theta_m, &tr.theta_d] {
            prop_assert!(v.iter().all(|x| *x == 0.0));
        }
    }
}

#[test]
fn imc_without_gap_or_dead_zone_is_linear_imc() {
    let base = Scenario {
        duration: 3.0,
        ..Scenario::default()
    };
    let mut dz = Scenario {
        architecture: Architecture::ImcDzEstimator,
        ..base.clone()
    };
    dz.imc.dead_zone.width = 0.0;
    dz.imc.estimator_gap = 0.0;
    let a = run_scenario(&base).unwrap();
    let b = run_scenario(&dz).unwrap();
    assert_eq!(bits(&a.y), bits(&b.y));
}

#[test]
fn plant_rate_converged() {
    let coarse = run_scenario(&Scenario {
        duration: 5.0,
        ..Scenario::default()
    })
    .unwrap();
    let fine = run_scenario(&Scenario {
        duration: 5.0,
        plant_rate_hz: 2e4,
        ..Scenario::default()
    })
    .unwrap();
    assert_eq!(fine.len(), 2 * coarse.len() - 1);
    let n = coarse.len() as f64;
    let rms = (coarse
        .y
        .iter()
        .enumerate()
        .map(|(i, y)| (y - fine.y[2 * i]).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    assert!(rms / 1e-3 < 1e-3, "rms {rms}");
}

fn drift_run(dz_deg: f64) -> SimTrace {
    let mut sc = Scenario {
        architecture: Architecture::ImcDz,
        duration: 20.0,
        backlash: BacklashSchedule::Constant { gap: 50.0 * DEG },
        ..Scenario::default()
    };
    sc.imc.dead_zone.width = dz_deg * DEG;
    run_scenario(&sc).unwrap()
}

#[test]
fn motor_drifts_inside_gap_unless_dead_zone() {
    let free = drift_run(0.0);
    let w = free.window(15.0, f64::INFINITY);
    let wander = range(&free.theta_m[w.clone()]);
    let driven = range(&free.theta_d[w]);
    assert!(wander > 0.1 * DEG, "wander {}", wander / DEG);
    assert!(driven < 0.05 * wander, "driven {} vs {}", driven / DEG, wander / DEG);

    let held = drift_run(0.9);
    let w = held.window(15.0, f64::INFINITY);
    assert!(range(&held.theta_m[w]) < 1e-3 * DEG);
}
