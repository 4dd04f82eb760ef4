//! Levenberg-Marquardt with a central-difference Jacobian, shared by the
//! nonlinear fitters.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iter: usize,
    /// Gradient infinity-norm below which the start point is already optimal.
    pub gtol: f64,
    /// Relative cost decrease treated as stagnation.
    pub ftol: f64,
    /// Relative step length treated as convergence.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-12,
            ftol: 1e-14,
            xtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub x: Vec<f64>,
    /// Half the residual sum of squares.
    pub cost: f64,
    pub iterations: usize,
    pub cost_trace: Vec<f64>,
    pub converged: bool,
}

fn half_ssq(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

fn jacobian<F>(f: &mut F, x: &[f64], r0: &DVector<f64>) -> Option<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(r0.len(), n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1e-3);
        xp[j] = x[j] + h;
        let rp = f(&xp)?;
        xp[j] = x[j] - h;
        let rm = f(&xp)?;
        xp[j] = x[j];
        if rp.len() != r0.len() || rm.len() != r0.len() {
            return None;
        }
        for i in 0..r0.len() {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

/// Minimizes `0.5 |f(x)|^2`. `project` maps a trial point back onto the
/// feasible set; `f` returns `None` where the model cannot be evaluated.
pub(crate) fn minimize<F, P>(mut f: F, x0: &[f64], opts: LmOptions, project: P) -> LmOutcome
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
    P: Fn(&mut [f64]),
{
    let mut x = x0.to_vec();
    project(&mut x);
    let Some(r) = f(&x) else {
        return LmOutcome {
            x,
            cost: f64::INFINITY,
            iterations: 0,
            cost_trace: vec![f64::INFINITY],
            converged: false,
        };
    };
    let mut r = DVector::from_vec(r);
    let mut cost = half_ssq(&r);
    let mut trace = vec![cost];
    let mut lambda = 1e-3;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let Some(jac) = jacobian(&mut f, &x, &r) else {
            break;
        };
        let jt = jac.transpose();
        let grad = &jt * &r;
        if grad.amax() <= opts.gtol {
            return LmOutcome {
                x,
                cost,
                iterations,
                cost_trace: trace,
                converged: true,
            };
        }
        let jtj = &jt * &jac;
        iterations += 1;

        let mut accepted = false;
        for _ in 0..40 {
            let mut lhs = jtj.clone();
            for i in 0..lhs.nrows() {
                lhs[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = lhs.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial);
            let trial_r = f(&trial).map(DVector::from_vec);
            match trial_r {
                Some(tr) if half_ssq(&tr).is_finite() && half_ssq(&tr) < cost => {
                    let new_cost = half_ssq(&tr);
                    let step: f64 = x
                        .iter()
                        .zip(&trial)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let xnorm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let small_step = step <= opts.xtol * (xnorm + opts.xtol);
                    let stalled = cost - new_cost <= opts.ftol * cost;
                    x = trial;
                    r = tr;
                    cost = new_cost;
                    trace.push(cost);
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if small_step || stalled || cost == 0.0 {
                        return LmOutcome {
                            x,
                            cost,
                            iterations,
                            cost_trace: trace,
                            converged: true,
                        };
                    }
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        if !accepted {
            // no descent direction left at machine precision
            let converged = grad.amax() <= 1e-6 * (1.0 + cost);
            return LmOutcome {
                x,
                cost,
                iterations,
                cost_trace: trace,
                converged,
            };
        }
    }
    LmOutcome {
        x,
        cost,
        iterations,
        cost_trace: trace,
        converged: false,
    }
}
