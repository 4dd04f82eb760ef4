//! Real-coefficient polynomials stored in ascending powers.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::LtiError;

/// A real polynomial `c[0] + c[1] x + ... + c[n] x^n`.
///
/// Trailing (highest-power) zeros are trimmed on construction, so the
/// leading coefficient is nonzero unless the polynomial is identically
/// zero, which is stored as `[0.0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// `x`, the identity monomial.
    pub fn x() -> Self {
        Self::new(vec![0.0, 1.0])
    }

    /// Monic polynomial with the given roots. Complex roots must come in
    /// conjugate pairs; the imaginary residue of the expansion is dropped.
    pub fn from_roots(roots: &[Complex64]) -> Self {
        let mut acc = vec![Complex64::new(1.0, 0.0)];
        for r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
            for (i, a) in acc.iter().enumerate() {
                next[i + 1] += a;
                next[i] -= a * r;
            }
            acc = next;
        }
        Self::new(acc.into_iter().map(|c| c.re).collect())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_complex(&self, x: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
    }

    /// `sum |c_i| |x|^i`, the magnitude scale against which rounding in
    /// [`eval_complex`](Self::eval_complex) should be judged.
    pub fn magnitude_scale(&self, x: Complex64) -> f64 {
        let r = x.norm();
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c.abs())
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zero();
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| c * i as f64)
                .collect(),
        )
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * k).collect())
    }

    /// `self + other` with leading coefficients dropped when they are
    /// rounding residue of a cancellation, i.e. tiny relative to the terms
    /// that produced them.
    pub fn add_cancelling(&self, other: &Self, rel_tol: f64) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |c: &[f64], i: usize| c.get(i).copied().unwrap_or(0.0);
        let mut coeffs: Vec<f64> = (0..n)
            .map(|i| get(&self.coeffs, i) + get(&other.coeffs, i))
            .collect();
        while coeffs.len() > 1 {
            let k = coeffs.len() - 1;
            let bound = get(&self.coeffs, k).abs() + get(&other.coeffs, k).abs();
            if coeffs[k].abs() <= rel_tol * bound {
                coeffs.pop();
            } else {
                break;
            }
        }
        Self::new(coeffs)
    }

    /// All complex roots, with multiplicity, from the eigenvalues of the
    /// balanced companion matrix. Conjugate pairs are adjacent with the
    /// positive-imaginary member first.
    pub fn roots(&self) -> Result<Vec<Complex64>, LtiError> {
        if self.is_zero() {
            return Err(LtiError::DegenerateInput(
                "roots of the zero polynomial are undefined".into(),
            ));
        }
        // exact roots at the origin are factored out so integrators stay exact
        let zeros_at_origin = self.coeffs.iter().take_while(|&&c| c == 0.0).count();
        let reduced = &self.coeffs[zeros_at_origin..];
        let n = reduced.len() - 1;
        let mut roots = vec![Complex64::new(0.0, 0.0); zeros_at_origin];
        if n == 0 {
            return Ok(roots);
        }
        let lead = reduced[n];
        let mut companion = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            companion[(0, j)] = -reduced[n - 1 - j] / lead;
        }
        for i in 1..n {
            companion[(i, i - 1)] = 1.0;
        }
        balance(&mut companion);
        let eig = companion.complex_eigenvalues();
        let reduced_poly = Polynomial::new(reduced.to_vec());
        let polished: Vec<Complex64> = eig.iter().map(|&z| reduced_poly.polish(z)).collect();
        roots.extend(pair_conjugates(polished));
        Ok(roots)
    }

    /// A few guarded Newton steps; keeps the input when a step does not
    /// reduce the residual (multiple roots converge slowly and are left alone).
    fn polish(&self, mut z: Complex64) -> Complex64 {
        let d = self.derivative();
        let mut res = self.eval_complex(z).norm();
        for _ in 0..3 {
            let dp = d.eval_complex(z);
            if dp.norm() == 0.0 {
                break;
            }
            let cand = z - self.eval_complex(z) / dp;
            let cres = self.eval_complex(cand).norm();
            if !(cres < res) {
                break;
            }
            z = cand;
            res = cres;
        }
        z
    }
}

/// Parlett–Reinsch diagonal similarity balancing with radix-2 factors.
fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    let radix = 2.0_f64;
    let sqrdx = radix * radix;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut g = r / radix;
            let mut f = 1.0;
            while c < g {
                f *= radix;
                c *= sqrdx;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= g;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
        if done {
            break;
        }
    }
}

fn pair_conjugates(roots: Vec<Complex64>) -> Vec<Complex64> {
    let tol = |z: Complex64| 1e-10 * z.norm().max(1e-300);
    let mut real: Vec<Complex64> = Vec::new();
    let mut upper: Vec<Complex64> = Vec::new();
    let mut lower: Vec<Complex64> = Vec::new();
    for z in roots {
        if z.im.abs() <= tol(z) {
            real.push(Complex64::new(z.re, 0.0));
        } else if z.im > 0.0 {
            upper.push(z);
        } else {
            lower.push(z);
        }
    }
    let mut out = Vec::new();
    if upper.len() != lower.len() {
        // unbalanced split from rounding; fall back to treating the extras as real
        let mut all: Vec<Complex64> = upper.into_iter().chain(lower).collect();
        all.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        real.extend(all.into_iter().map(|z| Complex64::new(z.re, 0.0)));
        real.sort_by(|a, b| b.re.total_cmp(&a.re));
        return real;
    }
    let mut pairs = Vec::new();
    for z in upper {
        let (k, _) = lower
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (z - a.conj()).norm().total_cmp(&(z - b.conj()).norm()))
            .unwrap();
        let w = lower.swap_remove(k);
        let avg = (z + w.conj()) * 0.5;
        pairs.push(avg);
    }
    pairs.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.re.total_cmp(&b.re)));
    real.sort_by(|a, b| b.re.total_cmp(&a.re));
    for z in pairs {
        out.push(z);
        out.push(z.conj());
    }
    out.extend(real);
    out
}

impl TryFrom<Vec<f64>> for Polynomial {
    type Error = LtiError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(LtiError::DegenerateInput(
                "polynomial coefficients must be finite".into(),
            ));
        }
        Ok(Self::new(v))
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;

    fn add(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let c = (0..n)
            .map(|i| self.coeffs.get(i).unwrap_or(&0.0) + rhs.coeffs.get(i).unwrap_or(&0.0))
            .collect();
        Polynomial::new(c)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;

    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;

    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;

    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut c = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Polynomial::new(c)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate().rev() {
            if *c == 0.0 && self.coeffs.len() > 1 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match i {
                0 => write!(f, "{c}")?,
                1 => write!(f, "{c}·s")?,
                _ => write!(f, "{c}·s^{i}")?,
            }
        }
        Ok(())
    }
}
