use nalgebra::{DMatrix, DVector};

use super::{Domain, LtiError, RationalTf};

/// `x' = A x + B u`, `y = C x + D u` (or the shift form when discrete).
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub domain: Domain,
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        domain: Domain,
    ) -> Result<Self, LtiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LtiError::Shape(format!("A is {}x{}", n, a.ncols())));
        }
        if b.nrows() != n || c.ncols() != n {
            return Err(LtiError::Shape(format!(
                "B has {} rows and C has {} columns for {} states",
                b.nrows(),
                c.ncols(),
                n
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(LtiError::Shape(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d, domain })
    }

    pub(crate) fn from_tf(tf: &RationalTf) -> Result<Self, LtiError> {
        if !tf.is_proper() {
            return Err(LtiError::Improper {
                num_degree: tf.num().degree(),
                den_degree: tf.den().degree(),
            });
        }
        // den is monic by construction
        let den = tf.den().coeffs();
        let n = den.len() - 1;
        let mut num = tf.num().coeffs().to_vec();
        num.resize(n + 1, 0.0);
        let d = num[n];
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, 1);
        let mut c = DMatrix::zeros(1, n);
        for j in 0..n {
            a[(0, j)] = -den[n - 1 - j];
            c[(0, j)] = num[n - 1 - j] - d * den[n - 1 - j];
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        if n > 0 {
            b[(0, 0)] = 1.0;
        }
        Self::new(a, b, c, DMatrix::from_element(1, 1, d), tf.domain())
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Exact zero-order-hold equivalent from the exponential of the
    /// augmented block matrix `[[A, B], [0, 0]] dt`.
    pub fn discretize_zoh(&self, dt: f64) -> Result<Self, LtiError> {
        if !self.domain.is_continuous() {
            return Err(LtiError::NotContinuous);
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LtiError::InvalidSampleTime(dt));
        }
        let n = self.order();
        let m = self.inputs();
        let domain = Domain::Discrete { sample_time: dt };
        if n == 0 {
            return Self::new(
                self.a.clone(),
                self.b.clone(),
                self.c.clone(),
                self.d.clone(),
                domain,
            );
        }
        let mut aug = DMatrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * dt));
        aug.view_mut((0, n), (n, m)).copy_from(&(&self.b * dt));
        let e = aug.exp();
        let ad = e.view((0, 0), (n, n)).into_owned();
        let bd = e.view((0, n), (n, m)).into_owned();
        Self::new(ad, bd, self.c.clone(), self.d.clone(), domain)
    }

    /// One step of a discrete model: returns `(x_next, y)`.
    pub fn step(
        &self,
        state: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), LtiError> {
        if self.domain.is_continuous() {
            return Err(LtiError::NotDiscrete);
        }
        if state.len() != self.order() || u.len() != self.inputs() {
            return Err(LtiError::Shape(format!(
                "state {} / input {} for a model with {} states and {} inputs",
                state.len(),
                u.len(),
                self.order(),
                self.inputs()
            )));
        }
        let y = &self.c * state + &self.d * u;
        let next = &self.a * state + &self.b * u;
        Ok((next, y))
    }

    /// Steady-state gain `C (I - A)^-1 B + D` (discrete) or `-C A^-1 B + D`.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>, LtiError> {
        let n = self.order();
        if n == 0 {
            return Ok(self.d.clone());
        }
        let m = match self.domain {
            Domain::Continuous => -self.a.clone(),
            Domain::Discrete { .. } => DMatrix::identity(n, n) - &self.a,
        };
        let sol = m
            .lu()
            .solve(&self.b)
            .ok_or(LtiError::PoleProximity { freq_hz: 0.0 })?;
        Ok(&self.c * sol + &self.d)
    }
}

/// Allocation-free single-input single-output stepper for a discrete
/// state-space model. Owns its state vector.
#[derive(Debug, Clone)]
pub struct SisoStepper {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    x: Vec<f64>,
    scratch: Vec<f64>,
}

impl SisoStepper {
    pub fn new(ss: &StateSpace) -> Result<Self, LtiError> {
        if ss.domain.is_continuous() {
            return Err(LtiError::NotDiscrete);
        }
        if ss.inputs() != 1 || ss.outputs() != 1 {
            return Err(LtiError::Shape(format!(
                "{} inputs / {} outputs, expected SISO",
                ss.inputs(),
                ss.outputs()
            )));
        }
        let n = ss.order();
        let mut a = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                a.push(ss.a[(i, j)]);
            }
        }
        Ok(Self {
            n,
            a,
            b: ss.b.column(0).iter().copied().collect(),
            c: ss.c.row(0).iter().copied().collect(),
            d: ss.d[(0, 0)],
            x: vec![0.0; n],
            scratch: vec![0.0; n],
        })
    }

    /// ZOH discretization of a continuous TF, ready to step.
    pub fn from_tf(tf: &RationalTf, dt: f64) -> Result<Self, LtiError> {
        Self::new(&tf.to_state_space()?.discretize_zoh(dt)?)
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// `C x + D u` for the current state.
    #[inline]
    pub fn output(&self, u: f64) -> f64 {
        let mut y = self.d * u;
        for (ci, xi) in self.c.iter().zip(&self.x) {
            y += ci * xi;
        }
        y
    }

    #[inline]
    pub fn advance(&mut self, u: f64) {
        let n = self.n;
        for i in 0..n {
            let row = &self.a[i * n..(i + 1) * n];
            let mut acc = self.b[i] * u;
            for (aij, xj) in row.iter().zip(&self.x) {
                acc += aij * xj;
            }
            self.scratch[i] = acc;
        }
        std::mem::swap(&mut self.x, &mut self.scratch);
    }

    /// Output for input `u`, then advance the state.
    #[inline]
    pub fn step(&mut self, u: f64) -> f64 {
        let y = self.output(u);
        self.advance(u);
        y
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn set_state(&mut self, x: &[f64]) {
        self.x.copy_from_slice(x);
    }

    pub fn reset(&mut self) {
        self.x.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_order_canonical_form() {
        let ss = RationalTf::continuous(&[3.0], &[2.0, 1.0])
            .unwrap()
            .to_state_space()
            .unwrap();
        assert_eq!(ss.a[(0, 0)], -2.0);
        assert_eq!(ss.b[(0, 0)], 1.0);
        assert_eq!(ss.c[(0, 0)], 3.0);
        assert_eq!(ss.d[(0, 0)], 0.0);
    }

    #[test]
    fn biproper_feedthrough() {
        let ss = RationalTf::continuous(&[1.0, 1.0], &[2.0, 1.0])
            .unwrap()
            .to_state_space()
            .unwrap();
        assert_eq!(ss.d[(0, 0)], 1.0);
        assert_eq!(ss.c[(0, 0)], -1.0);
    }

    #[test]
    fn improper_rejected() {
        let g = RationalTf::continuous(&[0.0, 0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(g.to_state_space(), Err(LtiError::Improper { .. })));
    }

    #[test]
    fn zoh_integrator_exact() {
        let dt = 0.1;
        let ss = RationalTf::integrator(1.0)
            .to_state_space()
            .unwrap()
            .discretize_zoh(dt)
            .unwrap();
        assert!((ss.a[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((ss.b[(0, 0)] - dt).abs() < 1e-15);
        let (x, y) = ss
            .step(&DVector::from_element(1, 0.0), &DVector::from_element(1, 1.0))
            .unwrap();
        assert_eq!(y[0], 0.0);
        assert!((x[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zoh_first_order_closed_form() {
        let (a, dt) = (3.0, 0.01);
        let ss = RationalTf::continuous(&[1.0], &[a, 1.0])
            .unwrap()
            .to_state_space()
            .unwrap()
            .discretize_zoh(dt)
            .unwrap();
        assert!((ss.a[(0, 0)] - (-a * dt).exp()).abs() < 1e-14);
        assert!((ss.b[(0, 0)] - (1.0 - (-a * dt).exp()) / a).abs() < 1e-14);
    }

    #[test]
    fn discretize_twice_rejected() {
        let ss = RationalTf::integrator(1.0)
            .to_state_space()
            .unwrap()
            .discretize_zoh(0.1)
            .unwrap();
        assert!(matches!(ss.discretize_zoh(0.1), Err(LtiError::NotContinuous)));
    }

    #[test]
    fn step_shape_errors() {
        let ss = RationalTf::integrator(1.0)
            .to_state_space()
            .unwrap()
            .discretize_zoh(0.1)
            .unwrap();
        assert!(matches!(
            ss.step(&DVector::zeros(2), &DVector::zeros(1)),
            Err(LtiError::Shape(_))
        ));
    }

    #[test]
    fn zero_input_stays_zero() {
        let mut s = SisoStepper::from_tf(
            &RationalTf::continuous(&[1.0], &[1.0, 0.2, 1.0]).unwrap(),
            1e-3,
        )
        .unwrap();
        for _ in 0..1000 {
            assert_eq!(s.step(0.0), 0.0);
        }
    }

    #[test]
    fn first_order_step_reaches_analytic_value() {
        let mut s =
            SisoStepper::from_tf(&RationalTf::continuous(&[10.0], &[10.0, 1.0]).unwrap(), 1e-3)
                .unwrap();
        let mut y = 0.0;
        for _ in 0..1000 {
            s.advance(1.0);
            y = s.output(1.0);
        }
        let exact = 1.0 - (-10.0_f64).exp();
        assert!((y - exact).abs() < 1e-10);
        assert!((y - 1.0).abs() < 1e-4);
    }
}
