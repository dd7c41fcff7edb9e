//! Canonical and standard RNN cells, and the backward-Euler construction
//! that samples a single-delay continuous system into the canonical form.
//!
//! The canonical cell is
//!
//! ```text
//! s[n] = W_s s[n-1] + W_r r[n-1] + W_x x[n] + θ_s
//! r[n] = G_d(s[n])
//! ```
//!
//! and the standard cell is the same recurrence with `W_s = 0`.

use crate::error::{Error, Result};
use crate::numerics::{gd, Eigenvalue, Matrix, Vector};
use crate::params::{mmut, mref, vmut, vref, Parameters, TensorMut, TensorRef};

/// Residual bound for accepting `(I − ΔT·A)⁻¹`.
pub const INVERSION_TOLERANCE: f64 = 1e-9;

/// `ds/dt = A s(t) + B r(t − τ₀) + C x(t) + φ` with a single delay `τ₀ = ΔT`.
#[derive(Clone, Debug)]
pub struct ContinuousSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub phi: Vector,
    pub delta_t: f64,
}

impl ContinuousSystem {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, phi: Vector, delta_t: f64) -> Result<Self> {
        let ds = a.rows();
        if !a.is_square() {
            return Err(Error::mismatch("ContinuousSystem A", a.shape(), "square"));
        }
        if b.rows() != ds || b.cols() != ds {
            return Err(Error::mismatch("ContinuousSystem B", b.shape(), format!("{ds}x{ds}")));
        }
        if c.rows() != ds {
            return Err(Error::mismatch("ContinuousSystem C", c.shape(), format!("{ds}xd_x")));
        }
        if phi.len() != ds {
            return Err(Error::mismatch("ContinuousSystem φ", phi.shape(), format!("[{ds}]")));
        }
        if !(delta_t > 0.0 && delta_t.is_finite()) {
            return Err(Error::InvalidConfig(format!("sampling step must be positive, got {delta_t}")));
        }
        let sys = ContinuousSystem { a, b, c, phi, delta_t };
        sys.implicit_operator().inverse(INVERSION_TOLERANCE)?;
        Ok(sys)
    }

    /// `I − ΔT·A`.
    pub fn implicit_operator(&self) -> Matrix {
        Matrix::identity(self.a.rows()).sub(&self.a.scale(self.delta_t)).expect("square A")
    }

    /// Backward-Euler sampling into the canonical RNN:
    /// `W_s = (I − ΔT·A)⁻¹`, `W_r = ΔT·W_s·B`, `W_x = ΔT·W_s·C`, `θ_s = ΔT·W_s·φ`.
    pub fn discretize(&self) -> Result<CanonicalRnnParams> {
        let w_s = self.implicit_operator().inverse(INVERSION_TOLERANCE)?;
        let dt = self.delta_t;
        Ok(CanonicalRnnParams {
            w_r: w_s.matmul(&self.b)?.scale(dt),
            w_x: w_s.matmul(&self.c)?.scale(dt),
            theta_s: w_s.matvec(&self.phi)?.scale(dt),
            w_s,
        })
    }

    /// Norm of `(I − ΔT·A)·s[n] − (s[n−1] + ΔT·B·r[n−1] + ΔT·C·x[n] + ΔT·φ)`,
    /// the implicit recurrence before solving for `s[n]`.
    pub fn implicit_residual(&self, s: &Vector, s_prev: &Vector, r_prev: &Vector, x: &Vector) -> Result<f64> {
        let dt = self.delta_t;
        let lhs = self.implicit_operator().matvec(s)?;
        let mut rhs = s_prev.clone();
        rhs.axpy(dt, &self.b.matvec(r_prev)?)?;
        rhs.axpy(dt, &self.c.matvec(x)?)?;
        rhs.axpy(dt, &self.phi)?;
        Ok(lhs.sub(&rhs)?.norm2())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalRnnParams {
    pub w_s: Matrix,
    pub w_r: Matrix,
    pub w_x: Matrix,
    pub theta_s: Vector,
}

impl CanonicalRnnParams {
    pub fn state_dim(&self) -> usize {
        self.w_s.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    /// One step of the canonical recurrence; returns `(s[n], r[n])`.
    pub fn step(&self, s_prev: &Vector, r_prev: &Vector, x: &Vector) -> Result<(Vector, Vector)> {
        let mut s = self.w_s.matvec(s_prev)?;
        s.add_assign(&self.w_r.matvec(r_prev)?)?;
        s.add_assign(&self.w_x.matvec(x)?)?;
        s.add_assign(&self.theta_s)?;
        let r = s.map(gd);
        Ok((s, r))
    }

    /// Drop the explicit state memory term.
    pub fn to_standard(&self) -> StandardRnnParams {
        StandardRnnParams {
            w_r: self.w_r.clone(),
            w_x: self.w_x.clone(),
            theta_s: self.theta_s.clone(),
        }
    }
}

impl Parameters for CanonicalRnnParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            mref("W_s", &self.w_s),
            mref("W_r", &self.w_r),
            mref("W_x", &self.w_x),
            vref("theta_s", &self.theta_s),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        vec![
            mmut("W_s", &mut self.w_s),
            mmut("W_r", &mut self.w_r),
            mmut("W_x", &mut self.w_x),
            vmut("theta_s", &mut self.theta_s),
        ]
    }
}

/// Θ = {W_r, W_x, θ_s}.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardRnnParams {
    pub w_r: Matrix,
    pub w_x: Matrix,
    pub theta_s: Vector,
}

/// Signals of a standard RNN unrolled over one segment from `s[−1] = 0`.
#[derive(Clone, Debug)]
pub struct RnnTrace {
    pub inputs: Vec<Vector>,
    /// `r[−1]`.
    pub initial_readout: Vector,
    pub states: Vec<Vector>,
    pub readouts: Vec<Vector>,
}

impl RnnTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub eigenvalues: Vec<Eigenvalue>,
    /// Every eigenvalue is real (|Im| < 1e-9) with `0 < Re < 1`.
    pub stable: bool,
    /// Some eigenvalue has a non-negligible imaginary part. Such spectra are
    /// reported unstable here rather than classified.
    pub complex_spectrum: bool,
}

impl StandardRnnParams {
    pub fn zeros(d_x: usize, d_s: usize) -> Self {
        StandardRnnParams {
            w_r: Matrix::zeros(d_s, d_s),
            w_x: Matrix::zeros(d_s, d_x),
            theta_s: Vector::zeros(d_s),
        }
    }

    pub fn new(w_r: Matrix, w_x: Matrix, theta_s: Vector) -> Result<Self> {
        let p = StandardRnnParams { w_r, w_x, theta_s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ds = self.w_r.rows();
        if !self.w_r.is_square() {
            return Err(Error::mismatch("W_r", self.w_r.shape(), "square"));
        }
        if self.w_x.rows() != ds {
            return Err(Error::mismatch("W_x", self.w_x.shape(), format!("{ds}xd_x")));
        }
        if self.theta_s.len() != ds {
            return Err(Error::mismatch("theta_s", self.theta_s.shape(), format!("[{ds}]")));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.w_r.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    /// `s[n] = W_r r[n−1] + W_x x[n] + θ_s`, `r[n] = G_d(s[n])`.
    pub fn step(&self, r_prev: &Vector, x: &Vector) -> Result<(Vector, Vector)> {
        let mut s = self.w_r.matvec(r_prev)?;
        s.add_assign(&self.w_x.matvec(x)?)?;
        s.add_assign(&self.theta_s)?;
        let r = s.map(gd);
        Ok((s, r))
    }

    /// Unroll over `inputs` with `s[−1] = 0`, hence `r[−1] = G_d(0) = 0`.
    pub fn forward_segment(&self, inputs: &[Vector]) -> Result<RnnTrace> {
        self.forward_segment_from(inputs, &Vector::zeros(self.state_dim()))
    }

    /// Unroll from an arbitrary initial state `s[−1]`.
    pub fn forward_segment_from(&self, inputs: &[Vector], s_init: &Vector) -> Result<RnnTrace> {
        if inputs.is_empty() {
            return Err(Error::InvalidPlan("empty segment".into()));
        }
        if s_init.len() != self.state_dim() {
            return Err(Error::mismatch("initial state", s_init.shape(), format!("[{}]", self.state_dim())));
        }
        let initial_readout = s_init.map(gd);
        let mut r_prev = initial_readout.clone();
        let mut states = Vec::with_capacity(inputs.len());
        let mut readouts = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (s, r) = self.step(&r_prev, x)?;
            states.push(s);
            readouts.push(r.clone());
            r_prev = r;
        }
        Ok(RnnTrace {
            inputs: inputs.to_vec(),
            initial_readout,
            states,
            readouts,
        })
    }

    /// State response to `x[n] = δ[n]·1⃗` from rest, for `n = 0..steps−1`.
    pub fn impulse_response(&self, steps: usize) -> Result<Vec<Vector>> {
        if steps == 0 {
            return Err(Error::InvalidConfig("impulse response needs at least one step".into()));
        }
        let dx = self.input_dim();
        let inputs: Vec<Vector> = (0..steps).map(|n| Vector::filled(dx, if n == 0 { 1.0 } else { 0.0 })).collect();
        Ok(self.forward_segment(&inputs)?.states)
    }

    pub fn stability_report(&self) -> Result<StabilityReport> {
        const IMAG_TOL: f64 = 1e-9;
        let eigenvalues = self.w_r.eigenvalues()?;
        let complex_spectrum = eigenvalues.iter().any(|e| e.im.abs() >= IMAG_TOL);
        let stable = eigenvalues.iter().all(|e| e.im.abs() < IMAG_TOL && e.re > 0.0 && e.re < 1.0);
        Ok(StabilityReport {
            eigenvalues,
            stable,
            complex_spectrum,
        })
    }
}

impl crate::segmentation::Unroll for StandardRnnParams {
    type Trace = RnnTrace;
    fn unroll(&self, inputs: &[Vector]) -> Result<RnnTrace> {
        self.forward_segment(inputs)
    }
}

impl Parameters for StandardRnnParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![mref("W_r", &self.w_r), mref("W_x", &self.w_x), vref("theta_s", &self.theta_s)]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        vec![
            mmut("W_r", &mut self.w_r),
            mmut("W_x", &mut self.w_x),
            vmut("theta_s", &mut self.theta_s),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn scalar_discretization() {
        let sys = ContinuousSystem::new(m(&[vec![-2.0]]), m(&[vec![1.0]]), m(&[vec![1.0]]), v(&[0.0]), 1.0).unwrap();
        let p = sys.discretize().unwrap();
        let third = 1.0 / 3.0;
        assert!((p.w_s.get(0, 0) - third).abs() < 1e-15);
        assert!((p.w_r.get(0, 0) - third).abs() < 1e-15);
        assert!((p.w_x.get(0, 0) - third).abs() < 1e-15);
        assert_eq!(p.theta_s[0], 0.0);
    }

    #[test]
    fn zero_dynamics_give_identity_state_matrix() {
        let sys = ContinuousSystem::new(Matrix::zeros(3, 3), Matrix::identity(3), Matrix::zeros(3, 2), Vector::zeros(3), 1.0).unwrap();
        assert_eq!(sys.discretize().unwrap().w_s, Matrix::identity(3));
    }

    #[test]
    fn strongly_damped_diagonal() {
        let a = Matrix::identity(3).scale(-10.0);
        let sys = ContinuousSystem::new(a, Matrix::identity(3), Matrix::zeros(3, 1), Vector::zeros(3), 1.0).unwrap();
        let w_s = sys.discretize().unwrap().w_s;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 / 11.0 } else { 0.0 };
                assert!((w_s.get(i, j) - want).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn singular_implicit_operator_is_rejected() {
        // I − 1·A = 0 for A = I.
        let err = ContinuousSystem::new(Matrix::identity(2), Matrix::identity(2), Matrix::zeros(2, 1), Vector::zeros(2), 1.0).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn canonical_cell_cases() {
        let zero = CanonicalRnnParams {
            w_s: Matrix::zeros(2, 2),
            w_r: Matrix::zeros(2, 2),
            w_x: Matrix::zeros(2, 1),
            theta_s: Vector::zeros(2),
        };
        let (s, r) = zero.step(&v(&[1.0, -2.0]), &v(&[0.3, 0.4]), &v(&[5.0])).unwrap();
        assert_eq!(s, Vector::zeros(2));
        assert_eq!(r, Vector::zeros(2));

        let p = CanonicalRnnParams {
            w_s: m(&[vec![0.5]]),
            w_r: m(&[vec![0.0]]),
            w_x: m(&[vec![0.0]]),
            theta_s: v(&[0.0]),
        };
        let (s, r) = p.step(&v(&[1.0]), &v(&[0.0]), &v(&[0.0])).unwrap();
        assert_eq!(s[0], 0.5);
        assert_eq!(r[0], 0.5f64.tanh());
    }

    #[test]
    fn impulse_response_expansion() {
        let p = StandardRnnParams::new(
            m(&[vec![0.4, -0.3], vec![0.2, 0.5]]),
            m(&[vec![1.0, 0.5], vec![-0.7, 0.2]]),
            Vector::zeros(2),
        )
        .unwrap();
        let resp = p.impulse_response(4).unwrap();
        let ones = Vector::filled(2, 1.0);
        let mut expect = p.w_x.matvec(&ones).unwrap();
        assert_eq!(resp[0], expect);
        for s in &resp[1..] {
            expect = p.w_r.matvec(&expect.map(gd)).unwrap();
            assert_eq!(*s, expect);
        }
    }

    #[test]
    fn impulse_response_dies_without_recurrence() {
        let mut p = StandardRnnParams::zeros(2, 3);
        p.w_x = Matrix::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0);
        let resp = p.impulse_response(5).unwrap();
        assert!(resp[0].norm2() > 0.0);
        assert!(resp[1..].iter().all(|s| s.norm2() == 0.0));
    }

    #[test]
    fn scalar_impulse_response_recomputed_by_hand() {
        let p = StandardRnnParams::new(m(&[vec![0.5]]), m(&[vec![1.0]]), v(&[0.0])).unwrap();
        let resp = p.impulse_response(6).unwrap();
        let mut s = 1.0f64;
        assert_eq!(resp[0][0], s);
        for got in &resp[1..] {
            s = 0.5 * s.tanh();
            assert_eq!(got[0], s);
        }
        assert!((resp[1][0] - 0.5 * 1.0f64.tanh()).abs() < 1e-16);
        for w in resp[1..].windows(2) {
            assert!(w[1][0].abs() < w[0][0].abs());
        }
    }

    #[test]
    fn stability_classification() {
        let diag = |d: &[f64]| StandardRnnParams::new(Matrix::from_diag(&v(d)), Matrix::zeros(d.len(), 1), Vector::zeros(d.len())).unwrap();
        assert!(diag(&[0.3, 0.7]).stability_report().unwrap().stable);
        assert!(!diag(&[1.5, 0.2]).stability_report().unwrap().stable);
        let rep = StandardRnnParams::new(Matrix::identity(3).scale(0.9), Matrix::zeros(3, 1), Vector::zeros(3))
            .unwrap()
            .stability_report()
            .unwrap();
        assert!(rep.stable);
        assert!(rep.eigenvalues.iter().all(|e| (e.re - 0.9).abs() < 1e-15));

        let rot = StandardRnnParams::new(m(&[vec![0.0, -0.5], vec![0.5, 0.0]]), Matrix::zeros(2, 1), Vector::zeros(2))
            .unwrap()
            .stability_report()
            .unwrap();
        assert!(rot.complex_spectrum && !rot.stable);
    }
}
