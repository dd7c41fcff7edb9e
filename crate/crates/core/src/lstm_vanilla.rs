//! Vanilla LSTM cell (forward pass) and input standardization.
//!
//! Per step, in causal order:
//!
//! ```text
//! a_cu = W_xcu x + W_scu s[n-1] + W_vcu v[n-1] + b_cu      g_cu = G_c(a_cu)
//! a_cs = W_xcs x + W_scs s[n-1] + W_vcs v[n-1] + b_cs      g_cs = G_c(a_cs)
//! a_du = W_xdu x               + W_vdu v[n-1] + b_du      u    = G_d(a_du)
//! s    = g_cs ⊙ s[n-1] + g_cu ⊙ u
//! a_cr = W_xcr x + W_scr s     + W_vcr v[n-1] + b_cr      g_cr = G_c(a_cr)
//! r    = G_d(s)                                           v    = g_cr ⊙ r
//! ```
//!
//! The readout gate sees the *current* state `s[n]`, so it is evaluated
//! after the state update.

use crate::error::{Error, Result};
use crate::numerics::{gc, gd, Matrix, Vector};
use crate::params::{mmut, mref, vmut, vref, Parameters, TensorMut, TensorRef};
use crate::segmentation::Unroll;

/// Θ for the Vanilla LSTM, fifteen entities.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaLstmParams {
    pub w_xcu: Matrix,
    pub w_scu: Matrix,
    pub w_vcu: Matrix,
    pub b_cu: Vector,
    pub w_xcs: Matrix,
    pub w_scs: Matrix,
    pub w_vcs: Matrix,
    pub b_cs: Vector,
    pub w_xcr: Matrix,
    pub w_scr: Matrix,
    pub w_vcr: Matrix,
    pub b_cr: Vector,
    pub w_xdu: Matrix,
    pub w_vdu: Matrix,
    pub b_du: Vector,
}

impl VanillaLstmParams {
    pub fn zeros(d_x: usize, d_s: usize) -> Self {
        let wx = || Matrix::zeros(d_s, d_x);
        let ws = || Matrix::zeros(d_s, d_s);
        let b = || Vector::zeros(d_s);
        VanillaLstmParams {
            w_xcu: wx(),
            w_scu: ws(),
            w_vcu: ws(),
            b_cu: b(),
            w_xcs: wx(),
            w_scs: ws(),
            w_vcs: ws(),
            b_cs: b(),
            w_xcr: wx(),
            w_scr: ws(),
            w_vcr: ws(),
            b_cr: b(),
            w_xdu: wx(),
            w_vdu: ws(),
            b_du: b(),
        }
    }

    pub fn random(d_x: usize, d_s: usize, rng: &mut impl rand::Rng, range: f64) -> Self {
        let mut p = Self::zeros(d_x, d_s);
        p.randomize(rng, range);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_xcu.cols()
    }

    pub fn state_dim(&self) -> usize {
        self.w_xcu.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (dx, ds) = (self.input_dim(), self.state_dim());
        for t in self.tensors() {
            let want = match t.name.as_bytes()[0] {
                b'b' => format!("[{ds}]"),
                _ if t.name.starts_with("W_x") => format!("{ds}x{dx}"),
                _ => format!("{ds}x{ds}"),
            };
            if t.shape.to_string() != want {
                return Err(Error::mismatch("VanillaLstmParams", format!("{} {}", t.name, t.shape), want));
            }
        }
        Ok(())
    }

    pub fn forward_step(&self, x: &Vector, s_prev: &Vector, v_prev: &Vector) -> Result<StepCache> {
        self.forward_step_with(&GateOverrides::default(), x, s_prev, v_prev)
    }

    pub fn forward_step_with(&self, overrides: &GateOverrides, x: &Vector, s_prev: &Vector, v_prev: &Vector) -> Result<StepCache> {
        let acc_cu = accumulate(&self.w_xcu, x, Some((&self.w_scu, s_prev)), &self.w_vcu, v_prev, &self.b_cu)?;
        let acc_cs = accumulate(&self.w_xcs, x, Some((&self.w_scs, s_prev)), &self.w_vcs, v_prev, &self.b_cs)?;
        let acc_du = accumulate(&self.w_xdu, x, None, &self.w_vdu, v_prev, &self.b_du)?;

        let gate_cu = gate(&acc_cu, overrides.control_update.as_ref())?;
        let gate_cs = gate(&acc_cs, overrides.control_state.as_ref())?;
        let update = acc_du.map(gd);

        let mut state = gate_cs.hadamard(s_prev)?;
        state.add_assign(&gate_cu.hadamard(&update)?)?;

        let acc_cr = accumulate(&self.w_xcr, x, Some((&self.w_scr, &state)), &self.w_vcr, v_prev, &self.b_cr)?;
        let gate_cr = gate(&acc_cr, overrides.control_readout.as_ref())?;
        let readout = state.map(gd);
        let value = gate_cr.hadamard(&readout)?;

        Ok(StepCache {
            input: x.clone(),
            state_prev: s_prev.clone(),
            value_prev: v_prev.clone(),
            acc_cu,
            acc_cs,
            acc_cr,
            acc_du,
            gate_cu,
            gate_cs,
            gate_cr,
            update,
            state,
            readout,
            value,
            fixed: overrides.mask(),
        })
    }

    /// Unroll from `s[−1] = v[−1] = 0`.
    pub fn forward_segment(&self, xs: &[Vector]) -> Result<Vec<StepCache>> {
        let ds = self.state_dim();
        self.forward_segment_from(&GateOverrides::default(), xs, &Vector::zeros(ds), &Vector::zeros(ds))
    }

    pub fn forward_segment_from(
        &self,
        overrides: &GateOverrides,
        xs: &[Vector],
        s_init: &Vector,
        v_init: &Vector,
    ) -> Result<Vec<StepCache>> {
        if xs.is_empty() {
            return Err(Error::InvalidPlan("empty segment".into()));
        }
        let mut caches: Vec<StepCache> = Vec::with_capacity(xs.len());
        for x in xs {
            let (s_prev, v_prev) = match caches.last() {
                Some(c) => (&c.state, &c.value),
                None => (s_init, v_init),
            };
            let next = self.forward_step_with(overrides, x, s_prev, v_prev)?;
            caches.push(next);
        }
        Ok(caches)
    }
}

/// `W_x x + W_s s + W_v v + b`, left to right.
pub(crate) fn accumulate(
    w_x: &Matrix,
    x: &Vector,
    state_term: Option<(&Matrix, &Vector)>,
    w_v: &Matrix,
    v: &Vector,
    b: &Vector,
) -> Result<Vector> {
    let mut a = w_x.matvec(x)?;
    accumulate_recurrent(&mut a, state_term, w_v, v, b)?;
    Ok(a)
}

pub(crate) fn accumulate_recurrent(
    a: &mut Vector,
    state_term: Option<(&Matrix, &Vector)>,
    w_v: &Matrix,
    v: &Vector,
    b: &Vector,
) -> Result<()> {
    if let Some((w_s, s)) = state_term {
        a.add_assign(&w_s.matvec(s)?)?;
    }
    a.add_assign(&w_v.matvec(v)?)?;
    a.add_assign(b)
}

pub(crate) fn gate(acc: &Vector, forced: Option<&Vector>) -> Result<Vector> {
    match forced {
        Some(g) if g.len() != acc.len() => Err(Error::mismatch("gate override", g.shape(), acc.shape())),
        Some(g) => Ok(g.clone()),
        None => Ok(acc.map(gc)),
    }
}

impl Parameters for VanillaLstmParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            mref("W_xcu", &self.w_xcu),
            mref("W_scu", &self.w_scu),
            mref("W_vcu", &self.w_vcu),
            vref("b_cu", &self.b_cu),
            mref("W_xcs", &self.w_xcs),
            mref("W_scs", &self.w_scs),
            mref("W_vcs", &self.w_vcs),
            vref("b_cs", &self.b_cs),
            mref("W_xcr", &self.w_xcr),
            mref("W_scr", &self.w_scr),
            mref("W_vcr", &self.w_vcr),
            vref("b_cr", &self.b_cr),
            mref("W_xdu", &self.w_xdu),
            mref("W_vdu", &self.w_vdu),
            vref("b_du", &self.b_du),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        vec![
            mmut("W_xcu", &mut self.w_xcu),
            mmut("W_scu", &mut self.w_scu),
            mmut("W_vcu", &mut self.w_vcu),
            vmut("b_cu", &mut self.b_cu),
            mmut("W_xcs", &mut self.w_xcs),
            mmut("W_scs", &mut self.w_scs),
            mmut("W_vcs", &mut self.w_vcs),
            vmut("b_cs", &mut self.b_cs),
            mmut("W_xcr", &mut self.w_xcr),
            mmut("W_scr", &mut self.w_scr),
            mmut("W_vcr", &mut self.w_vcr),
            vmut("b_cr", &mut self.b_cr),
            mmut("W_xdu", &mut self.w_xdu),
            mmut("W_vdu", &mut self.w_vdu),
            vmut("b_du", &mut self.b_du),
        ]
    }
}

/// Forces gates to constant vectors. Used by diagnostics and tests to put
/// the cell into exact operating modes (e.g. the constant error carousel)
/// that finite logistic arguments cannot reach. A forced gate has zero
/// derivative with respect to its accumulation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GateOverrides {
    pub control_update: Option<Vector>,
    pub control_state: Option<Vector>,
    pub control_readout: Option<Vector>,
}

impl GateOverrides {
    /// `g_cs = 1`, `g_cu = g_cr = 0`.
    pub fn constant_error_carousel(d_s: usize) -> Self {
        GateOverrides {
            control_update: Some(Vector::zeros(d_s)),
            control_state: Some(Vector::filled(d_s, 1.0)),
            control_readout: Some(Vector::zeros(d_s)),
        }
    }

    pub fn mask(&self) -> GateMask {
        GateMask {
            control_update: self.control_update.is_some(),
            control_state: self.control_state.is_some(),
            control_readout: self.control_readout.is_some(),
            control_input: false,
        }
    }
}

/// Which gates were forced during the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GateMask {
    pub control_update: bool,
    pub control_state: bool,
    pub control_readout: bool,
    pub control_input: bool,
}

/// Every signal of one Vanilla LSTM step, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub input: Vector,
    pub state_prev: Vector,
    pub value_prev: Vector,
    pub acc_cu: Vector,
    pub acc_cs: Vector,
    pub acc_cr: Vector,
    pub acc_du: Vector,
    pub gate_cu: Vector,
    pub gate_cs: Vector,
    pub gate_cr: Vector,
    pub update: Vector,
    pub state: Vector,
    pub readout: Vector,
    pub value: Vector,
    pub fixed: GateMask,
}

/// A Vanilla LSTM together with optional gate overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaLstm {
    pub params: VanillaLstmParams,
    pub overrides: GateOverrides,
}

impl VanillaLstm {
    pub fn new(params: VanillaLstmParams) -> Result<Self> {
        params.validate()?;
        Ok(VanillaLstm {
            params,
            overrides: GateOverrides::default(),
        })
    }

    pub fn with_overrides(mut self, overrides: GateOverrides) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn forward_segment(&self, xs: &[Vector]) -> Result<Vec<StepCache>> {
        let ds = self.params.state_dim();
        self.params
            .forward_segment_from(&self.overrides, xs, &Vector::zeros(ds), &Vector::zeros(ds))
    }
}

impl Unroll for VanillaLstm {
    type Trace = Vec<StepCache>;
    fn unroll(&self, inputs: &[Vector]) -> Result<Self::Trace> {
        self.forward_segment(inputs)
    }
}

/// Per-feature mean and sample standard deviation of a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizationStats {
    pub mean: Vector,
    pub std_dev: Vector,
}

impl StandardizationStats {
    /// μ = (1/N) Σ x₀ and the sample auto-covariance with 1/(N−1). Only the
    /// diagonal of the covariance enters the transform.
    pub fn fit(samples: &[Vector]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let d = samples[0].len();
        let mut mean = Vector::zeros(d);
        for x in samples {
            mean.add_assign(x)?;
        }
        let mean = mean.scale(1.0 / n as f64);
        let mut cov = Matrix::zeros(d, d);
        for x in samples {
            let c = x.sub(&mean)?;
            cov.add_outer(&c, &c)?;
        }
        let cov = cov.scale(1.0 / (n - 1) as f64);
        let variance = cov.diagonal();
        if let Some(column) = variance.iter().position(|&v| v.is_nan() || v <= 0.0) {
            return Err(Error::ConstantFeature { column });
        }
        Ok(StandardizationStats {
            mean,
            std_dev: variance.map(f64::sqrt),
        })
    }

    /// `x = diag(√V_ii)⁻¹ (x₀ − μ)`.
    pub fn apply(&self, samples: &[Vector]) -> Result<Vec<Vector>> {
        samples
            .iter()
            .map(|x| {
                let c = x.sub(&self.mean)?;
                Ok(Vector::from_fn(c.len(), |i| c[i] / self.std_dev[i]))
            })
            .collect()
    }
}

/// Fit standardization statistics on training data.
pub fn fit_standardization(samples: &[Vector]) -> Result<StandardizationStats> {
    StandardizationStats::fit(samples)
}

/// Apply previously fitted statistics, e.g. to held-out data.
pub fn standardize(stats: &StandardizationStats, samples: &[Vector]) -> Result<Vec<Vector>> {
    stats.apply(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn zero_parameters() {
        let p = VanillaLstmParams::zeros(2, 3);
        let s_prev = v(&[0.4, -1.0, 2.0]);
        let c = p.forward_step(&v(&[1.0, 2.0]), &s_prev, &v(&[0.1, 0.2, 0.3])).unwrap();
        for g in [&c.gate_cu, &c.gate_cs, &c.gate_cr] {
            assert!(g.iter().all(|&z| z == 0.5));
        }
        assert_eq!(c.update, Vector::zeros(3));
        assert_eq!(c.state, s_prev.scale(0.5));
        assert_eq!(c.readout, c.state.map(gd));
        assert_eq!(c.value, c.readout.scale(0.5));
    }

    #[test]
    fn carousel_holds_state_and_silences_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = VanillaLstmParams::random(2, 3, &mut rng, 0.5);
        let s_prev = v(&[0.3, -0.2, 0.9]);
        let c = p
            .forward_step_with(
                &GateOverrides::constant_error_carousel(3),
                &v(&[0.5, -0.5]),
                &s_prev,
                &v(&[0.1, 0.0, -0.1]),
            )
            .unwrap();
        assert_eq!(c.state, s_prev);
        assert!(c.value.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn readout_gate_sees_current_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = VanillaLstmParams::random(2, 3, &mut rng, 0.8);
        let x = v(&[0.2, -0.4]);
        let vp = v(&[0.1, 0.0, 0.2]);
        let h = 1e-6;
        let base = p.forward_step(&x, &v(&[0.0, 0.0, 0.0]), &vp).unwrap();
        let bumped = p.forward_step(&x, &v(&[h, 0.0, 0.0]), &vp).unwrap();
        let sens = (bumped.acc_cr[0] - base.acc_cr[0]) / h;
        // Only through s[n] = g_cs ⊙ s[n−1] + …, since W_scr enters a_cr and
        // a_cr has no direct s[n−1] term.
        assert!(sens.abs() > 1e-3);
        let mut detached = p.clone();
        detached.w_scr = Matrix::zeros(3, 3);
        let b0 = detached.forward_step(&x, &v(&[0.0, 0.0, 0.0]), &vp).unwrap();
        let b1 = detached.forward_step(&x, &v(&[h, 0.0, 0.0]), &vp).unwrap();
        assert_eq!(b0.acc_cr, b1.acc_cr);
    }

    #[test]
    fn segment_of_one_equals_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = VanillaLstmParams::random(2, 3, &mut rng, 0.5);
        let x = v(&[0.7, -0.1]);
        let one = p.forward_segment(std::slice::from_ref(&x)).unwrap();
        assert_eq!(one[0], p.forward_step(&x, &Vector::zeros(3), &Vector::zeros(3)).unwrap());
    }

    #[test]
    fn zero_params_closed_form_decay() {
        let p = VanillaLstmParams::zeros(1, 2);
        let s_init = v(&[0.8, -0.6]);
        let xs = vec![Vector::zeros(1); 12];
        let trace = p
            .forward_segment_from(&GateOverrides::default(), &xs, &s_init, &Vector::zeros(2))
            .unwrap();
        for (n, c) in trace.iter().enumerate() {
            for i in 0..2 {
                let want = 0.5 * gd(0.5f64.powi(n as i32 + 1) * s_init[i]);
                assert!((c.value[i] - want).abs() < 1e-16, "n={n}");
            }
        }
    }

    #[test]
    fn standardization_small_example() {
        let xs = vec![v(&[1.0]), v(&[2.0]), v(&[3.0])];
        let stats = StandardizationStats::fit(&xs).unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert_eq!(stats.std_dev[0], 1.0);
        let out = stats.apply(&xs).unwrap();
        assert_eq!(out, vec![v(&[-1.0]), v(&[0.0]), v(&[1.0])]);
    }

    #[test]
    fn standardization_errors() {
        let c = vec![v(&[4.0, 1.0]), v(&[4.0, 2.0]), v(&[4.0, 3.0])];
        assert!(matches!(StandardizationStats::fit(&c), Err(Error::ConstantFeature { column: 0 })));
        assert!(matches!(
            StandardizationStats::fit(&[v(&[1.0])]),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn validate_catches_bad_shapes() {
        let mut p = VanillaLstmParams::zeros(2, 3);
        assert!(p.validate().is_ok());
        p.w_vdu = Matrix::zeros(3, 2);
        assert!(p.validate().is_err());
    }
}
