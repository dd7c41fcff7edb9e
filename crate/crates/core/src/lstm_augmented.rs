//! Augmented LSTM cell: non-causal input context windows, a control-input
//! gate and a recurrent projection layer.
//!
//! Each `W_x· x[n]` term of the Vanilla cell becomes a length-`L` window
//! `ξ[n] = Σ_{l=0}^{L−1} W[l] x[n+l]` over the current and future inputs of
//! the segment; inputs past the segment end are zero. The control-input
//! gate `g_cx` throttles the data-update input, and the value is a trained
//! projection `v = W_qdr q` of the qualifier `q = g_cr ⊙ G_d(s)`.
//!
//! `g_cx` lives in `ℝ^{d_x}` while `ξ_du` lives in `ℝ^{d_s}`, so the literal
//! product `g_cx ⊙ ξ_du` only makes sense when `d_x = d_s`. [`InputGateMode`]
//! selects between that literal form and gating the raw window inputs.

use std::fmt;

use crate::error::{Error, Result};
use crate::lstm_vanilla::{accumulate_recurrent, gate, GateMask, GateOverrides, StepCache};
use crate::numerics::{gd, Matrix, Vector};
use crate::params::{mmut, mref, vmut, vref, Parameters, TensorMut, TensorRef};
use crate::segmentation::Unroll;

/// `L` matrix taps applied to `x[n], …, x[n+L−1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextFilter {
    taps: Vec<Matrix>,
}

impl ContextFilter {
    pub fn new(taps: Vec<Matrix>) -> Result<Self> {
        let first = taps.first().ok_or(Error::Empty)?;
        if let Some(bad) = taps.iter().find(|t| t.rows() != first.rows() || t.cols() != first.cols()) {
            return Err(Error::mismatch("ContextFilter taps", first.shape(), bad.shape()));
        }
        Ok(ContextFilter { taps })
    }

    pub fn zeros(len: usize, rows: usize, cols: usize) -> Self {
        assert!(len > 0, "a context filter needs at least one tap");
        ContextFilter {
            taps: vec![Matrix::zeros(rows, cols); len],
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn taps(&self) -> &[Matrix] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [Matrix] {
        &mut self.taps
    }

    pub fn rows(&self) -> usize {
        self.taps[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.taps[0].cols()
    }

    /// `Σ_l W[l] window[l]` where `window` already holds the (padded) inputs.
    pub fn apply(&self, window: &[Vector]) -> Result<Vector> {
        if window.len() != self.taps.len() {
            return Err(Error::mismatch("ContextFilter::apply", self.taps.len(), window.len()));
        }
        let mut acc = self.taps[0].matvec(&window[0])?;
        for (w, x) in self.taps.iter().zip(window).skip(1) {
            acc.add_assign(&w.matvec(x)?)?;
        }
        Ok(acc)
    }
}

/// `Σ_{l=0}^{L−1} W[l] x[n+l]` with `x[n+l] = 0` for `n + l ≥ xs.len()`.
pub fn context_conv(filter: &ContextFilter, xs: &[Vector], n: usize) -> Result<Vector> {
    let window = context_window(xs, n, filter.len())?;
    filter.apply(&window)
}

/// `[x[n], …, x[n+L−1]]`, zero padded past the end of `xs`.
pub fn context_window(xs: &[Vector], n: usize, len: usize) -> Result<Vec<Vector>> {
    if n >= xs.len() {
        return Err(Error::IndexOutOfRange {
            what: "context window start",
            index: n,
            len: xs.len(),
        });
    }
    let d_x = xs[n].len();
    Ok((n..n + len)
        .map(|i| xs.get(i).cloned().unwrap_or_else(|| Vector::zeros(d_x)))
        .collect())
}

/// How the control-input gate acts on the data-update input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InputGateMode {
    /// `a_du = g_cx ⊙ ξ_du + …`; requires `d_x = d_s`.
    #[default]
    Elementwise,
    /// `a_du = Σ_l W_xdu[l] (g_cx ⊙ x[n+l]) + …`; any `d_x`.
    WindowInputs,
}

impl fmt::Display for InputGateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputGateMode::Elementwise => "elementwise",
            InputGateMode::WindowInputs => "window-inputs",
        })
    }
}

impl std::str::FromStr for InputGateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elementwise" => Ok(InputGateMode::Elementwise),
            "window-inputs" => Ok(InputGateMode::WindowInputs),
            other => Err(Error::InvalidConfig(format!(
                "unknown input gate mode `{other}` (expected `elementwise` or `window-inputs`)"
            ))),
        }
    }
}

/// Dimensions of an Augmented LSTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentedDims {
    pub d_x: usize,
    pub d_s: usize,
    pub d_v: usize,
    pub context: usize,
    pub input_gate: InputGateMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedLstmParams {
    pub f_xcu: ContextFilter,
    pub w_scu: Matrix,
    pub w_vcu: Matrix,
    pub b_cu: Vector,
    pub f_xcs: ContextFilter,
    pub w_scs: Matrix,
    pub w_vcs: Matrix,
    pub b_cs: Vector,
    pub f_xcr: ContextFilter,
    pub w_scr: Matrix,
    pub w_vcr: Matrix,
    pub b_cr: Vector,
    pub f_xcx: ContextFilter,
    pub w_scx: Matrix,
    pub w_vcx: Matrix,
    pub b_cx: Vector,
    pub f_xdu: ContextFilter,
    pub w_vdu: Matrix,
    pub b_du: Vector,
    pub w_qdr: Matrix,
    pub input_gate: InputGateMode,
}

impl AugmentedLstmParams {
    /// All-zero parameters. Panics on invalid dimensions; use
    /// [`AugmentedLstmParams::validate`] for fallible checking.
    pub fn zeros(dims: AugmentedDims) -> Self {
        let AugmentedDims {
            d_x,
            d_s,
            d_v,
            context,
            input_gate,
        } = dims;
        let fs = || ContextFilter::zeros(context, d_s, d_x);
        AugmentedLstmParams {
            f_xcu: fs(),
            w_scu: Matrix::zeros(d_s, d_s),
            w_vcu: Matrix::zeros(d_s, d_v),
            b_cu: Vector::zeros(d_s),
            f_xcs: fs(),
            w_scs: Matrix::zeros(d_s, d_s),
            w_vcs: Matrix::zeros(d_s, d_v),
            b_cs: Vector::zeros(d_s),
            f_xcr: fs(),
            w_scr: Matrix::zeros(d_s, d_s),
            w_vcr: Matrix::zeros(d_s, d_v),
            b_cr: Vector::zeros(d_s),
            f_xcx: ContextFilter::zeros(context, d_x, d_x),
            w_scx: Matrix::zeros(d_x, d_s),
            w_vcx: Matrix::zeros(d_x, d_v),
            b_cx: Vector::zeros(d_x),
            f_xdu: fs(),
            w_vdu: Matrix::zeros(d_s, d_v),
            b_du: Vector::zeros(d_s),
            w_qdr: Matrix::zeros(d_v, d_s),
            input_gate,
        }
    }

    pub fn random(dims: AugmentedDims, rng: &mut impl rand::Rng, range: f64) -> Result<Self> {
        let mut p = Self::zeros(dims);
        p.validate()?;
        p.randomize(rng, range);
        Ok(p)
    }

    /// The reduction configuration: `L = 1`, taps copied from the Vanilla
    /// input matrices, `W_qdr = I`, and every input-gate parameter zero.
    /// Together with [`AugOverrides::reduction`] the cell then computes
    /// exactly what the Vanilla cell computes.
    pub fn from_vanilla(p: &crate::lstm_vanilla::VanillaLstmParams, input_gate: InputGateMode) -> Self {
        let (d_x, d_s) = (p.input_dim(), p.state_dim());
        let one = |m: &Matrix| ContextFilter { taps: vec![m.clone()] };
        AugmentedLstmParams {
            f_xcu: one(&p.w_xcu),
            w_scu: p.w_scu.clone(),
            w_vcu: p.w_vcu.clone(),
            b_cu: p.b_cu.clone(),
            f_xcs: one(&p.w_xcs),
            w_scs: p.w_scs.clone(),
            w_vcs: p.w_vcs.clone(),
            b_cs: p.b_cs.clone(),
            f_xcr: one(&p.w_xcr),
            w_scr: p.w_scr.clone(),
            w_vcr: p.w_vcr.clone(),
            b_cr: p.b_cr.clone(),
            f_xcx: ContextFilter::zeros(1, d_x, d_x),
            w_scx: Matrix::zeros(d_x, d_s),
            w_vcx: Matrix::zeros(d_x, d_s),
            b_cx: Vector::zeros(d_x),
            f_xdu: one(&p.w_xdu),
            w_vdu: p.w_vdu.clone(),
            b_du: p.b_du.clone(),
            w_qdr: Matrix::identity(d_s),
            input_gate,
        }
    }

    pub fn dims(&self) -> AugmentedDims {
        AugmentedDims {
            d_x: self.f_xcu.cols(),
            d_s: self.w_scu.rows(),
            d_v: self.w_qdr.rows(),
            context: self.f_xcu.len(),
            input_gate: self.input_gate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let AugmentedDims {
            d_x,
            d_s,
            d_v,
            context,
            input_gate,
        } = self.dims();
        if d_v > d_s {
            return Err(Error::InvalidConfig(format!(
                "projection must not increase dimension: d_v = {d_v} > d_s = {d_s}"
            )));
        }
        if input_gate == InputGateMode::Elementwise && d_x != d_s {
            return Err(Error::InvalidConfig(format!(
                "elementwise input gate needs d_x = d_s (got d_x = {d_x}, d_s = {d_s}); use window-inputs gating"
            )));
        }
        for f in [&self.f_xcu, &self.f_xcs, &self.f_xcr, &self.f_xcx, &self.f_xdu] {
            if f.len() != context {
                return Err(Error::mismatch("context length", context, f.len()));
            }
        }
        for t in self.tensors() {
            let rows_cols = |r: usize, c: usize| format!("{r}x{c}");
            let want = match t.name.as_str() {
                n if n.starts_with("W_xcx") => rows_cols(d_x, d_x),
                n if n.starts_with("W_x") => rows_cols(d_s, d_x),
                "W_scx" => rows_cols(d_x, d_s),
                "W_vcx" => rows_cols(d_x, d_v),
                "b_cx" => format!("[{d_x}]"),
                "W_qdr" => rows_cols(d_v, d_s),
                n if n.starts_with("W_s") => rows_cols(d_s, d_s),
                n if n.starts_with("W_v") => rows_cols(d_s, d_v),
                _ => format!("[{d_s}]"),
            };
            if t.shape.to_string() != want {
                return Err(Error::mismatch("AugmentedLstmParams", format!("{} {}", t.name, t.shape), want));
            }
        }
        Ok(())
    }

    pub fn forward_step(
        &self,
        overrides: &AugOverrides,
        xs: &[Vector],
        n: usize,
        s_prev: &Vector,
        v_prev: &Vector,
    ) -> Result<AugStepCache> {
        let window = context_window(xs, n, self.f_xcu.len())?;
        self.forward_window(overrides, window, s_prev, v_prev)
    }

    fn forward_window(&self, overrides: &AugOverrides, window: Vec<Vector>, s_prev: &Vector, v_prev: &Vector) -> Result<AugStepCache> {
        let xi_cu = self.f_xcu.apply(&window)?;
        let xi_cs = self.f_xcs.apply(&window)?;
        let xi_cr = self.f_xcr.apply(&window)?;
        let xi_cx = self.f_xcx.apply(&window)?;

        let mut acc_cu = xi_cu.clone();
        accumulate_recurrent(&mut acc_cu, Some((&self.w_scu, s_prev)), &self.w_vcu, v_prev, &self.b_cu)?;
        let mut acc_cs = xi_cs.clone();
        accumulate_recurrent(&mut acc_cs, Some((&self.w_scs, s_prev)), &self.w_vcs, v_prev, &self.b_cs)?;
        let mut acc_cx = xi_cx.clone();
        accumulate_recurrent(&mut acc_cx, Some((&self.w_scx, s_prev)), &self.w_vcx, v_prev, &self.b_cx)?;

        let gate_cu = gate(&acc_cu, overrides.gates.control_update.as_ref())?;
        let gate_cs = gate(&acc_cs, overrides.gates.control_state.as_ref())?;
        let gate_cx = gate(&acc_cx, overrides.control_input.as_ref())?;

        let (xi_du, mut acc_du) = match self.input_gate {
            InputGateMode::Elementwise => {
                let xi = self.f_xdu.apply(&window)?;
                let gated = gate_cx.hadamard(&xi)?;
                (xi, gated)
            }
            InputGateMode::WindowInputs => {
                let gated: Vec<Vector> = window.iter().map(|x| gate_cx.hadamard(x)).collect::<Result<_>>()?;
                let xi = self.f_xdu.apply(&gated)?;
                (xi.clone(), xi)
            }
        };
        accumulate_recurrent(&mut acc_du, None, &self.w_vdu, v_prev, &self.b_du)?;
        let update = acc_du.map(gd);

        let mut state = gate_cs.hadamard(s_prev)?;
        state.add_assign(&gate_cu.hadamard(&update)?)?;

        let mut acc_cr = xi_cr.clone();
        accumulate_recurrent(&mut acc_cr, Some((&self.w_scr, &state)), &self.w_vcr, v_prev, &self.b_cr)?;
        let gate_cr = gate(&acc_cr, overrides.gates.control_readout.as_ref())?;
        let readout = state.map(gd);
        let qualifier = gate_cr.hadamard(&readout)?;
        let value = self.w_qdr.matvec(&qualifier)?;

        let mut fixed = overrides.gates.mask();
        fixed.control_input = overrides.control_input.is_some();
        Ok(AugStepCache {
            core: StepCache {
                input: window[0].clone(),
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
                fixed,
            },
            window,
            xi_cu,
            xi_cs,
            xi_cr,
            xi_cx,
            xi_du,
            acc_cx,
            gate_cx,
            qualifier,
        })
    }

    pub fn forward_segment(&self, xs: &[Vector]) -> Result<Vec<AugStepCache>> {
        let d = self.dims();
        self.forward_segment_from(&AugOverrides::default(), xs, &Vector::zeros(d.d_s), &Vector::zeros(d.d_v))
    }

    pub fn forward_segment_from(
        &self,
        overrides: &AugOverrides,
        xs: &[Vector],
        s_init: &Vector,
        v_init: &Vector,
    ) -> Result<Vec<AugStepCache>> {
        if xs.is_empty() {
            return Err(Error::InvalidPlan("empty segment".into()));
        }
        let mut caches: Vec<AugStepCache> = Vec::with_capacity(xs.len());
        for n in 0..xs.len() {
            let (s_prev, v_prev) = match caches.last() {
                Some(c) => (&c.core.state, &c.core.value),
                None => (s_init, v_init),
            };
            let next = self.forward_step(overrides, xs, n, s_prev, v_prev)?;
            caches.push(next);
        }
        Ok(caches)
    }
}

fn filter_refs<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, f: &'a ContextFilter) {
    for (l, w) in f.taps.iter().enumerate() {
        out.push(mref(format!("{name}[{l}]"), w));
    }
}

fn filter_muts<'a>(out: &mut Vec<TensorMut<'a>>, name: &str, f: &'a mut ContextFilter) {
    for (l, w) in f.taps.iter_mut().enumerate() {
        out.push(mmut(format!("{name}[{l}]"), w));
    }
}

impl Parameters for AugmentedLstmParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        filter_refs(&mut out, "W_xcu", &self.f_xcu);
        out.extend([mref("W_scu", &self.w_scu), mref("W_vcu", &self.w_vcu), vref("b_cu", &self.b_cu)]);
        filter_refs(&mut out, "W_xcs", &self.f_xcs);
        out.extend([mref("W_scs", &self.w_scs), mref("W_vcs", &self.w_vcs), vref("b_cs", &self.b_cs)]);
        filter_refs(&mut out, "W_xcr", &self.f_xcr);
        out.extend([mref("W_scr", &self.w_scr), mref("W_vcr", &self.w_vcr), vref("b_cr", &self.b_cr)]);
        filter_refs(&mut out, "W_xcx", &self.f_xcx);
        out.extend([mref("W_scx", &self.w_scx), mref("W_vcx", &self.w_vcx), vref("b_cx", &self.b_cx)]);
        filter_refs(&mut out, "W_xdu", &self.f_xdu);
        out.extend([mref("W_vdu", &self.w_vdu), vref("b_du", &self.b_du), mref("W_qdr", &self.w_qdr)]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        filter_muts(&mut out, "W_xcu", &mut self.f_xcu);
        out.extend([
            mmut("W_scu", &mut self.w_scu),
            mmut("W_vcu", &mut self.w_vcu),
            vmut("b_cu", &mut self.b_cu),
        ]);
        filter_muts(&mut out, "W_xcs", &mut self.f_xcs);
        out.extend([
            mmut("W_scs", &mut self.w_scs),
            mmut("W_vcs", &mut self.w_vcs),
            vmut("b_cs", &mut self.b_cs),
        ]);
        filter_muts(&mut out, "W_xcr", &mut self.f_xcr);
        out.extend([
            mmut("W_scr", &mut self.w_scr),
            mmut("W_vcr", &mut self.w_vcr),
            vmut("b_cr", &mut self.b_cr),
        ]);
        filter_muts(&mut out, "W_xcx", &mut self.f_xcx);
        out.extend([
            mmut("W_scx", &mut self.w_scx),
            mmut("W_vcx", &mut self.w_vcx),
            vmut("b_cx", &mut self.b_cx),
        ]);
        filter_muts(&mut out, "W_xdu", &mut self.f_xdu);
        out.extend([
            mmut("W_vdu", &mut self.w_vdu),
            vmut("b_du", &mut self.b_du),
            mmut("W_qdr", &mut self.w_qdr),
        ]);
        out
    }
}

/// Gate overrides for the augmented cell, including the control-input gate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugOverrides {
    pub gates: GateOverrides,
    pub control_input: Option<Vector>,
}

impl AugOverrides {
    /// Hold the control-input gate open (`g_cx = 1`).
    pub fn reduction(d_x: usize) -> Self {
        AugOverrides {
            gates: GateOverrides::default(),
            control_input: Some(Vector::filled(d_x, 1.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugStepCache {
    /// The signals shared with the Vanilla cell; `core.value` is `W_qdr q`.
    pub core: StepCache,
    /// `x[n..n+L−1]`, zero padded.
    pub window: Vec<Vector>,
    pub xi_cu: Vector,
    pub xi_cs: Vector,
    pub xi_cr: Vector,
    pub xi_cx: Vector,
    /// The ungated data-update window sum `Σ_l W_xdu[l] x[n+l]` in elementwise
    /// mode; the gated sum in window-inputs mode.
    pub xi_du: Vector,
    pub acc_cx: Vector,
    pub gate_cx: Vector,
    pub qualifier: Vector,
}

impl AugStepCache {
    pub fn fixed(&self) -> GateMask {
        self.core.fixed
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedLstm {
    pub params: AugmentedLstmParams,
    pub overrides: AugOverrides,
}

impl AugmentedLstm {
    pub fn new(params: AugmentedLstmParams) -> Result<Self> {
        params.validate()?;
        Ok(AugmentedLstm {
            params,
            overrides: AugOverrides::default(),
        })
    }

    pub fn with_overrides(mut self, overrides: AugOverrides) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn forward_segment(&self, xs: &[Vector]) -> Result<Vec<AugStepCache>> {
        let d = self.params.dims();
        self.params
            .forward_segment_from(&self.overrides, xs, &Vector::zeros(d.d_s), &Vector::zeros(d.d_v))
    }
}

impl Unroll for AugmentedLstm {
    type Trace = Vec<AugStepCache>;
    fn unroll(&self, inputs: &[Vector]) -> Result<Self::Trace> {
        self.forward_segment(inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm_vanilla::VanillaLstmParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(d_x: usize, d_s: usize, d_v: usize, context: usize, input_gate: InputGateMode) -> AugmentedDims {
        AugmentedDims {
            d_x,
            d_s,
            d_v,
            context,
            input_gate,
        }
    }

    fn inputs(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<Vector> {
        use rand::Rng;
        (0..k).map(|_| Vector::from_fn(d, |_| rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn conv_boundary() {
        let taps = vec![Matrix::identity(2), Matrix::identity(2).scale(10.0)];
        let f = ContextFilter::new(taps).unwrap();
        let xs: Vec<Vector> = (0..3).map(|i| Vector::filled(2, i as f64 + 1.0)).collect();
        assert_eq!(context_conv(&f, &xs, 0).unwrap(), Vector::filled(2, 21.0));
        assert_eq!(context_conv(&f, &xs, 2).unwrap(), Vector::filled(2, 3.0));
        assert!(context_conv(&f, &xs, 3).is_err());
    }

    #[test]
    fn single_tap_is_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Matrix::from_fn(3, 2, |i, j| (i as f64) - 0.5 * j as f64);
        let f = ContextFilter::new(vec![w.clone()]).unwrap();
        let xs = inputs(&mut rng, 4, 2);
        for n in 0..4 {
            assert_eq!(context_conv(&f, &xs, n).unwrap(), w.matvec(&xs[n]).unwrap());
        }
    }

    #[test]
    fn zero_parameters() {
        let p = AugmentedLstmParams::zeros(dims(3, 3, 2, 2, InputGateMode::Elementwise));
        let s_prev = Vector::new(vec![0.2, -0.4, 1.0]).unwrap();
        let xs = vec![Vector::filled(3, 1.0); 2];
        let c = p
            .forward_step(&AugOverrides::default(), &xs, 0, &s_prev, &Vector::zeros(2))
            .unwrap();
        assert!(c.gate_cx.iter().all(|&g| g == 0.5));
        assert_eq!(c.xi_du, Vector::zeros(3));
        assert_eq!(c.core.state, s_prev.scale(0.5));
        assert_eq!(c.core.value, Vector::zeros(2));
    }

    #[test]
    fn validation() {
        let mut p = AugmentedLstmParams::zeros(dims(2, 3, 3, 1, InputGateMode::WindowInputs));
        assert!(p.validate().is_ok());
        p.input_gate = InputGateMode::Elementwise;
        assert!(matches!(p.validate(), Err(Error::InvalidConfig(_))));
        let wide = AugmentedLstmParams::zeros(dims(2, 2, 3, 1, InputGateMode::WindowInputs));
        assert!(wide.validate().is_err());
    }

    #[test]
    fn reduction_matches_vanilla_bitwise() {
        for mode in [InputGateMode::Elementwise, InputGateMode::WindowInputs] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let v = VanillaLstmParams::random(3, 3, &mut rng, 0.7);
            let mut a = AugmentedLstmParams::from_vanilla(&v, mode);
            a.w_scx = Matrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.1);
            let xs = inputs(&mut rng, 6, 3);
            let vt = v.forward_segment(&xs).unwrap();
            let at = a
                .forward_segment_from(&AugOverrides::reduction(3), &xs, &Vector::zeros(3), &Vector::zeros(3))
                .unwrap();
            for (x, y) in vt.iter().zip(&at) {
                let mut core = y.core.clone();
                core.fixed = x.fixed;
                assert_eq!(&core, x);
            }
        }
    }

    #[test]
    fn locality_of_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = AugmentedLstmParams::random(dims(2, 3, 2, 2, InputGateMode::WindowInputs), &mut rng, 0.5).unwrap();
        let xs = inputs(&mut rng, 5, 2);
        let base = p.forward_segment(&xs).unwrap();
        let mut next = xs.clone();
        next[2][0] += 0.1;
        let moved = p.forward_segment(&next).unwrap();
        // x[2] is in the window of steps 1 and 2 only (plus later steps via recurrence).
        assert_eq!(base[0], moved[0]);
        assert_ne!(base[1].core.value, moved[1].core.value);
    }
}
