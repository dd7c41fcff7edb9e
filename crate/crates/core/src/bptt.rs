//! Back propagation through time for the standard RNN, the Vanilla LSTM and
//! the Augmented LSTM, plus a central-difference gradient checker.
//!
//! Every pullback through a weight matrix uses its transpose. The carries
//! `f_χ[n+1]` and `f_ψ[n+1]` collect what step `n+1` sends back to the
//! value and state signals of step `n`; both are zero past the last step.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lstm_augmented::{AugStepCache, AugmentedLstm, AugmentedLstmParams, InputGateMode};
use crate::lstm_vanilla::{StepCache, VanillaLstm, VanillaLstmParams};
use crate::numerics::{gc_prime, gd_prime, Matrix, Vector};
use crate::params::Parameters;
use crate::reference::{self, DoubleDouble, Layout, Real};
use crate::rnn_cells::{RnnTrace, StandardRnnParams};
use crate::training::LossHead;

/// `χ[n] = ∂E/∂v[n]` (for the RNN, `∂E/∂r[n]`) and `ψ[n] = ∂E/∂s[n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BorderGradients {
    pub chi: Vec<Vector>,
    pub psi: Vec<Vector>,
}

/// Total parameter gradient, shaped like the parameters, plus the border
/// gradients of the segment it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle<P> {
    pub params: P,
    pub border: BorderGradients,
}

/// External cotangents fed into a backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Cotangents {
    /// `(∂y/∂v)ᵀ ∂E/∂y` per step, from the loss head.
    pub value: Vec<Vector>,
    /// Optional direct `∂E/∂s[n]` per step, for losses that read the state.
    pub state: Option<Vec<Vector>>,
}

impl Cotangents {
    pub fn from_value(value: Vec<Vector>) -> Self {
        Cotangents { value, state: None }
    }

    /// Only `∂E/∂s[K−1] = w`; every other cotangent is zero.
    pub fn terminal_state(steps: usize, d_value: usize, w: Vector) -> Self {
        let mut state = vec![Vector::zeros(w.len()); steps];
        state[steps - 1] = w;
        Cotangents {
            value: vec![Vector::zeros(d_value); steps],
            state: Some(state),
        }
    }

    fn check(&self, steps: usize) -> Result<()> {
        if self.value.len() != steps {
            return Err(Error::mismatch("cotangents vs trace length", self.value.len(), steps));
        }
        if let Some(s) = &self.state {
            if s.len() != steps {
                return Err(Error::mismatch("state cotangents vs trace length", s.len(), steps));
            }
        }
        Ok(())
    }

    fn state_at(&self, n: usize) -> Option<&Vector> {
        self.state.as_ref().map(|s| &s[n])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackwardOptions {
    /// Clamp accumulation derivatives to [−1, 1] as soon as they are formed.
    pub clip: bool,
}

/// Elementwise clamp to [−1, 1].
pub fn clip_accumulation_derivatives(alpha: &Vector) -> Vector {
    alpha.map(|z| z.clamp(-1.0, 1.0))
}

fn maybe_clip(v: Vector, opts: BackwardOptions) -> Vector {
    if opts.clip {
        clip_accumulation_derivatives(&v)
    } else {
        v
    }
}

/// `G_c'(a)` or, for a forced gate, zero.
fn gate_slope(acc: &Vector, fixed: bool) -> Vector {
    if fixed {
        Vector::zeros(acc.len())
    } else {
        acc.map(gc_prime)
    }
}

fn mul3(a: &Vector, b: &Vector, c: &Vector) -> Result<Vector> {
    a.hadamard(b)?.hadamard(c)
}

/// `Σ_i W_iᵀ α_i`, in the given order.
fn pullback(terms: &[(&Matrix, &Vector)]) -> Result<Vector> {
    let (w0, a0) = terms[0];
    let mut out = w0.matvec_t(a0)?;
    for (w, a) in &terms[1..] {
        out.add_assign(&w.matvec_t(a)?)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------- RNN

pub fn rnn_backward(p: &StandardRnnParams, trace: &RnnTrace, dedr: &[Vector]) -> Result<GradientBundle<StandardRnnParams>> {
    rnn_backward_with(p, trace, &Cotangents::from_value(dedr.to_vec()), BackwardOptions::default())
}

/// `χ[n] = ∂E/∂r[n] + W_rᵀ ψ[n+1]`, `ψ[n] = χ[n] ⊙ G_d'(s[n])`, `ψ[K] = 0`.
pub fn rnn_backward_with(
    p: &StandardRnnParams,
    trace: &RnnTrace,
    cot: &Cotangents,
    opts: BackwardOptions,
) -> Result<GradientBundle<StandardRnnParams>> {
    let k = trace.len();
    cot.check(k)?;
    let mut grads = p.zeros_like();
    let mut chi = vec![Vector::zeros(p.state_dim()); k];
    let mut psi = vec![Vector::zeros(p.state_dim()); k];
    for n in (0..k).rev() {
        let mut c = cot.value[n].clone();
        if n + 1 < k {
            c.add_assign(&p.w_r.matvec_t(&psi[n + 1])?)?;
        }
        let mut y = c.hadamard(&trace.states[n].map(gd_prime))?;
        if let Some(extra) = cot.state_at(n) {
            y.add_assign(extra)?;
        }
        let y = maybe_clip(y, opts);
        let r_prev = if n == 0 { &trace.initial_readout } else { &trace.readouts[n - 1] };
        grads.w_r.add_outer(&y, r_prev)?;
        grads.w_x.add_outer(&y, &trace.inputs[n])?;
        grads.theta_s.add_assign(&y)?;
        chi[n] = c;
        psi[n] = y;
    }
    Ok(GradientBundle {
        params: grads,
        border: BorderGradients { chi, psi },
    })
}

// ---------------------------------------------------------------- Vanilla LSTM

/// Readout half of a Vanilla step: `ρ = χ ⊙ g_cr` and `α_cr = χ ⊙ r ⊙ G_c'(a_cr)`.
pub fn vanilla_readout_adjoint(c: &StepCache, chi: &Vector, opts: BackwardOptions) -> Result<(Vector, Vector)> {
    let rho = chi.hadamard(&c.gate_cr)?;
    let alpha_cr = mul3(chi, &c.readout, &gate_slope(&c.acc_cr, c.fixed.control_readout))?;
    Ok((rho, maybe_clip(alpha_cr, opts)))
}

/// `α_cs, α_cu, α_du` from `ψ[n]`.
pub fn vanilla_state_adjoint(c: &StepCache, psi: &Vector, opts: BackwardOptions) -> Result<(Vector, Vector, Vector)> {
    let alpha_cs = mul3(psi, &c.state_prev, &gate_slope(&c.acc_cs, c.fixed.control_state))?;
    let alpha_cu = mul3(psi, &c.update, &gate_slope(&c.acc_cu, c.fixed.control_update))?;
    let alpha_du = mul3(psi, &c.gate_cu, &c.acc_du.map(gd_prime))?;
    Ok((maybe_clip(alpha_cs, opts), maybe_clip(alpha_cu, opts), maybe_clip(alpha_du, opts)))
}

/// Accumulation derivatives of one Vanilla step.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaAlphas {
    pub cu: Vector,
    pub cs: Vector,
    pub cr: Vector,
    pub du: Vector,
}

/// `f_χ[n]` and `f_ψ[n]`: what step `n` sends to `v[n−1]` and `s[n−1]`.
pub fn vanilla_carries(p: &VanillaLstmParams, c: &StepCache, a: &VanillaAlphas, psi: &Vector) -> Result<(Vector, Vector)> {
    let f_chi = pullback(&[(&p.w_vcu, &a.cu), (&p.w_vcs, &a.cs), (&p.w_vcr, &a.cr), (&p.w_vdu, &a.du)])?;
    let mut f_psi = pullback(&[(&p.w_scu, &a.cu), (&p.w_scs, &a.cs)])?;
    f_psi.add_assign(&c.gate_cs.hadamard(psi)?)?;
    Ok((f_chi, f_psi))
}

/// `ψ[n] = ρ ⊙ G_d'(s) + W_scrᵀ α_cr + f_ψ[n+1] (+ direct state cotangent)`.
fn vanilla_psi(
    w_scr: &Matrix,
    c: &StepCache,
    rho: &Vector,
    alpha_cr: &Vector,
    carry_psi: &Vector,
    direct: Option<&Vector>,
) -> Result<Vector> {
    let mut psi = rho.hadamard(&c.state.map(gd_prime))?;
    psi.add_assign(&w_scr.matvec_t(alpha_cr)?)?;
    psi.add_assign(carry_psi)?;
    if let Some(d) = direct {
        psi.add_assign(d)?;
    }
    Ok(psi)
}

pub fn vanilla_backward(p: &VanillaLstmParams, trace: &[StepCache], head_grads: &[Vector]) -> Result<GradientBundle<VanillaLstmParams>> {
    vanilla_backward_with(p, trace, &Cotangents::from_value(head_grads.to_vec()), BackwardOptions::default())
}

pub fn vanilla_backward_with(
    p: &VanillaLstmParams,
    trace: &[StepCache],
    cot: &Cotangents,
    opts: BackwardOptions,
) -> Result<GradientBundle<VanillaLstmParams>> {
    let k = trace.len();
    cot.check(k)?;
    let ds = p.state_dim();
    let mut g = p.zeros_like();
    let mut chis = vec![Vector::zeros(ds); k];
    let mut psis = vec![Vector::zeros(ds); k];
    let mut carry_chi = Vector::zeros(ds);
    let mut carry_psi = Vector::zeros(ds);
    for n in (0..k).rev() {
        let c = &trace[n];
        let chi = cot.value[n].add(&carry_chi)?;
        let (rho, alpha_cr) = vanilla_readout_adjoint(c, &chi, opts)?;
        let psi = vanilla_psi(&p.w_scr, c, &rho, &alpha_cr, &carry_psi, cot.state_at(n))?;
        let (cs, cu, du) = vanilla_state_adjoint(c, &psi, opts)?;
        let a = VanillaAlphas { cu, cs, cr: alpha_cr, du };

        let (x, sp, vp) = (&c.input, &c.state_prev, &c.value_prev);
        for (alpha, w_x, w_s, w_v, b) in [
            (&a.cu, &mut g.w_xcu, Some(&mut g.w_scu), &mut g.w_vcu, &mut g.b_cu),
            (&a.cs, &mut g.w_xcs, Some(&mut g.w_scs), &mut g.w_vcs, &mut g.b_cs),
            (&a.du, &mut g.w_xdu, None, &mut g.w_vdu, &mut g.b_du),
        ] {
            w_x.add_outer(alpha, x)?;
            if let Some(w_s) = w_s {
                w_s.add_outer(alpha, sp)?;
            }
            w_v.add_outer(alpha, vp)?;
            b.add_assign(alpha)?;
        }
        g.w_xcr.add_outer(&a.cr, x)?;
        g.w_scr.add_outer(&a.cr, &c.state)?;
        g.w_vcr.add_outer(&a.cr, vp)?;
        g.b_cr.add_assign(&a.cr)?;

        let (f_chi, f_psi) = vanilla_carries(p, c, &a, &psi)?;
        carry_chi = f_chi;
        carry_psi = f_psi;
        chis[n] = chi;
        psis[n] = psi;
    }
    Ok(GradientBundle {
        params: g,
        border: BorderGradients { chi: chis, psi: psis },
    })
}

// ---------------------------------------------------------------- Augmented LSTM

/// Accumulation derivatives of one augmented step.
#[derive(Clone, Debug, PartialEq)]
pub struct AugAlphas {
    pub cu: Vector,
    pub cs: Vector,
    pub cr: Vector,
    pub cx: Vector,
    pub du: Vector,
}

pub fn augmented_backward(
    p: &AugmentedLstmParams,
    trace: &[AugStepCache],
    head_grads: &[Vector],
) -> Result<GradientBundle<AugmentedLstmParams>> {
    augmented_backward_with(p, trace, &Cotangents::from_value(head_grads.to_vec()), BackwardOptions::default())
}

pub fn augmented_backward_with(
    p: &AugmentedLstmParams,
    trace: &[AugStepCache],
    cot: &Cotangents,
    opts: BackwardOptions,
) -> Result<GradientBundle<AugmentedLstmParams>> {
    let k = trace.len();
    cot.check(k)?;
    let dims = p.dims();
    let mut g = p.zeros_like();
    let mut chis = vec![Vector::zeros(dims.d_v); k];
    let mut psis = vec![Vector::zeros(dims.d_s); k];
    let mut carry_chi = Vector::zeros(dims.d_v);
    let mut carry_psi = Vector::zeros(dims.d_s);
    for n in (0..k).rev() {
        let t = &trace[n];
        let c = &t.core;
        let chi = cot.value[n].add(&carry_chi)?;
        // β = W_qdrᵀ χ is the cotangent of the qualifier q = g_cr ⊙ r.
        let beta = p.w_qdr.matvec_t(&chi)?;
        let (rho, alpha_cr) = vanilla_readout_adjoint(c, &beta, opts)?;
        let psi = vanilla_psi(&p.w_scr, c, &rho, &alpha_cr, &carry_psi, cot.state_at(n))?;
        let (cs, cu, du) = vanilla_state_adjoint(c, &psi, opts)?;

        // ∂E/∂g_cx and the gated data-update inputs.
        let (gamma_cx, du_inputs) = match p.input_gate {
            InputGateMode::Elementwise => (du.hadamard(&t.xi_du)?, None),
            InputGateMode::WindowInputs => {
                let mut gamma = Vector::zeros(dims.d_x);
                for (w, x) in p.f_xdu.taps().iter().zip(&t.window) {
                    gamma.add_assign(&x.hadamard(&w.matvec_t(&du)?)?)?;
                }
                let gated: Vec<Vector> = t.window.iter().map(|x| t.gate_cx.hadamard(x)).collect::<Result<_>>()?;
                (gamma, Some(gated))
            }
        };
        let cx = maybe_clip(gamma_cx.hadamard(&gate_slope(&t.acc_cx, c.fixed.control_input))?, opts);
        let a = AugAlphas {
            cu,
            cs,
            cr: alpha_cr,
            cx,
            du,
        };

        let (sp, vp) = (&c.state_prev, &c.value_prev);
        for (alpha, f, w_s, s_used, w_v, b) in [
            (&a.cu, &mut g.f_xcu, &mut g.w_scu, sp, &mut g.w_vcu, &mut g.b_cu),
            (&a.cs, &mut g.f_xcs, &mut g.w_scs, sp, &mut g.w_vcs, &mut g.b_cs),
            (&a.cr, &mut g.f_xcr, &mut g.w_scr, &c.state, &mut g.w_vcr, &mut g.b_cr),
            (&a.cx, &mut g.f_xcx, &mut g.w_scx, sp, &mut g.w_vcx, &mut g.b_cx),
        ] {
            for (w, x) in f.taps_mut().iter_mut().zip(&t.window) {
                w.add_outer(alpha, x)?;
            }
            w_s.add_outer(alpha, s_used)?;
            w_v.add_outer(alpha, vp)?;
            b.add_assign(alpha)?;
        }
        match &du_inputs {
            None => {
                let scaled = a.du.hadamard(&t.gate_cx)?;
                for (w, x) in g.f_xdu.taps_mut().iter_mut().zip(&t.window) {
                    w.add_outer(&scaled, x)?;
                }
            }
            Some(gated) => {
                for (w, x) in g.f_xdu.taps_mut().iter_mut().zip(gated) {
                    w.add_outer(&a.du, x)?;
                }
            }
        }
        g.w_vdu.add_outer(&a.du, vp)?;
        g.b_du.add_assign(&a.du)?;
        g.w_qdr.add_outer(&chi, &t.qualifier)?;

        carry_chi = pullback(&[
            (&p.w_vcu, &a.cu),
            (&p.w_vcs, &a.cs),
            (&p.w_vcr, &a.cr),
            (&p.w_vcx, &a.cx),
            (&p.w_vdu, &a.du),
        ])?;
        carry_psi = pullback(&[(&p.w_scu, &a.cu), (&p.w_scs, &a.cs), (&p.w_scx, &a.cx)])?;
        carry_psi.add_assign(&c.gate_cs.hadamard(&psi)?)?;
        chis[n] = chi;
        psis[n] = psi;
    }
    Ok(GradientBundle {
        params: g,
        border: BorderGradients { chi: chis, psi: psis },
    })
}

// ---------------------------------------------------------------- generic model interface

/// A recurrent model with a forward pass over one segment and its exact
/// backward pass.
pub trait SequenceModel: Clone + Send + Sync {
    type Params: Parameters;
    type Trace: Send;

    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;
    fn state_dim(&self) -> usize;
    /// Dimension of the signal the loss head reads.
    fn output_dim(&self) -> usize;
    fn forward(&self, xs: &[Vector]) -> Result<Self::Trace>;
    /// The per-step signal the loss head reads: `r` for the RNN, `v` otherwise.
    fn outputs(trace: &Self::Trace) -> Vec<Vector>;
    fn backward(&self, trace: &Self::Trace, cot: &Cotangents, opts: BackwardOptions) -> Result<GradientBundle<Self::Params>>;
    /// Segment loss from the scalar-loop reference evaluator, with the
    /// parameters given flat in canonical order.
    fn reference_loss<R: Real>(&self, theta: &[R], xs: &[Vector], targets: &[Vector], head: &LossHead) -> Result<R>;
}

impl SequenceModel for StandardRnnParams {
    type Params = StandardRnnParams;
    type Trace = RnnTrace;

    fn params(&self) -> &Self::Params {
        self
    }
    fn params_mut(&mut self) -> &mut Self::Params {
        self
    }
    fn state_dim(&self) -> usize {
        StandardRnnParams::state_dim(self)
    }
    fn output_dim(&self) -> usize {
        StandardRnnParams::state_dim(self)
    }
    fn forward(&self, xs: &[Vector]) -> Result<RnnTrace> {
        self.forward_segment(xs)
    }
    fn outputs(trace: &RnnTrace) -> Vec<Vector> {
        trace.readouts.clone()
    }
    fn backward(&self, trace: &RnnTrace, cot: &Cotangents, opts: BackwardOptions) -> Result<GradientBundle<Self>> {
        rnn_backward_with(self, trace, cot, opts)
    }
    fn reference_loss<R: Real>(&self, theta: &[R], xs: &[Vector], targets: &[Vector], head: &LossHead) -> Result<R> {
        let steps = reference::rnn_forward(&Layout::of(self), theta, xs);
        let outs: Vec<Vec<R>> = steps.into_iter().map(|mut m| m.remove("r").unwrap_or_default()).collect();
        reference::head_loss(head, &outs, targets)
    }
}

impl SequenceModel for VanillaLstm {
    type Params = VanillaLstmParams;
    type Trace = Vec<StepCache>;

    fn params(&self) -> &Self::Params {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Self::Params {
        &mut self.params
    }
    fn state_dim(&self) -> usize {
        self.params.state_dim()
    }
    fn output_dim(&self) -> usize {
        self.params.state_dim()
    }
    fn forward(&self, xs: &[Vector]) -> Result<Self::Trace> {
        self.forward_segment(xs)
    }
    fn outputs(trace: &Self::Trace) -> Vec<Vector> {
        trace.iter().map(|c| c.value.clone()).collect()
    }
    fn backward(&self, trace: &Self::Trace, cot: &Cotangents, opts: BackwardOptions) -> Result<GradientBundle<Self::Params>> {
        vanilla_backward_with(&self.params, trace, cot, opts)
    }
    fn reference_loss<R: Real>(&self, theta: &[R], xs: &[Vector], targets: &[Vector], head: &LossHead) -> Result<R> {
        let steps = reference::vanilla_forward(&Layout::of(&self.params), theta, &self.overrides, xs);
        let outs: Vec<Vec<R>> = steps.into_iter().map(|mut m| m.remove("v").unwrap_or_default()).collect();
        reference::head_loss(head, &outs, targets)
    }
}

impl SequenceModel for AugmentedLstm {
    type Params = AugmentedLstmParams;
    type Trace = Vec<AugStepCache>;

    fn params(&self) -> &Self::Params {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Self::Params {
        &mut self.params
    }
    fn state_dim(&self) -> usize {
        self.params.dims().d_s
    }
    fn output_dim(&self) -> usize {
        self.params.dims().d_v
    }
    fn forward(&self, xs: &[Vector]) -> Result<Self::Trace> {
        self.forward_segment(xs)
    }
    fn outputs(trace: &Self::Trace) -> Vec<Vector> {
        trace.iter().map(|c| c.core.value.clone()).collect()
    }
    fn backward(&self, trace: &Self::Trace, cot: &Cotangents, opts: BackwardOptions) -> Result<GradientBundle<Self::Params>> {
        augmented_backward_with(&self.params, trace, cot, opts)
    }
    fn reference_loss<R: Real>(&self, theta: &[R], xs: &[Vector], targets: &[Vector], head: &LossHead) -> Result<R> {
        let steps = reference::augmented_forward(&Layout::of(&self.params), theta, &self.params, &self.overrides, xs);
        let outs: Vec<Vec<R>> = steps.into_iter().map(|mut m| m.remove("v").unwrap_or_default()).collect();
        reference::head_loss(head, &outs, targets)
    }
}

/// `E = Σ_n loss(head(out[n]), t[n])` over one segment.
pub fn segment_loss<M: SequenceModel>(model: &M, xs: &[Vector], targets: &[Vector], head: &LossHead) -> Result<f64> {
    let trace = model.forward(xs)?;
    let outs = M::outputs(&trace);
    if outs.len() != targets.len() {
        return Err(Error::mismatch("segment targets", targets.len(), outs.len()));
    }
    let mut total = 0.0;
    for (o, t) in outs.iter().zip(targets) {
        total += head.loss(o, t)?;
    }
    Ok(total)
}

/// Loss, model gradient and head gradient of one segment.
pub struct SegmentGradient<P> {
    pub loss: f64,
    pub bundle: GradientBundle<P>,
    pub head: LossHead,
}

pub fn segment_gradient<M: SequenceModel>(
    model: &M,
    xs: &[Vector],
    targets: &[Vector],
    head: &LossHead,
    opts: BackwardOptions,
) -> Result<SegmentGradient<M::Params>> {
    let trace = model.forward(xs)?;
    let outs = M::outputs(&trace);
    if outs.len() != targets.len() {
        return Err(Error::mismatch("segment targets", targets.len(), outs.len()));
    }
    let mut loss = 0.0;
    let mut head_grad = head.zeros_like();
    let mut value = Vec::with_capacity(outs.len());
    for (o, t) in outs.iter().zip(targets) {
        let step = head.backward(o, t)?;
        loss += step.loss;
        head_grad.axpy(1.0, &step.head_grad)?;
        value.push(step.d_value);
    }
    let bundle = model.backward(&trace, &Cotangents::from_value(value), opts)?;
    Ok(SegmentGradient {
        loss,
        bundle,
        head: head_grad,
    })
}

// ---------------------------------------------------------------- gradient check

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    /// Tensor name and element, e.g. `W_xcu[0][1,2]` or `b_cu(3)`.
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub worst_parameter: String,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }

    /// Plain-text table: parameter, analytic, numeric, relative error.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<20} {:>24} {:>24} {:>12}\n", "parameter", "analytic", "numeric", "rel_err");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<20} {:>24.16e} {:>24.16e} {:>12.3e}",
                e.parameter, e.analytic, e.numeric, e.rel_err
            );
        }
        let _ = writeln!(out, "max rel err {:.3e} at {}", self.max_rel_err, self.worst_parameter);
        out
    }
}

/// `|a − b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// How `E(θ ± ε)` is evaluated for central differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FdPrecision {
    /// The production forward pass in `f64`. Roundoff in `E` limits the
    /// difference quotient to an absolute accuracy of roughly `1e-16·|E|/ε`.
    Double,
    /// The scalar reference evaluator in double-double arithmetic, with the
    /// perturbation `θᵢ ± ε` applied exactly.
    #[default]
    DoubleDouble,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub precision: FdPrecision,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            precision: FdPrecision::DoubleDouble,
        }
    }
}

/// Compare the analytic gradient with central differences
/// `(E(θᵢ+ε) − E(θᵢ−ε)) / 2ε` for every scalar parameter. Clipping is
/// always off here.
pub fn grad_check<M: SequenceModel>(
    model: &M,
    xs: &[Vector],
    targets: &[Vector],
    head: &LossHead,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = segment_gradient(model, xs, targets, head, BackwardOptions::default())?;
    grad_check_against(model, xs, targets, head, opts, &analytic.bundle.params)
}

/// Central differences of the segment loss for every scalar parameter.
pub fn numeric_gradient<M: SequenceModel>(
    model: &M,
    xs: &[Vector],
    targets: &[Vector],
    head: &LossHead,
    opts: &GradCheckOptions,
) -> Result<Vec<f64>> {
    let eps = opts.epsilon;
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidConfig(format!("epsilon {eps} outside [1e-7, 1e-4]")));
    }
    let base = model.params().to_flat();
    let mut out = Vec::with_capacity(base.len());
    match opts.precision {
        FdPrecision::Double => {
            let mut probe = model.clone();
            for i in 0..base.len() {
                let mut flat = base.clone();
                flat[i] = base[i] + eps;
                probe.params_mut().set_flat(&flat)?;
                let plus = segment_loss(&probe, xs, targets, head)?;
                flat[i] = base[i] - eps;
                probe.params_mut().set_flat(&flat)?;
                let minus = segment_loss(&probe, xs, targets, head)?;
                out.push((plus - minus) / (2.0 * eps));
            }
        }
        FdPrecision::DoubleDouble => {
            let theta: Vec<DoubleDouble> = base.iter().map(|&z| DoubleDouble::new(z)).collect();
            let step = DoubleDouble::new(eps);
            for i in 0..base.len() {
                let mut t = theta.clone();
                t[i] = theta[i] + step;
                let plus = model.reference_loss(&t, xs, targets, head)?;
                t[i] = theta[i] - step;
                let minus = model.reference_loss(&t, xs, targets, head)?;
                out.push(((plus - minus) / DoubleDouble::new(2.0 * eps)).to_f64());
            }
        }
    }
    Ok(out)
}

/// As [`grad_check`] but against a caller-supplied analytic gradient.
pub fn grad_check_against<M: SequenceModel>(
    model: &M,
    xs: &[Vector],
    targets: &[Vector],
    head: &LossHead,
    opts: &GradCheckOptions,
    analytic: &M::Params,
) -> Result<GradCheckReport> {
    let numeric = numeric_gradient(model, xs, targets, head, opts)?;
    let labels = element_labels(model.params());
    let grads = analytic.to_flat();
    if grads.len() != numeric.len() {
        return Err(Error::mismatch("analytic gradient", grads.len(), numeric.len()));
    }
    let entries: Vec<GradCheckEntry> = grads
        .iter()
        .zip(&numeric)
        .zip(labels)
        .map(|((&a, &n), parameter)| GradCheckEntry {
            parameter,
            analytic: a,
            numeric: n,
            rel_err: relative_error(a, n),
        })
        .collect();
    let worst = entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).ok_or(Error::Empty)?;
    Ok(GradCheckReport {
        max_rel_err: worst.rel_err,
        worst_parameter: worst.parameter.clone(),
        entries,
    })
}

/// One label per scalar, in flat order.
pub fn element_labels<P: Parameters>(p: &P) -> Vec<String> {
    let mut out = Vec::with_capacity(p.num_scalars());
    for t in p.tensors() {
        match t.shape {
            crate::params::Shape::Matrix { rows, cols } => {
                for i in 0..rows {
                    for j in 0..cols {
                        out.push(format!("{}[{i},{j}]", t.name));
                    }
                }
            }
            crate::params::Shape::Vector { len } => out.extend((0..len).map(|i| format!("{}({i})", t.name))),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, d: usize) -> Vector {
        Vector::from_fn(d, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn clip_examples() {
        let a = Vector::new(vec![0.5, -2.0, 3.0]).unwrap();
        assert_eq!(clip_accumulation_derivatives(&a).into_vec(), vec![0.5, -1.0, 1.0]);
        let b = Vector::new(vec![0.25, -1.0]).unwrap();
        assert_eq!(clip_accumulation_derivatives(&b), b);
    }

    #[test]
    fn rnn_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = StandardRnnParams::zeros(2, 3);
        p.randomize(&mut rng, 0.5);
        let xs = vec![randn(&mut rng, 2)];
        let tr = p.forward_segment(&xs).unwrap();
        let d = randn(&mut rng, 3);
        let b = rnn_backward(&p, &tr, std::slice::from_ref(&d)).unwrap();
        assert_eq!(b.border.psi[0], d.hadamard(&tr.states[0].map(gd_prime)).unwrap());
        assert_eq!(b.params.w_r, Matrix::zeros(3, 3));
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = VanillaLstmParams::random(2, 3, &mut rng, 0.5);
        let xs: Vec<Vector> = (0..4).map(|_| randn(&mut rng, 2)).collect();
        let tr = p.forward_segment(&xs).unwrap();
        let b = vanilla_backward(&p, &tr, &vec![Vector::zeros(3); 4]).unwrap();
        assert_eq!(b.params.max_abs(), 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let p = StandardRnnParams::zeros(1, 1);
        let tr = p.forward_segment(&[Vector::zeros(1), Vector::zeros(1)]).unwrap();
        assert!(rnn_backward(&p, &tr, &[Vector::zeros(1)]).is_err());
    }

    #[test]
    fn labels_follow_flat_order() {
        let p = StandardRnnParams::zeros(1, 2);
        assert_eq!(
            element_labels(&p),
            vec![
                "W_r[0,0]",
                "W_r[0,1]",
                "W_r[1,0]",
                "W_r[1,1]",
                "W_x[0,0]",
                "W_x[1,0]",
                "theta_s(0)",
                "theta_s(1)"
            ]
        );
    }
}
