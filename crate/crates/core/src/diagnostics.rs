//! Gradient-flow analysis: how much of `ψ[l]` survives back to `ψ[n]`.
//!
//! For the standard RNN one backward step is the Jacobian
//! `∂ψ[k−1]/∂ψ[k] = diag(G_d'(s[k−1])) W_rᵀ`. For the Vanilla LSTM, with
//! `α_cr[k]` held fixed, it is
//!
//! ```text
//! ∂ψ[k−1]/∂ψ[k] = P (W_vcuᵀ D_cu + W_vcsᵀ D_cs + W_vduᵀ D_du) + W_scuᵀ D_cu + W_scsᵀ D_cs + diag(g_cs[k])
//!              = Q + diag(g_cs[k])
//! P    = diag(g_cr[k−1] ⊙ G_d'(s[k−1])) + W_scrᵀ diag(r[k−1] ⊙ G_c'(a_cr[k−1]))
//! D_cu = diag(u[k] ⊙ G_c'(a_cu[k]))   D_cs = diag(s[k−1] ⊙ G_c'(a_cs[k]))   D_du = diag(g_cu[k] ⊙ G_d'(a_du[k]))
//! ```
//!
//! Long-range flow is the ordered product of one-step Jacobians; its size
//! is the spectral norm.

use std::fmt;

use crate::bptt::{BackwardOptions, Cotangents, SequenceModel};
use crate::error::{Error, Result};
use crate::lstm_vanilla::{StepCache, VanillaLstmParams};
use crate::numerics::{gc_prime, gd_prime, Matrix, Vector};
use crate::rnn_cells::{RnnTrace, StandardRnnParams};

/// Per-step rates below this are vanishing, above [`EXPLODING_RATE`] exploding.
pub const VANISHING_RATE: f64 = 0.95;
pub const EXPLODING_RATE: f64 = 1.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowRegime {
    Vanishing,
    Sustained,
    Exploding,
}

impl fmt::Display for FlowRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowRegime::Vanishing => "vanishing",
            FlowRegime::Sustained => "sustained",
            FlowRegime::Exploding => "exploding",
        })
    }
}

/// Classify a gain `ratio` accumulated over `steps` by its geometric
/// per-step rate.
pub fn classify(ratio: f64, steps: usize) -> FlowRegime {
    if steps == 0 {
        return FlowRegime::Sustained;
    }
    let rate = if ratio > 0.0 { ratio.powf(1.0 / steps as f64) } else { 0.0 };
    if rate < VANISHING_RATE {
        FlowRegime::Vanishing
    } else if rate > EXPLODING_RATE {
        FlowRegime::Exploding
    } else {
        FlowRegime::Sustained
    }
}

fn check_span(n: usize, l: usize, len: usize) -> Result<()> {
    if n > l {
        return Err(Error::InvalidConfig(format!("flow span needs n ≤ l, got n = {n}, l = {l}")));
    }
    if l >= len {
        return Err(Error::IndexOutOfRange {
            what: "flow step",
            index: l,
            len,
        });
    }
    Ok(())
}

/// `∂ψ[k−1]/∂ψ[k]` of the standard RNN for `k ≥ 1`.
pub fn rnn_one_step_flow(p: &StandardRnnParams, trace: &RnnTrace, k: usize) -> Result<Matrix> {
    if k == 0 || k >= trace.len() {
        return Err(Error::IndexOutOfRange {
            what: "one-step flow",
            index: k,
            len: trace.len(),
        });
    }
    p.w_r.transpose().scale_rows(&trace.states[k - 1].map(gd_prime))
}

/// `∂ψ[n]/∂ψ[l] = Π_{k=n+1}^{l} ∂ψ[k−1]/∂ψ[k]`; the identity for `l = n`.
pub fn rnn_flow(p: &StandardRnnParams, trace: &RnnTrace, n: usize, l: usize) -> Result<Matrix> {
    check_span(n, l, trace.len())?;
    let flows: Vec<Matrix> = (n + 1..=l).map(|k| rnn_one_step_flow(p, trace, k)).collect::<Result<_>>()?;
    Ok(product(p.state_dim(), &flows))
}

/// One-step LSTM Jacobian and its split into `Q` and `diag(g_cs[k])`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneStepFlow {
    pub jacobian: Matrix,
    pub q: Matrix,
    pub diag_gcs: Matrix,
}

fn slope_or_zero(acc: &Vector, fixed: bool) -> Vector {
    if fixed {
        Vector::zeros(acc.len())
    } else {
        acc.map(gc_prime)
    }
}

/// `∂ψ[k−1]/∂ψ[k]` of the Vanilla LSTM with `α_cr[k]` held fixed, `1 ≤ k ≤ K−1`.
pub fn lstm_one_step_flow(p: &VanillaLstmParams, trace: &[StepCache], k: usize) -> Result<OneStepFlow> {
    if k == 0 || k >= trace.len() {
        return Err(Error::IndexOutOfRange {
            what: "one-step flow",
            index: k,
            len: trace.len(),
        });
    }
    let (prev, cur) = (&trace[k - 1], &trace[k]);
    let d_cu = cur.update.hadamard(&slope_or_zero(&cur.acc_cu, cur.fixed.control_update))?;
    let d_cs = cur.state_prev.hadamard(&slope_or_zero(&cur.acc_cs, cur.fixed.control_state))?;
    let d_du = cur.gate_cu.hadamard(&cur.acc_du.map(gd_prime))?;

    let readout = Matrix::from_diag(&prev.gate_cr.hadamard(&prev.state.map(gd_prime))?);
    let readout_gate = p
        .w_scr
        .transpose()
        .scale_cols(&prev.readout.hadamard(&slope_or_zero(&prev.acc_cr, prev.fixed.control_readout))?)?;
    let pmat = readout.add(&readout_gate)?;

    let value_path = p
        .w_vcu
        .transpose()
        .scale_cols(&d_cu)?
        .add(&p.w_vcs.transpose().scale_cols(&d_cs)?)?
        .add(&p.w_vdu.transpose().scale_cols(&d_du)?)?;
    let state_path = p
        .w_scu
        .transpose()
        .scale_cols(&d_cu)?
        .add(&p.w_scs.transpose().scale_cols(&d_cs)?)?;
    let q = pmat.matmul(&value_path)?.add(&state_path)?;
    let diag_gcs = Matrix::from_diag(&cur.gate_cs);
    Ok(OneStepFlow {
        jacobian: q.add(&diag_gcs)?,
        q,
        diag_gcs,
    })
}

/// Every LSTM one-step Jacobian of a trace; entry `i` is `∂ψ[i]/∂ψ[i+1]`.
pub fn lstm_one_step_flows(p: &VanillaLstmParams, trace: &[StepCache]) -> Result<Vec<Matrix>> {
    (1..trace.len()).map(|k| Ok(lstm_one_step_flow(p, trace, k)?.jacobian)).collect()
}

/// Every RNN one-step Jacobian of a trace; entry `i` is `∂ψ[i]/∂ψ[i+1]`.
pub fn rnn_one_step_flows(p: &StandardRnnParams, trace: &RnnTrace) -> Result<Vec<Matrix>> {
    (1..trace.len()).map(|k| rnn_one_step_flow(p, trace, k)).collect()
}

fn product(dim: usize, flows: &[Matrix]) -> Matrix {
    flows.iter().fold(Matrix::identity(dim), |acc, f| {
        acc.matmul(f).expect("one-step flows are square and equal sized")
    })
}

/// `∂ψ[n]/∂ψ[l]` from one-step flows (`flows[i] = ∂ψ[i]/∂ψ[i+1]`) and its
/// spectral norm.
pub fn long_range_flow(flows: &[Matrix], n: usize, l: usize) -> Result<(Matrix, f64)> {
    let dim = flows.first().map(Matrix::rows).ok_or(Error::Empty)?;
    check_span(n, l, flows.len() + 1)?;
    let m = product(dim, &flows[n..l]);
    let norm = m.spectral_norm();
    Ok((m, norm))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanNorm {
    pub n: usize,
    pub l: usize,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowReport {
    /// `‖∂ψ[k−1]/∂ψ[k]‖` for `k = 1..K−1`.
    pub one_step_norms: Vec<f64>,
    pub long_range: Vec<SpanNorm>,
    /// Regime of the longest requested span.
    pub regime: FlowRegime,
}

impl FlowReport {
    pub fn from_flows(flows: &[Matrix], spans: &[(usize, usize)]) -> Result<Self> {
        let one_step_norms = flows.iter().map(Matrix::spectral_norm).collect();
        let long_range: Vec<SpanNorm> = spans
            .iter()
            .map(|&(n, l)| {
                Ok(SpanNorm {
                    n,
                    l,
                    norm: long_range_flow(flows, n, l)?.1,
                })
            })
            .collect::<Result<_>>()?;
        let regime = long_range
            .iter()
            .max_by_key(|s| s.l - s.n)
            .map_or(FlowRegime::Sustained, |s| classify(s.norm, s.l - s.n));
        Ok(FlowReport {
            one_step_norms,
            long_range,
            regime,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("k,one_step_norm\n");
        for (i, v) in self.one_step_norms.iter().enumerate() {
            out.push_str(&format!("{},{v:.17e}\n", i + 1));
        }
        out.push_str("n,l,norm\n");
        for s in &self.long_range {
            out.push_str(&format!("{},{},{:.17e}\n", s.n, s.l, s.norm));
        }
        out.push_str(&format!("regime,{}\n", self.regime));
        out
    }
}

/// `‖ψ[n]‖₂` for `n = 0..K−1` under a loss that only reads the last state.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayCurve {
    pub norms: Vec<f64>,
}

impl DecayCurve {
    /// `‖ψ[0]‖ / ‖ψ[K−1]‖`.
    pub fn ratio(&self) -> f64 {
        self.norms[0] / self.norms[self.norms.len() - 1]
    }

    pub fn regime(&self) -> FlowRegime {
        classify(self.ratio(), self.norms.len() - 1)
    }

    /// Two columns: `step,grad_norm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,grad_norm\n");
        for (n, v) in self.norms.iter().enumerate() {
            out.push_str(&format!("{n},{v:.17e}\n"));
        }
        out
    }
}

/// Run the model over `xs`, seed the backward pass with
/// `E = wᵀ s[K−1]` where `w = 1/√d_s`, and record `‖ψ[n]‖`.
///
/// Seeding the state rather than the value keeps the curve meaningful when
/// the readout gate is closed.
pub fn decay_curve<M: SequenceModel>(model: &M, xs: &[Vector]) -> Result<DecayCurve> {
    let d_s = model.state_dim();
    let w = Vector::filled(d_s, 1.0 / (d_s as f64).sqrt());
    decay_curve_with(model, xs, w)
}

pub fn decay_curve_with<M: SequenceModel>(model: &M, xs: &[Vector], w: Vector) -> Result<DecayCurve> {
    let trace = model.forward(xs)?;
    let cot = Cotangents::terminal_state(xs.len(), model.output_dim(), w);
    let bundle = model.backward(&trace, &cot, BackwardOptions::default())?;
    Ok(DecayCurve {
        norms: bundle.border.psi.iter().map(Vector::norm2).collect(),
    })
}

/// One alternative from the list of sufficient conditions for `‖Q‖ < 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct QAlternative {
    pub description: &'static str,
    /// Norm conditions on parameters: (matrix, bound).
    pub norm_conditions: Vec<(&'static str, f64)>,
    /// Conditions on signals that parameters alone cannot decide.
    pub signal_conditions: &'static str,
    pub norms_hold: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QAudit {
    /// Spectral norm of each matrix in Θ̃.
    pub norms: Vec<(&'static str, f64)>,
    pub alternatives: Vec<QAlternative>,
}

impl QAudit {
    pub fn norm_of(&self, name: &str) -> f64 {
        self.norms.iter().find(|(n, _)| *n == name).map_or(f64::NAN, |(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("matrix,spectral_norm\n");
        for (n, v) in &self.norms {
            out.push_str(&format!("{n},{v:.6e}\n"));
        }
        for a in &self.alternatives {
            let conds: Vec<String> = a.norm_conditions.iter().map(|(n, b)| format!("‖{n}‖ < {b}")).collect();
            out.push_str(&format!(
                "[{}] {}: {}{}\n",
                if a.norms_hold { "holds" } else { "fails" },
                a.description,
                if conds.is_empty() {
                    "no norm conditions".to_string()
                } else {
                    conds.join(", ")
                },
                if a.signal_conditions.is_empty() {
                    String::new()
                } else {
                    format!("; plus {}", a.signal_conditions)
                },
            ));
        }
        out
    }
}

/// Evaluate the parameter-norm conditions under which `‖Q‖ < 1`.
pub fn q_regimes_audit(p: &VanillaLstmParams) -> QAudit {
    let norms = vec![
        ("W_scu", p.w_scu.spectral_norm()),
        ("W_vcu", p.w_vcu.spectral_norm()),
        ("W_scs", p.w_scs.spectral_norm()),
        ("W_vcs", p.w_vcs.spectral_norm()),
        ("W_scr", p.w_scr.spectral_norm()),
        ("W_vdu", p.w_vdu.spectral_norm()),
    ];
    let alt = |description, norm_conditions: Vec<(&'static str, f64)>, signal_conditions| {
        let norms_hold = norm_conditions
            .iter()
            .all(|(name, bound)| norms.iter().any(|(n, v)| n == name && v < bound));
        QAlternative {
            description,
            norm_conditions,
            signal_conditions,
            norms_hold,
        }
    };
    let alternatives = vec![
        alt(
            "small recurrent weights",
            vec![("W_scu", 0.5), ("W_vcu", 0.5), ("W_scs", 0.5), ("W_vcs", 0.5), ("W_vdu", 1.0)],
            "",
        ),
        alt(
            "saturated readout",
            vec![("W_scr", 0.5), ("W_scu", 0.5), ("W_scs", 0.5)],
            "the state saturates G_d on the readout path",
        ),
        alt(
            "saturated readout and readout gate",
            vec![("W_scu", 0.5), ("W_scs", 0.5)],
            "the state saturates G_d on the readout path and a_cr saturates G_c",
        ),
        alt("readout gate off", vec![("W_scu", 0.5), ("W_scs", 0.5)], "g_cr = 0"),
        alt(
            "saturated update and state gates",
            vec![],
            "a_cu and a_cs saturate G_c and a_du saturates G_d",
        ),
        alt("update and state gates off", vec![], "g_cu = 0 and g_cs = 0"),
    ];
    QAudit { norms, alternatives }
}
