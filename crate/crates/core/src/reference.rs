//! Scalar-loop reference evaluation of the three forward passes and their
//! segment losses, generic over the number type.
//!
//! This is a second, deliberately plain implementation: explicit index
//! loops over a flat parameter vector, no matrix kernels. Instantiated with
//! `f64` it cross-checks the production forward passes. Instantiated with
//! [`DoubleDouble`] it evaluates the loss with about 32 significant digits,
//! which takes floating-point roundoff out of central finite differences.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::lstm_augmented::{AugOverrides, AugmentedLstmParams, InputGateMode};
use crate::lstm_vanilla::GateOverrides;
use crate::numerics::Vector;
use crate::params::{Parameters, Shape};
use crate::training::LossHead;

/// Number type for the reference evaluator.
pub trait Real:
    Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// `tanh`.
    fn gd(self) -> Self;
    /// Logistic function.
    fn gc(self) -> Self;
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn gd(self) -> Self {
        crate::numerics::gd(self)
    }
    fn gc(self) -> Self {
        crate::numerics::gc(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN_2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl DoubleDouble {
    pub const ZERO: DoubleDouble = DoubleDouble { hi: 0.0, lo: 0.0 };
    pub const ONE: DoubleDouble = DoubleDouble { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        DoubleDouble { hi, lo }
    }

    /// Exact multiplication by `2^k`.
    fn ldexp(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        DoubleDouble {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    /// `e^x − 1` for `|x| ≤ 0.35`, accurate relative to the result.
    fn expm1_small(self) -> Self {
        const HALVINGS: i32 = 10;
        let r = self.ldexp(-HALVINGS);
        // Taylor series; |r| < 3.5e-4 so 12 terms are far below 2^-106.
        let mut term = r;
        let mut sum = r;
        for n in 2..=12 {
            term = term * r / DoubleDouble::new(n as f64);
            sum = sum + term;
        }
        // expm1(2a) = expm1(a) · (2 + expm1(a))
        for _ in 0..HALVINGS {
            sum = sum * (sum + DoubleDouble::new(2.0));
        }
        sum
    }

    pub fn expm1(self) -> Self {
        if self.hi.abs() <= 0.35 {
            self.expm1_small()
        } else {
            self.exp() - DoubleDouble::ONE
        }
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        DoubleDouble::new(x)
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, y: Self) -> Self {
        let (s, e) = two_sum(self.hi, y.hi);
        let (t, f) = two_sum(self.lo, y.lo);
        let (s, e) = quick_two_sum(s, e + t);
        DoubleDouble::renorm(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, y: Self) -> Self {
        self + (-y)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, y: Self) -> Self {
        let (p, e) = two_prod(self.hi, y.hi);
        DoubleDouble::renorm(p, e + (self.hi * y.lo + self.lo * y.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, y: Self) -> Self {
        let q1 = self.hi / y.hi;
        let r = self - y * DoubleDouble::new(q1);
        let q2 = r.hi / y.hi;
        let r = r - y * DoubleDouble::new(q2);
        let q3 = r.hi / y.hi;
        DoubleDouble::renorm(q1, q2) + DoubleDouble::new(q3)
    }
}

impl Real for DoubleDouble {
    fn from_f64(x: f64) -> Self {
        DoubleDouble::new(x)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return DoubleDouble::new(f64::INFINITY);
        }
        if self.hi < -708.0 {
            return DoubleDouble::new(self.hi.exp());
        }
        let k = (self.hi / LN_2.hi).round();
        let r = self - LN_2 * DoubleDouble::new(k);
        (r.expm1_small() + DoubleDouble::ONE).ldexp(k as i32)
    }

    fn ln(self) -> Self {
        // One Newton step on e^y = x doubles the f64 estimate's precision.
        let y = DoubleDouble::new(self.hi.ln());
        y + self * (-y).exp() - DoubleDouble::ONE
    }

    fn gd(self) -> Self {
        if self.hi < 0.0 {
            return -(-self).gd();
        }
        if self.hi > 40.0 {
            return DoubleDouble::ONE - DoubleDouble::new(2.0) * (-(self + self)).exp();
        }
        let e = (self + self).expm1();
        e / (e + DoubleDouble::new(2.0))
    }

    fn gc(self) -> Self {
        if self.hi >= 0.0 {
            DoubleDouble::ONE / (DoubleDouble::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (DoubleDouble::ONE + e)
        }
    }
}

/// Where each named tensor lives in a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Layout {
    entries: HashMap<String, (usize, usize, usize)>,
}

impl Layout {
    pub fn of<P: Parameters>(p: &P) -> Self {
        let mut entries = HashMap::new();
        let mut offset = 0;
        for t in p.tensors() {
            let (rows, cols) = match t.shape {
                Shape::Matrix { rows, cols } => (rows, cols),
                Shape::Vector { len } => (len, 1),
            };
            entries.insert(t.name.clone(), (offset, rows, cols));
            offset += rows * cols;
        }
        Layout { entries }
    }

    fn get(&self, name: &str) -> (usize, usize, usize) {
        *self.entries.get(name).unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    /// `W x` by explicit loops.
    fn mv<R: Real>(&self, theta: &[R], name: &str, x: &[R]) -> Vec<R> {
        let (off, rows, cols) = self.get(name);
        assert_eq!(cols, x.len(), "{name}: {cols} columns vs input of {}", x.len());
        (0..rows)
            .map(|i| {
                let mut acc = R::from_f64(0.0);
                for (j, &xj) in x.iter().enumerate() {
                    acc = acc + theta[off + i * cols + j] * xj;
                }
                acc
            })
            .collect()
    }

    fn vector<R: Real>(&self, theta: &[R], name: &str) -> Vec<R> {
        let (off, rows, _) = self.get(name);
        theta[off..off + rows].to_vec()
    }
}

fn lift<R: Real>(v: &Vector) -> Vec<R> {
    v.iter().map(|&z| R::from_f64(z)).collect()
}

fn sum<R: Real>(terms: &[&[R]]) -> Vec<R> {
    (0..terms[0].len())
        .map(|i| terms[1..].iter().fold(terms[0][i], |acc, t| acc + t[i]))
        .collect()
}

fn zip<R: Real>(a: &[R], b: &[R], f: impl Fn(R, R) -> R) -> Vec<R> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Every named signal of one step, e.g. `"a_cu"`, `"g_cs"`, `"s"`, `"v"`.
pub type ScalarStep<R> = HashMap<&'static str, Vec<R>>;

/// RNN: `s = W_r r[n−1] + W_x x + θ_s`, `r = G_d(s)`, from rest.
pub fn rnn_forward<R: Real>(layout: &Layout, theta: &[R], xs: &[Vector]) -> Vec<ScalarStep<R>> {
    let d_s = layout.get("theta_s").1;
    let mut r_prev = vec![R::from_f64(0.0); d_s];
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let s = sum(&[
            &layout.mv(theta, "W_r", &r_prev),
            &layout.mv(theta, "W_x", &lift(x)),
            &layout.vector(theta, "theta_s"),
        ]);
        let r: Vec<R> = s.iter().map(|z| z.gd()).collect();
        r_prev = r.clone();
        out.push(HashMap::from([("s", s), ("r", r)]));
    }
    out
}

fn forced<R: Real>(acc: &[R], forced: Option<&Vector>) -> Vec<R> {
    match forced {
        Some(g) => lift(g),
        None => acc.iter().map(|z| z.gc()).collect(),
    }
}

/// Vanilla LSTM from `s[−1] = v[−1] = 0`.
pub fn vanilla_forward<R: Real>(layout: &Layout, theta: &[R], overrides: &GateOverrides, xs: &[Vector]) -> Vec<ScalarStep<R>> {
    let d_s = layout.get("b_cu").1;
    let zero = vec![R::from_f64(0.0); d_s];
    let (mut s_prev, mut v_prev) = (zero.clone(), zero);
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let x = lift::<R>(x);
        let acc = |gate: &str, s: Option<&[R]>| {
            let mut terms = vec![layout.mv(theta, &format!("W_x{gate}"), &x)];
            if let Some(s) = s {
                terms.push(layout.mv(theta, &format!("W_s{gate}"), s));
            }
            terms.push(layout.mv(theta, &format!("W_v{gate}"), &v_prev));
            terms.push(layout.vector(theta, &format!("b_{gate}")));
            let refs: Vec<&[R]> = terms.iter().map(Vec::as_slice).collect();
            sum(&refs)
        };
        let a_cu = acc("cu", Some(&s_prev));
        let a_cs = acc("cs", Some(&s_prev));
        let a_du = acc("du", None);
        let g_cu = forced(&a_cu, overrides.control_update.as_ref());
        let g_cs = forced(&a_cs, overrides.control_state.as_ref());
        let u: Vec<R> = a_du.iter().map(|z| z.gd()).collect();
        let s: Vec<R> = (0..d_s).map(|i| g_cs[i] * s_prev[i] + g_cu[i] * u[i]).collect();
        let a_cr = acc("cr", Some(&s));
        let g_cr = forced(&a_cr, overrides.control_readout.as_ref());
        let r: Vec<R> = s.iter().map(|z| z.gd()).collect();
        let v = zip(&g_cr, &r, |a, b| a * b);
        s_prev = s.clone();
        v_prev = v.clone();
        out.push(HashMap::from([
            ("a_cu", a_cu),
            ("a_cs", a_cs),
            ("a_cr", a_cr),
            ("a_du", a_du),
            ("g_cu", g_cu),
            ("g_cs", g_cs),
            ("g_cr", g_cr),
            ("u", u),
            ("s", s),
            ("r", r),
            ("v", v),
        ]));
    }
    out
}

/// Augmented LSTM from `s[−1] = 0`, `v[−1] = 0`.
pub fn augmented_forward<R: Real>(
    layout: &Layout,
    theta: &[R],
    params: &AugmentedLstmParams,
    overrides: &AugOverrides,
    xs: &[Vector],
) -> Vec<ScalarStep<R>> {
    let dims = params.dims();
    let (d_x, d_s, d_v, len) = (dims.d_x, dims.d_s, dims.d_v, dims.context);
    let zero = |d| vec![R::from_f64(0.0); d];
    let (mut s_prev, mut v_prev) = (zero(d_s), zero(d_v));
    let mut out = Vec::with_capacity(xs.len());
    for n in 0..xs.len() {
        let window: Vec<Vec<R>> = (0..len).map(|l| xs.get(n + l).map(lift).unwrap_or_else(|| zero(d_x))).collect();
        let conv = |gate: &str, inputs: &[Vec<R>]| {
            let terms: Vec<Vec<R>> = (0..len).map(|l| layout.mv(theta, &format!("W_x{gate}[{l}]"), &inputs[l])).collect();
            let refs: Vec<&[R]> = terms.iter().map(Vec::as_slice).collect();
            sum(&refs)
        };
        let recur = |gate: &str, xi: &[R], s: Option<&[R]>| {
            let mut terms = vec![xi.to_vec()];
            if let Some(s) = s {
                terms.push(layout.mv(theta, &format!("W_s{gate}"), s));
            }
            terms.push(layout.mv(theta, &format!("W_v{gate}"), &v_prev));
            terms.push(layout.vector(theta, &format!("b_{gate}")));
            let refs: Vec<&[R]> = terms.iter().map(Vec::as_slice).collect();
            sum(&refs)
        };
        let xi_cu = conv("cu", &window);
        let xi_cs = conv("cs", &window);
        let xi_cr = conv("cr", &window);
        let xi_cx = conv("cx", &window);
        let a_cu = recur("cu", &xi_cu, Some(&s_prev));
        let a_cs = recur("cs", &xi_cs, Some(&s_prev));
        let a_cx = recur("cx", &xi_cx, Some(&s_prev));
        let g_cu = forced(&a_cu, overrides.gates.control_update.as_ref());
        let g_cs = forced(&a_cs, overrides.gates.control_state.as_ref());
        let g_cx = forced(&a_cx, overrides.control_input.as_ref());
        let (xi_du, gated) = match params.input_gate {
            InputGateMode::Elementwise => {
                let xi = conv("du", &window);
                let gated = zip(&g_cx, &xi, |a, b| a * b);
                (xi, gated)
            }
            InputGateMode::WindowInputs => {
                let inputs: Vec<Vec<R>> = window.iter().map(|x| zip(&g_cx, x, |a, b| a * b)).collect();
                let xi = conv("du", &inputs);
                (xi.clone(), xi)
            }
        };
        let a_du = recur("du", &gated, None);
        let u: Vec<R> = a_du.iter().map(|z| z.gd()).collect();
        let s: Vec<R> = (0..d_s).map(|i| g_cs[i] * s_prev[i] + g_cu[i] * u[i]).collect();
        let a_cr = recur("cr", &xi_cr, Some(&s));
        let g_cr = forced(&a_cr, overrides.gates.control_readout.as_ref());
        let r: Vec<R> = s.iter().map(|z| z.gd()).collect();
        let q = zip(&g_cr, &r, |a, b| a * b);
        let v = layout.mv(theta, "W_qdr", &q);
        s_prev = s.clone();
        v_prev = v.clone();
        out.push(HashMap::from([
            ("xi_cu", xi_cu),
            ("xi_cs", xi_cs),
            ("xi_cr", xi_cr),
            ("xi_cx", xi_cx),
            ("xi_du", xi_du),
            ("a_cu", a_cu),
            ("a_cs", a_cs),
            ("a_cr", a_cr),
            ("a_cx", a_cx),
            ("a_du", a_du),
            ("g_cu", g_cu),
            ("g_cs", g_cs),
            ("g_cr", g_cr),
            ("g_cx", g_cx),
            ("u", u),
            ("s", s),
            ("r", r),
            ("q", q),
            ("v", v),
        ]));
    }
    out
}

/// `Σ_n loss(head(out[n]), t[n])` evaluated in `R`.
pub fn head_loss<R: Real>(head: &LossHead, outputs: &[Vec<R>], targets: &[Vector]) -> Result<R> {
    if outputs.len() != targets.len() {
        return Err(Error::mismatch("reference loss targets", targets.len(), outputs.len()));
    }
    let mut total = R::from_f64(0.0);
    let half = R::from_f64(0.5);
    for (o, t) in outputs.iter().zip(targets) {
        let t: Vec<R> = lift(t);
        let affine = |w: &crate::numerics::Matrix, b: &Vector| -> Vec<R> {
            (0..w.rows())
                .map(|i| {
                    let mut acc = R::from_f64(b[i]);
                    for (j, &oj) in o.iter().enumerate() {
                        acc = acc + R::from_f64(w.get(i, j)) * oj;
                    }
                    acc
                })
                .collect()
        };
        let y = match head {
            LossHead::Mse => o.clone(),
            LossHead::AffineMse { w_y, b_y } | LossHead::SoftmaxCe { w_y, b_y } => affine(w_y, b_y),
        };
        if y.len() != t.len() {
            return Err(Error::mismatch("reference loss target", t.len(), y.len()));
        }
        match head {
            LossHead::Mse | LossHead::AffineMse { .. } => {
                for (yi, ti) in y.iter().zip(&t) {
                    let e = *yi - *ti;
                    total = total + half * e * e;
                }
            }
            LossHead::SoftmaxCe { .. } => {
                let mut m = y[0];
                for &yi in &y {
                    if yi > m {
                        m = yi;
                    }
                }
                let mut z = R::from_f64(0.0);
                for &yi in &y {
                    z = z + (yi - m).exp();
                }
                let lse = m + z.ln();
                for (yi, ti) in y.iter().zip(&t) {
                    if ti.to_f64() != 0.0 {
                        total = total - *ti * (*yi - lse);
                    }
                }
            }
        }
    }
    Ok(total)
}
