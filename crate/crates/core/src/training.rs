//! Loss heads, plain gradient descent over batches of segments, and the
//! delayed-echo task.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bptt::{segment_gradient, BackwardOptions, SegmentGradient, SequenceModel};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::params::{mmut, mref, vmut, vref, Parameters, TensorMut, TensorRef};
use crate::segmentation::{Segment, SegmentPlan, SequenceData};

/// Maps the cell's output `v[n]` to a prediction and scores it.
///
/// The softmax head is not invertible, so experiments that rely on segment
/// independence of the underlying signal should use an MSE head.
#[derive(Clone, Debug, PartialEq)]
pub enum LossHead {
    /// `y = v`, `E = ½‖v − t‖²`.
    Mse,
    /// `y = W_y v + b_y`, `E = ½‖y − t‖²`.
    AffineMse { w_y: Matrix, b_y: Vector },
    /// `y = softmax(W_y v + b_y)`, `E = −Σ t log y`.
    SoftmaxCe { w_y: Matrix, b_y: Vector },
}

/// Loss and cotangents of one head evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadStep {
    pub loss: f64,
    /// `(∂y/∂v)ᵀ ∂E/∂y`.
    pub d_value: Vector,
    /// Gradient with respect to the head's own parameters.
    pub head_grad: LossHead,
}

fn log_softmax(z: &Vector) -> Vector {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&zi| (zi - m).exp()).sum::<f64>().ln();
    z.map(|zi| zi - lse)
}

impl LossHead {
    pub fn affine_mse(d_y: usize, d_v: usize) -> Self {
        LossHead::AffineMse {
            w_y: Matrix::zeros(d_y, d_v),
            b_y: Vector::zeros(d_y),
        }
    }

    pub fn softmax_ce(d_y: usize, d_v: usize) -> Self {
        LossHead::SoftmaxCe {
            w_y: Matrix::zeros(d_y, d_v),
            b_y: Vector::zeros(d_y),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LossHead::Mse => "identity-mse",
            LossHead::AffineMse { .. } => "affine-mse",
            LossHead::SoftmaxCe { .. } => "affine-softmax-ce",
        }
    }

    fn affine(w_y: &Matrix, b_y: &Vector, v: &Vector) -> Result<Vector> {
        let mut z = w_y.matvec(v)?;
        z.add_assign(b_y)?;
        Ok(z)
    }

    pub fn forward(&self, v: &Vector) -> Result<Vector> {
        match self {
            LossHead::Mse => Ok(v.clone()),
            LossHead::AffineMse { w_y, b_y } => Self::affine(w_y, b_y, v),
            LossHead::SoftmaxCe { w_y, b_y } => Ok(log_softmax(&Self::affine(w_y, b_y, v)?).map(f64::exp)),
        }
    }

    fn check_target(&self, y_len: usize, t: &Vector) -> Result<()> {
        if t.len() != y_len {
            return Err(Error::mismatch("loss target", t.shape(), format!("[{y_len}]")));
        }
        if let LossHead::SoftmaxCe { .. } = self {
            let sum: f64 = t.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || t.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidTarget(format!("softmax target must be a distribution (sum {sum})")));
            }
        }
        Ok(())
    }

    pub fn loss(&self, v: &Vector, t: &Vector) -> Result<f64> {
        Ok(self.backward(v, t)?.loss)
    }

    pub fn backward(&self, v: &Vector, t: &Vector) -> Result<HeadStep> {
        match self {
            LossHead::Mse => {
                self.check_target(v.len(), t)?;
                let e = v.sub(t)?;
                Ok(HeadStep {
                    loss: 0.5 * e.dot(&e)?,
                    d_value: e,
                    head_grad: LossHead::Mse,
                })
            }
            LossHead::AffineMse { w_y, b_y } => {
                let y = Self::affine(w_y, b_y, v)?;
                self.check_target(y.len(), t)?;
                let e = y.sub(t)?;
                Ok(HeadStep {
                    loss: 0.5 * e.dot(&e)?,
                    d_value: w_y.matvec_t(&e)?,
                    head_grad: LossHead::AffineMse {
                        w_y: Matrix::outer(&e, v),
                        b_y: e,
                    },
                })
            }
            LossHead::SoftmaxCe { w_y, b_y } => {
                let z = Self::affine(w_y, b_y, v)?;
                self.check_target(z.len(), t)?;
                let log_y = log_softmax(&z);
                let loss = -t
                    .iter()
                    .zip(log_y.iter())
                    .map(|(&ti, &ly)| if ti == 0.0 { 0.0 } else { ti * ly })
                    .sum::<f64>();
                let e = log_y.map(f64::exp).sub(t)?;
                Ok(HeadStep {
                    loss,
                    d_value: w_y.matvec_t(&e)?,
                    head_grad: LossHead::SoftmaxCe {
                        w_y: Matrix::outer(&e, v),
                        b_y: e,
                    },
                })
            }
        }
    }
}

impl Parameters for LossHead {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        match self {
            LossHead::Mse => Vec::new(),
            LossHead::AffineMse { w_y, b_y } | LossHead::SoftmaxCe { w_y, b_y } => vec![mref("W_y", w_y), vref("b_y", b_y)],
        }
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        match self {
            LossHead::Mse => Vec::new(),
            LossHead::AffineMse { w_y, b_y } | LossHead::SoftmaxCe { w_y, b_y } => vec![mmut("W_y", w_y), vmut("b_y", b_y)],
        }
    }
}

/// `θ ← θ − lr · dE/dθ` for every entity.
pub fn sgd_step<P: Parameters>(params: &mut P, grads: &P, learning_rate: f64) -> Result<()> {
    params.axpy(-learning_rate, grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many parameter updates, even mid-epoch.
    pub max_updates: Option<usize>,
    pub clip: bool,
    pub train_head: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 10,
            max_updates: None,
            clip: true,
            train_head: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean segment loss over the segments seen in each epoch.
    pub epoch_losses: Vec<f64>,
    pub updates: usize,
}

/// Parameters drawn from U(−0.1, 0.1).
pub fn init_uniform<P: Parameters>(params: &mut P, rng: &mut impl Rng) {
    params.randomize(rng, 0.1);
}

/// Gradient descent over shuffled batches of segments.
///
/// Segment gradients within a batch are computed in parallel and summed in
/// batch order, so results do not depend on the thread count.
pub fn train<M: SequenceModel>(model: &mut M, head: &mut LossHead, segments: &[Segment], config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    if segments.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(bad) = segments.iter().find(|s| s.targets.is_none()) {
        return Err(Error::InvalidTarget(format!("segment {} has no targets", bad.index)));
    }
    let opts = BackwardOptions { clip: config.clip };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut history = TrainHistory::default();
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            if config.max_updates.is_some_and(|m| history.updates >= m) {
                if seen > 0 {
                    history.epoch_losses.push(epoch_loss / seen as f64);
                }
                break 'epochs;
            }
            let results: Vec<SegmentGradient<M::Params>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &segments[i];
                    segment_gradient(&*model, &s.inputs, s.targets.as_deref().unwrap_or(&[]), head, opts)
                })
                .collect::<Result<_>>()?;
            let mut grad = model.params().zeros_like();
            let mut head_grad = head.zeros_like();
            for r in &results {
                if !r.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        update: history.updates,
                    });
                }
                epoch_loss += r.loss;
                grad.axpy(1.0, &r.bundle.params)?;
                head_grad.axpy(1.0, &r.head)?;
            }
            seen += batch.len();
            sgd_step(model.params_mut(), &grad, config.learning_rate)?;
            if config.train_head {
                sgd_step(head, &head_grad, config.learning_rate)?;
            }
            if !model.params().is_finite() || !head.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    update: history.updates,
                });
            }
            history.updates += 1;
        }
        history.epoch_losses.push(epoch_loss / seen as f64);
    }
    Ok(history)
}

/// Mean of `(y − t)²` over every step and element of every segment.
pub fn evaluate_mse<M: SequenceModel>(model: &M, head: &LossHead, segments: &[Segment]) -> Result<f64> {
    let per_segment: Vec<(f64, usize)> = segments
        .par_iter()
        .map(|s| {
            let targets = s
                .targets
                .as_ref()
                .ok_or_else(|| Error::InvalidTarget(format!("segment {} has no targets", s.index)))?;
            let outs = M::outputs(&model.forward(&s.inputs)?);
            let mut sum = 0.0;
            let mut count = 0;
            for (o, t) in outs.iter().zip(targets) {
                let e = head.forward(o)?.sub(t)?;
                sum += e.dot(&e)?;
                count += e.len();
            }
            Ok((sum, count))
        })
        .collect::<Result<_>>()?;
    let (sum, count) = per_segment.iter().fold((0.0, 0), |(a, b), &(s, c)| (a + s, b + c));
    Ok(sum / count as f64)
}

/// Random ±1 inputs; within each segment the target at step `n` is the
/// input at step `n − lag`, and zero for `n < lag`.
pub fn make_delayed_echo(
    num_segments: usize,
    segment_len: usize,
    lag: usize,
    d_x: usize,
    seed: u64,
) -> Result<(SequenceData, SegmentPlan)> {
    if lag >= segment_len {
        return Err(Error::InvalidConfig(format!(
            "lag {lag} must be smaller than the segment length {segment_len}"
        )));
    }
    if num_segments == 0 || d_x == 0 {
        return Err(Error::InvalidConfig("need at least one segment and one input element".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = num_segments * segment_len;
    let inputs: Vec<Vector> = (0..total)
        .map(|_| Vector::from_fn(d_x, |_| if rng.gen::<bool>() { 1.0 } else { -1.0 }))
        .collect();
    let targets = (0..total)
        .map(|i| {
            let n = i % segment_len;
            if n < lag {
                Vector::zeros(d_x)
            } else {
                inputs[i - lag].clone()
            }
        })
        .collect();
    let plan = SegmentPlan::new(vec![segment_len; num_segments])?;
    Ok((SequenceData::new(inputs, Some(targets))?, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn_cells::StandardRnnParams;
    use crate::segmentation::{extract_segments, Padding};

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn mse_at_target() {
        let s = LossHead::Mse.backward(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap();
        assert_eq!(s.loss, 0.0);
        assert_eq!(s.d_value, Vector::zeros(2));
    }

    #[test]
    fn uniform_softmax() {
        let h = LossHead::softmax_ce(2, 3);
        assert_eq!(h.forward(&v(&[0.3, -1.0, 2.0])).unwrap().into_vec(), vec![0.5, 0.5]);
        assert!(h.backward(&v(&[0.0, 0.0, 0.0]), &v(&[0.7, 0.7])).is_err());
    }

    #[test]
    fn head_gradients_match_differences() {
        let w = Matrix::from_fn(3, 2, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
        let b = v(&[0.1, -0.2, 0.05]);
        let heads = [
            (LossHead::Mse, v(&[0.2, -0.4])),
            (
                LossHead::AffineMse {
                    w_y: w.clone(),
                    b_y: b.clone(),
                },
                v(&[0.5, 0.0, -1.0]),
            ),
            (LossHead::SoftmaxCe { w_y: w, b_y: b }, v(&[0.2, 0.5, 0.3])),
        ];
        let x = v(&[0.7, -0.3]);
        for (head, t) in heads {
            let g = head.backward(&x, &t).unwrap();
            for i in 0..2 {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (head.loss(&xp, &t).unwrap() - head.loss(&xm, &t).unwrap()) / (2.0 * h);
                let rel = (fd - g.d_value[i]).abs() / fd.abs().max(g.d_value[i].abs());
                assert!(rel < 1e-7, "{} {rel}", head.kind());
            }
        }
    }

    #[test]
    fn sgd_on_a_quadratic() {
        // E = ½ (θ − 3)², dE/dθ = θ − 3.
        let mut p = LossHead::AffineMse {
            w_y: Matrix::zeros(1, 1),
            b_y: v(&[1.0]),
        };
        let g = LossHead::AffineMse {
            w_y: Matrix::zeros(1, 1),
            b_y: v(&[1.0 - 3.0]),
        };
        sgd_step(&mut p, &g, 0.25).unwrap();
        assert_eq!(p.to_flat(), vec![0.0, 1.5]);
        let before = p.clone();
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn echo_dataset() {
        let (d, plan) = make_delayed_echo(3, 5, 0, 1, 7).unwrap();
        assert_eq!(d.targets.as_ref().unwrap(), &d.inputs);
        assert_eq!(plan.total(), 15);
        let (d2, _) = make_delayed_echo(3, 5, 2, 1, 7).unwrap();
        assert_eq!(d2.inputs, d.inputs);
        let t = d2.targets.unwrap();
        assert_eq!(t[5], Vector::zeros(1));
        assert_eq!(t[7], d2.inputs[5]);
        assert!(make_delayed_echo(3, 5, 5, 1, 7).is_err());
    }

    #[test]
    fn zero_rate_keeps_loss_flat() {
        let (data, plan) = make_delayed_echo(8, 6, 2, 1, 3).unwrap();
        let segs = extract_segments(&data, &plan, Padding::Exact).unwrap();
        let mut p = StandardRnnParams::zeros(1, 1);
        init_uniform(&mut p, &mut ChaCha8Rng::seed_from_u64(1));
        let before = p.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 3,
            epochs: 3,
            ..TrainConfig::default()
        };
        let h = train(&mut p, &mut LossHead::Mse, &segs, &cfg).unwrap();
        assert_eq!(p, before);
        assert_eq!(h.epoch_losses.len(), 3);
        // Shuffling only reorders the summation.
        assert!(h.epoch_losses.iter().all(|&l| (l - h.epoch_losses[0]).abs() <= 1e-12 * l));
    }
}
