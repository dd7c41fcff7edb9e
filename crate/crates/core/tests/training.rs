mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgl_core::bptt::{segment_gradient, BackwardOptions};
use rgl_core::lstm_vanilla::{VanillaLstm, VanillaLstmParams};
use rgl_core::rnn_cells::StandardRnnParams;
use rgl_core::segmentation::{extract_segments, Padding, Segment};
use rgl_core::training::*;
use rgl_core::{Error, Parameters, Vector};

fn echo_segments(num: usize, len: usize, lag: usize, seed: u64) -> Vec<Segment> {
    let (data, plan) = make_delayed_echo(num, len, lag, 1, seed).unwrap();
    extract_segments(&data, &plan, Padding::Exact).unwrap()
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn echo_targets_are_uncorrelated_across_boundaries() {
    let (len, lag) = (20, 10);
    let (data, _) = make_delayed_echo(10_000, len, lag, 1, 42).unwrap();
    let t = data.targets.unwrap();
    // Last target of each segment against the first echoed target of the next.
    let pairs: Vec<(f64, f64)> = (0..9_999).map(|m| (t[m * len + len - 1][0], t[(m + 1) * len + lag][0])).collect();
    assert!(pearson(&pairs).abs() < 0.1);
    let (again, _) = make_delayed_echo(10_000, len, lag, 1, 42).unwrap();
    assert_eq!(again.targets.unwrap(), t);
}

#[test]
fn echo_rejects_lag_at_or_beyond_the_segment() {
    assert!(matches!(make_delayed_echo(4, 5, 5, 1, 0), Err(Error::InvalidConfig(_))));
    assert!(make_delayed_echo(4, 5, 9, 1, 0).is_err());
}

#[test]
fn batch_update_is_the_sum_of_segment_gradients() {
    let segments = echo_segments(6, 8, 2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = VanillaLstm::new(VanillaLstmParams::random(1, 4, &mut rng, 0.5)).unwrap();
    let mut head = LossHead::affine_mse(1, 4);
    head.randomize(&mut rng, 0.5);

    let mut expected = model.params.zeros_like();
    let mut expected_head = head.zeros_like();
    for s in &segments {
        let g = segment_gradient(&model, &s.inputs, s.targets.as_ref().unwrap(), &head, BackwardOptions::default()).unwrap();
        expected.axpy(1.0, &g.bundle.params).unwrap();
        expected_head.axpy(1.0, &g.head).unwrap();
    }

    let (mut trained, mut trained_head) = (model.clone(), head.clone());
    let cfg = TrainConfig {
        learning_rate: 1.0,
        batch_size: segments.len(),
        epochs: 1,
        clip: false,
        ..TrainConfig::default()
    };
    let history = train(&mut trained, &mut trained_head, &segments, &cfg).unwrap();
    assert_eq!(history.updates, 1);
    for (before, after, grad) in [
        (model.params.to_flat(), trained.params.to_flat(), expected.to_flat()),
        (head.to_flat(), trained_head.to_flat(), expected_head.to_flat()),
    ] {
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for ((b, a), g) in before.iter().zip(&after).zip(&grad) {
            assert!(((b - a) - g).abs() <= 1e-12 * scale);
        }
    }
}

#[test]
fn training_is_deterministic_and_leaves_data_alone() {
    let segments = echo_segments(12, 10, 3, 5);
    let snapshot = segments.clone();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut model = VanillaLstm::new(VanillaLstmParams::random(1, 3, &mut rng, 0.1)).unwrap();
            let mut head = LossHead::affine_mse(1, 3);
            let cfg = TrainConfig {
                batch_size: 4,
                epochs: 3,
                seed: 11,
                ..TrainConfig::default()
            };
            let h = train(&mut model, &mut head, &segments, &cfg).unwrap();
            (h, model, head)
        })
    };
    let (h1, m1, hd1) = run(1);
    let (h4, m4, hd4) = run(4);
    assert_eq!(h1, h4);
    assert_eq!(m1, m4);
    assert_eq!(hd1, hd4);
    assert_eq!(h1.updates, 9);
    assert!(h1.epoch_losses.iter().all(|l| l.is_finite()));
    assert_eq!(segments, snapshot);
}

#[test]
fn divergence_is_reported() {
    let segments = echo_segments(4, 6, 1, 3);
    let mut p = StandardRnnParams::zeros(1, 2);
    p.randomize(&mut ChaCha8Rng::seed_from_u64(1), 0.5);
    let cfg = TrainConfig {
        learning_rate: 1e300,
        batch_size: 2,
        epochs: 2,
        ..TrainConfig::default()
    };
    let err = train(&mut p, &mut LossHead::affine_mse(1, 2), &segments, &cfg).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }));
}

#[test]
fn update_budget_stops_mid_epoch() {
    let segments = echo_segments(10, 6, 1, 3);
    let mut p = StandardRnnParams::zeros(1, 2);
    let cfg = TrainConfig {
        batch_size: 2,
        epochs: 5,
        max_updates: Some(7),
        ..TrainConfig::default()
    };
    let h = train(&mut p, &mut LossHead::affine_mse(1, 2), &segments, &cfg).unwrap();
    assert_eq!(h.updates, 7);
    assert_eq!(h.epoch_losses.len(), 2);
}

#[test]
fn zero_bundle_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = VanillaLstmParams::random(2, 3, &mut rng, 1.0);
    let before = p.clone();
    sgd_step(&mut p, &before.zeros_like(), 0.5).unwrap();
    assert_eq!(p, before);
}

#[test]
fn head_parameter_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v = uniform(&mut rng, 3, 1.0);
    for mut head in [LossHead::affine_mse(2, 3), LossHead::softmax_ce(2, 3)] {
        head.randomize(&mut rng, 1.0);
        let t = match head {
            LossHead::SoftmaxCe { .. } => {
                let p: f64 = rng.gen_range(0.1..0.9);
                Vector::new(vec![p, 1.0 - p]).unwrap()
            }
            _ => uniform(&mut rng, 2, 1.0),
        };
        let analytic = head.backward(&v, &t).unwrap().head_grad.to_flat();
        let base = head.to_flat();
        let h = 1e-6;
        for (i, &g) in analytic.iter().enumerate() {
            let mut probe = head.clone();
            let mut flat = base.clone();
            flat[i] += h;
            probe.set_flat(&flat).unwrap();
            let plus = probe.loss(&v, &t).unwrap();
            flat[i] -= 2.0 * h;
            probe.set_flat(&flat).unwrap();
            let minus = probe.loss(&v, &t).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - g).abs() / fd.abs().max(g.abs()).max(1e-3) < 1e-7, "{} {i}", head.kind());
        }
    }
}

#[test]
fn heads_reject_bad_targets() {
    let v = Vector::new(vec![0.1, 0.2]).unwrap();
    assert!(LossHead::Mse.backward(&v, &Vector::zeros(3)).is_err());
    let soft = LossHead::softmax_ce(2, 2);
    assert!(soft.backward(&v, &Vector::new(vec![0.5, 0.6]).unwrap()).is_err());
    assert!(soft.backward(&v, &Vector::new(vec![1.0, 0.0]).unwrap()).is_ok());
}
