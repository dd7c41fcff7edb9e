mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgl_core::lstm_augmented::*;
use rgl_core::lstm_vanilla::*;
use rgl_core::reference::{self, Layout, ScalarStep};
use rgl_core::rnn_cells::{CanonicalRnnParams, ContinuousSystem, StandardRnnParams};
use rgl_core::{Matrix, Parameters, Vector};

fn close(label: &str, got: &Vector, want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "{label}");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol * w.abs().max(1.0), "{label}[{i}]: {g} vs {w}");
    }
}

fn check_vanilla(cache: &StepCache, oracle: &ScalarStep<f64>) {
    for (name, got) in [
        ("a_cu", &cache.acc_cu),
        ("a_cs", &cache.acc_cs),
        ("a_cr", &cache.acc_cr),
        ("a_du", &cache.acc_du),
        ("g_cu", &cache.gate_cu),
        ("g_cs", &cache.gate_cs),
        ("g_cr", &cache.gate_cr),
        ("u", &cache.update),
        ("s", &cache.state),
        ("r", &cache.readout),
        ("v", &cache.value),
    ] {
        close(name, got, &oracle[name], 1e-14);
    }
}

#[test]
fn vanilla_matches_scalar_loops() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = VanillaLstmParams::random(2, 3, &mut rng, 1.0);
        let xs = uniform_seq(&mut rng, 7, 2, 2.0);
        let overrides = if seed % 3 == 0 {
            GateOverrides::constant_error_carousel(3)
        } else if seed % 3 == 1 {
            GateOverrides {
                control_state: Some(uniform(&mut rng, 3, 1.0)),
                ..Default::default()
            }
        } else {
            GateOverrides::default()
        };
        let trace = VanillaLstm::new(p.clone())
            .unwrap()
            .with_overrides(overrides.clone())
            .forward_segment(&xs)
            .unwrap();
        let oracle = reference::vanilla_forward::<f64>(&Layout::of(&p), &p.to_flat(), &overrides, &xs);
        for (c, o) in trace.iter().zip(&oracle) {
            check_vanilla(c, o);
        }
    }
}

#[test]
fn augmented_matches_scalar_loops() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let mode = if seed % 2 == 0 {
            InputGateMode::Elementwise
        } else {
            InputGateMode::WindowInputs
        };
        let d_s = 4;
        let d_x = if mode == InputGateMode::Elementwise { d_s } else { 2 };
        let dims = AugmentedDims {
            d_x,
            d_s,
            d_v: 1 + (seed as usize % d_s),
            context: 1 + (seed as usize % 3),
            input_gate: mode,
        };
        let p = AugmentedLstmParams::random(dims, &mut rng, 1.0).unwrap();
        let xs = uniform_seq(&mut rng, 6, d_x, 2.0);
        let overrides = AugOverrides::default();
        let trace = AugmentedLstm::new(p.clone()).unwrap().forward_segment(&xs).unwrap();
        let oracle = reference::augmented_forward::<f64>(&Layout::of(&p), &p.to_flat(), &p, &overrides, &xs);
        for (c, o) in trace.iter().zip(&oracle) {
            check_vanilla(&c.core, o);
            for (name, got) in [
                ("xi_cu", &c.xi_cu),
                ("xi_cs", &c.xi_cs),
                ("xi_cr", &c.xi_cr),
                ("xi_cx", &c.xi_cx),
                ("xi_du", &c.xi_du),
                ("a_cx", &c.acc_cx),
                ("g_cx", &c.gate_cx),
                ("q", &c.qualifier),
            ] {
                close(name, got, &o[name], 1e-14);
            }
            assert_eq!(c.core.value.len(), dims.d_v);
        }
    }
}

#[test]
fn rnn_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut p = StandardRnnParams::zeros(3, 4);
    p.randomize(&mut rng, 1.0);
    let xs = uniform_seq(&mut rng, 8, 3, 1.0);
    let tr = p.forward_segment(&xs).unwrap();
    let oracle = reference::rnn_forward::<f64>(&Layout::of(&p), &p.to_flat(), &xs);
    for (n, o) in oracle.iter().enumerate() {
        close("s", &tr.states[n], &o["s"], 1e-14);
        close("r", &tr.readouts[n], &o["r"], 1e-14);
    }
}

#[test]
fn reduction_equivalence_on_many_instances() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d_x = rng.gen_range(1..=4);
        let d_s = rng.gen_range(1..=4);
        let p = VanillaLstmParams::random(d_x, d_s, &mut rng, 1.5);
        let xs = uniform_seq(&mut rng, 6, d_x, 2.0);
        let vanilla = p.forward_segment(&xs).unwrap();
        let mode = if d_x == d_s && seed % 2 == 0 {
            InputGateMode::Elementwise
        } else {
            InputGateMode::WindowInputs
        };
        let mut a = AugmentedLstmParams::from_vanilla(&p, mode);
        // The input-gate parameters are irrelevant once g_cx is forced.
        a.w_scx = uniform_matrix(&mut rng, d_x, d_s, 1.0);
        a.b_cx = uniform(&mut rng, d_x, 1.0);
        let aug = AugmentedLstm::new(a)
            .unwrap()
            .with_overrides(AugOverrides::reduction(d_x))
            .forward_segment(&xs)
            .unwrap();
        for (v, g) in vanilla.iter().zip(&aug) {
            for (x, y) in [(&v.state, &g.core.state), (&v.value, &g.core.value), (&v.acc_cr, &g.core.acc_cr)] {
                assert!(x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-14), "seed {seed}");
            }
        }
    }
}

#[test]
fn gates_and_signals_stay_in_range() {
    // Moderate drive keeps every value strictly inside; heavy drive may round to the endpoints.
    for (scale, strict) in [(1.0, true), (3.0, false)] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = VanillaLstmParams::random(3, 5, &mut rng, scale);
        let tr = p.forward_segment(&uniform_seq(&mut rng, 40, 3, scale)).unwrap();
        let inside = |v: f64, lo: f64, hi: f64| if strict { v > lo && v < hi } else { v >= lo && v <= hi };
        for c in &tr {
            for g in [&c.gate_cu, &c.gate_cs, &c.gate_cr] {
                assert!(g.iter().all(|&v| inside(v, 0.0, 1.0)));
            }
            for w in [&c.update, &c.readout] {
                assert!(w.iter().all(|&v| inside(v, -1.0, 1.0)));
            }
        }
    }
}

#[test]
fn state_obeys_geometric_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gamma = 0.8;
    let p = VanillaLstmParams::random(2, 4, &mut rng, 2.0);
    let s_init = uniform(&mut rng, 4, 1.0);
    let overrides = GateOverrides {
        control_state: Some(Vector::from_fn(4, |i| gamma * (0.5 + 0.125 * i as f64))),
        ..Default::default()
    };
    let xs = uniform_seq(&mut rng, 60, 2, 3.0);
    let tr = p.forward_segment_from(&overrides, &xs, &s_init, &Vector::zeros(4)).unwrap();
    let s0 = s_init.norm_inf();
    for (n, c) in tr.iter().enumerate() {
        let bound = gamma.powi(n as i32 + 1) * s0 + 1.0 / (1.0 - gamma);
        assert!(c.state.norm_inf() <= bound, "step {n}");
        assert!(c.state.norm_inf() <= (n + 1) as f64 + s0);
    }
}

#[test]
fn augmented_window_locality() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dims = AugmentedDims {
        d_x: 2,
        d_s: 3,
        d_v: 2,
        context: 3,
        input_gate: InputGateMode::WindowInputs,
    };
    let p = AugmentedLstmParams::random(dims, &mut rng, 1.0).unwrap();
    let xs = uniform_seq(&mut rng, 8, 2, 1.0);
    let (s_prev, v_prev) = (uniform(&mut rng, 3, 1.0), uniform(&mut rng, 2, 1.0));
    let ov = AugOverrides::default();
    let n = 2;
    let base = p.forward_step(&ov, &xs, n, &s_prev, &v_prev).unwrap();
    for m in 0..xs.len() {
        let mut moved = xs.clone();
        moved[m] = moved[m].add(&Vector::filled(2, 0.3)).unwrap();
        let out = p.forward_step(&ov, &moved, n, &s_prev, &v_prev).unwrap();
        let changed = out.core.value != base.core.value;
        assert_eq!(changed, (n..n + 3).contains(&m), "m = {m}");
    }
}

#[test]
fn augmented_shapes_with_narrow_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let dims = AugmentedDims {
        d_x: 2,
        d_s: 5,
        d_v: 2,
        context: 2,
        input_gate: InputGateMode::WindowInputs,
    };
    let p = AugmentedLstmParams::random(dims, &mut rng, 1.0).unwrap();
    for m in [&p.w_vcu, &p.w_vcs, &p.w_vcr, &p.w_vdu] {
        assert_eq!((m.rows(), m.cols()), (5, 2));
    }
    assert_eq!((p.w_vcx.rows(), p.w_vcx.cols()), (2, 2));
    assert_eq!((p.w_qdr.rows(), p.w_qdr.cols()), (2, 5));
    let tr = p
        .forward_segment_from(
            &AugOverrides::default(),
            &uniform_seq(&mut rng, 4, 2, 1.0),
            &Vector::zeros(5),
            &Vector::zeros(2),
        )
        .unwrap();
    assert!(tr.iter().all(|c| c.core.value.len() == 2 && c.core.state.len() == 5));
}

#[test]
fn canonical_without_state_term_is_the_standard_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut std_p = StandardRnnParams::zeros(2, 3);
    std_p.randomize(&mut rng, 1.0);
    let canon = CanonicalRnnParams {
        w_s: Matrix::zeros(3, 3),
        w_r: std_p.w_r.clone(),
        w_x: std_p.w_x.clone(),
        theta_s: std_p.theta_s.clone(),
    };
    let (mut s, mut r) = (uniform(&mut rng, 3, 1.0), uniform(&mut rng, 3, 1.0));
    for _ in 0..10 {
        let x = uniform(&mut rng, 2, 1.0);
        let (s1, r1) = canon.step(&s, &r, &x).unwrap();
        let (s2, r2) = std_p.step(&r, &x).unwrap();
        assert!(s1.iter().zip(s2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(r1.iter().zip(r2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        (s, r) = (s1, r1);
    }
}

#[test]
fn discretized_cell_satisfies_the_implicit_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..10 {
        let a = uniform_matrix(&mut rng, 3, 3, 1.0).sub(&Matrix::identity(3).scale(2.0)).unwrap();
        let sys = ContinuousSystem::new(
            a,
            uniform_matrix(&mut rng, 3, 3, 1.0),
            uniform_matrix(&mut rng, 3, 2, 1.0),
            uniform(&mut rng, 3, 1.0),
            0.1,
        )
        .unwrap();
        let p = sys.discretize().unwrap();
        let (mut s, mut r) = (Vector::zeros(3), Vector::zeros(3));
        for _ in 0..20 {
            let x = uniform(&mut rng, 2, 1.0);
            let (s1, r1) = p.step(&s, &r, &x).unwrap();
            assert!(sys.implicit_residual(&s1, &s, &r, &x).unwrap() < 1e-10);
            (s, r) = (s1, r1);
        }
    }
}

#[test]
fn scalar_impulse_response_decreases() {
    for w_r in [0.1, 0.5, 0.9, 0.99] {
        let p = StandardRnnParams::new(Matrix::identity(1).scale(w_r), Matrix::identity(1), Vector::zeros(1)).unwrap();
        let s = p.impulse_response(30).unwrap();
        for n in 1..29 {
            assert!(s[n + 1][0].abs() < s[n][0].abs(), "w_r {w_r}, n {n}");
        }
    }
}
