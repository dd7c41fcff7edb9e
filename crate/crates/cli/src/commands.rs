use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgl_core::bptt::{
    grad_check_against, segment_gradient, BackwardOptions, FdPrecision, GradCheckOptions, GradCheckReport, SequenceModel,
};
use rgl_core::checkpoint::{Checkpoint, ModelParams};
use rgl_core::diagnostics::{decay_curve, lstm_one_step_flows, q_regimes_audit, rnn_one_step_flows, FlowReport};
use rgl_core::lstm_augmented::{AugOverrides, AugmentedDims, AugmentedLstm, AugmentedLstmParams};
use rgl_core::lstm_vanilla::{fit_standardization, standardize, GateOverrides, VanillaLstm, VanillaLstmParams};
use rgl_core::rnn_cells::StandardRnnParams;
use rgl_core::segmentation::{extract_segments, Padding, Segment, SegmentPlan, SequenceData};
use rgl_core::training::{evaluate_mse, init_uniform, make_delayed_echo, train, LossHead};
use rgl_core::{Matrix, Parameters, Vector};

use crate::config::{ConfigError, DataSource, DiagnoseInput, GateMode, HeadKind, LoadedConfig, ModelKind, Precision};
use crate::data;

/// Outcome of a command that ran to completion.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
}

#[derive(Clone, Debug)]
pub enum AnyModel {
    Rnn(StandardRnnParams),
    Vanilla(VanillaLstm),
    Augmented(AugmentedLstm),
}

macro_rules! with_model {
    ($model:expr, $m:ident => $body:expr) => {
        match $model {
            AnyModel::Rnn($m) => $body,
            AnyModel::Vanilla($m) => $body,
            AnyModel::Augmented($m) => $body,
        }
    };
}

impl AnyModel {
    fn output_dim(&self) -> usize {
        with_model!(self, m => m.output_dim())
    }

    fn input_dim(&self) -> usize {
        match self {
            AnyModel::Rnn(p) => p.input_dim(),
            AnyModel::Vanilla(m) => m.params.input_dim(),
            AnyModel::Augmented(m) => m.params.dims().d_x,
        }
    }

    fn to_params(&self) -> ModelParams {
        match self {
            AnyModel::Rnn(p) => ModelParams::StandardRnn(p.clone()),
            AnyModel::Vanilla(m) => ModelParams::VanillaLstm(m.params.clone()),
            AnyModel::Augmented(m) => ModelParams::AugmentedLstm(m.params.clone()),
        }
    }
}

fn config_error(cfg: &LoadedConfig, message: impl Into<String>) -> anyhow::Error {
    ConfigError {
        path: cfg.path.clone(),
        message: message.into(),
    }
    .into()
}

fn add_to_all(v: &mut Vector, k: f64) {
    for x in v.as_mut_slice() {
        *x += k;
    }
}

/// Build the model from a checkpoint or by uniform initialization in
/// `[−range, range)`, then apply the structural settings of `[model]`.
/// Returns the checkpoint's head if one was loaded.
pub fn build_model(cfg: &LoadedConfig, rng: &mut ChaCha8Rng, range: f64) -> Result<(AnyModel, Option<LossHead>)> {
    let m = &cfg.config.model;
    let (params, head) = match &m.checkpoint {
        Some(path) => {
            let path = cfg.resolve(path);
            let ck = Checkpoint::read(&path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
            (Some(ck.model), Some(ck.head))
        }
        None => (None, None),
    };
    let mut model = match (m.kind, params) {
        (ModelKind::StandardRnn, None) => {
            let mut p = StandardRnnParams::zeros(m.d_x, m.d_s);
            p.randomize(rng, range);
            AnyModel::Rnn(p)
        }
        (ModelKind::VanillaLstm, None) => AnyModel::Vanilla(VanillaLstm::new(VanillaLstmParams::random(m.d_x, m.d_s, rng, range))?),
        (ModelKind::AugmentedLstm, None) => {
            let a = cfg.augmented()?;
            let dims = AugmentedDims {
                d_x: m.d_x,
                d_s: m.d_s,
                d_v: a.d_v,
                context: a.context,
                input_gate: a.input_gate,
            };
            AnyModel::Augmented(AugmentedLstm::new(AugmentedLstmParams::random(dims, rng, range)?)?)
        }
        (ModelKind::StandardRnn, Some(ModelParams::StandardRnn(p))) => AnyModel::Rnn(p),
        (ModelKind::VanillaLstm, Some(ModelParams::VanillaLstm(p))) => AnyModel::Vanilla(VanillaLstm::new(p)?),
        (ModelKind::AugmentedLstm, Some(ModelParams::AugmentedLstm(p))) => AnyModel::Augmented(AugmentedLstm::new(p)?),
        (_, Some(other)) => {
            return Err(config_error(
                cfg,
                format!("checkpoint holds a {} model, config asks for another kind", other.kind()),
            ));
        }
    };
    if model.input_dim() != m.d_x || with_model!(&model, x => x.state_dim()) != m.d_s {
        return Err(config_error(cfg, "checkpoint dimensions differ from [model] d_x/d_s"));
    }
    let bias = m.state_gate_bias.as_ref().map(|b| *b.get_ref());
    let cec = cfg.gates() == GateMode::Cec;
    match &mut model {
        AnyModel::Rnn(p) => {
            if let Some(c) = &m.recurrent_identity {
                p.w_r = Matrix::identity(m.d_s).scale(*c.get_ref());
            }
        }
        AnyModel::Vanilla(v) => {
            if let Some(b) = bias {
                add_to_all(&mut v.params.b_cs, b);
            }
            if cec {
                v.overrides = GateOverrides::constant_error_carousel(m.d_s);
            }
        }
        AnyModel::Augmented(a) => {
            if let Some(b) = bias {
                add_to_all(&mut a.params.b_cs, b);
            }
            if cec {
                a.overrides = AugOverrides {
                    gates: GateOverrides::constant_error_carousel(m.d_s),
                    control_input: None,
                };
            }
        }
    }
    Ok((model, head))
}

/// Head for targets of width `d_t`.
fn build_head(cfg: &LoadedConfig, d_v: usize, d_t: usize, rng: &mut ChaCha8Rng) -> Result<LossHead> {
    let h = &cfg.config.head;
    let d_y = h.d_y.unwrap_or(d_t);
    if d_y != d_t {
        return Err(config_error(cfg, format!("[head] d_y = {d_y} but targets have {d_t} columns")));
    }
    Ok(match h.kind {
        HeadKind::IdentityMse => {
            if d_t != d_v {
                return Err(config_error(
                    cfg,
                    format!("identity-mse head needs targets as wide as the model output ({d_v}), got {d_t}"),
                ));
            }
            LossHead::Mse
        }
        HeadKind::AffineMse | HeadKind::AffineSoftmaxCe => {
            let mut head = if h.kind == HeadKind::AffineMse {
                LossHead::affine_mse(d_y, d_v)
            } else {
                LossHead::softmax_ce(d_y, d_v)
            };
            init_uniform(&mut head, rng);
            head
        }
    })
}

fn uniform_vectors(rng: &mut ChaCha8Rng, k: usize, d: usize, range: f64) -> Vec<Vector> {
    (0..k).map(|_| Vector::from_fn(d, |_| rng.gen_range(-range..=range))).collect()
}

fn random_targets(cfg: &LoadedConfig, rng: &mut ChaCha8Rng, k: usize, d_v: usize) -> Vec<Vector> {
    match cfg.config.head.kind {
        HeadKind::IdentityMse => uniform_vectors(rng, k, d_v, 1.0),
        HeadKind::AffineMse => uniform_vectors(rng, k, cfg.config.head.d_y.unwrap_or(1), 1.0),
        HeadKind::AffineSoftmaxCe => {
            let d_y = cfg.config.head.d_y.unwrap_or(2);
            (0..k)
                .map(|_| {
                    let c = rng.gen_range(0..d_y);
                    Vector::from_fn(d_y, |i| f64::from(u8::from(i == c)))
                })
                .collect()
        }
    }
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn check<M: SequenceModel>(
    model: &M,
    xs: &[Vector],
    ts: &[Vector],
    head: &LossHead,
    opts: &GradCheckOptions,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let mut analytic = segment_gradient(model, xs, ts, head, BackwardOptions::default())?.bundle.params;
    if corrupt {
        let mut flat = analytic.to_flat();
        flat[0] += 1e-3 * (1.0 + flat[0].abs());
        analytic.set_flat(&flat)?;
    }
    Ok(grad_check_against(model, xs, ts, head, opts, &analytic)?)
}

pub fn gradcheck(cfg: &LoadedConfig, seed: Option<u64>, out: &Path) -> Result<Outcome> {
    let g = &cfg.config.gradcheck;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(cfg.config.train.seed));
    let (model, _) = build_model(cfg, &mut rng, g.param_range)?;
    let d_v = model.output_dim();
    let xs = uniform_vectors(&mut rng, g.steps, model.input_dim(), 1.0);
    let ts = random_targets(cfg, &mut rng, g.steps, d_v);
    let mut head = build_head(cfg, d_v, ts[0].len(), &mut rng)?;
    head.randomize(&mut rng, g.param_range);
    let opts = GradCheckOptions {
        epsilon: g.epsilon,
        precision: match g.precision {
            Precision::DoubleDouble => FdPrecision::DoubleDouble,
            Precision::Double => FdPrecision::Double,
        },
    };
    let report = with_model!(&model, m => check(m, &xs, &ts, &head, &opts, g.corrupt_gradient))?;
    let table = report.to_table();
    print!("{table}");
    ensure_dir(out)?;
    write_text(&out.join("gradcheck.txt"), &table)?;
    let pass = report.passes(g.tolerance);
    println!(
        "{}: max relative error {:.3e} (tolerance {:.1e})",
        if pass { "PASS" } else { "FAIL" },
        report.max_rel_err,
        g.tolerance
    );
    Ok(if pass { Outcome::Success } else { Outcome::CheckFailed })
}

fn load_segments(cfg: &LoadedConfig, seed: u64, out: &Path) -> Result<(Vec<Segment>, Vec<Segment>)> {
    let d = &cfg.config.data;
    let m = &cfg.config.model;
    match d.source {
        DataSource::DelayedEcho => {
            let (train_data, plan) = make_delayed_echo(d.num_segments, d.segment_len, d.lag, m.d_x, seed)
                .map_err(|e| config_error(cfg, format!("[data] {e}")))?;
            let (eval_data, eval_plan) = make_delayed_echo(d.eval_segments.max(1), d.segment_len, d.lag, m.d_x, seed ^ 0x5eed)?;
            Ok((
                extract_segments(&train_data, &plan, Padding::Exact)?,
                extract_segments(&eval_data, &eval_plan, Padding::Exact)?,
            ))
        }
        DataSource::Csv => {
            let inputs_path = cfg.resolve(d.inputs.as_ref().expect("validated"));
            let mut inputs = data::read_vectors(&inputs_path)?;
            if inputs.rows[0].len() != m.d_x {
                return Err(config_error(
                    cfg,
                    format!(
                        "{} has {} columns, [model] d_x = {}",
                        inputs_path.display(),
                        inputs.rows[0].len(),
                        m.d_x
                    ),
                ));
            }
            if d.standardize {
                let stats = fit_standardization(&inputs.rows).with_context(|| format!("cannot standardize {}", inputs_path.display()))?;
                inputs.rows = standardize(&stats, &inputs.rows)?;
                data::write_stats(&out.join("standardization.csv"), &inputs.header, &stats)?;
            }
            let targets = match &d.targets {
                Some(p) => {
                    let p = cfg.resolve(p);
                    Some(data::read_vectors(&p)?.rows)
                }
                None => None,
            };
            let n = inputs.rows.len();
            let seq = SequenceData::new(inputs.rows, targets)?;
            let plan = SegmentPlan::uniform(n, d.segment_len)?;
            let segments = extract_segments(&seq, &plan, Padding::Zeros)?;
            Ok((segments.clone(), segments))
        }
    }
}

fn history_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

pub fn train_cmd(cfg: &LoadedConfig, seed: Option<u64>, out: &Path) -> Result<Outcome> {
    let config = cfg.train_config(seed);
    ensure_dir(out)?;
    let (segments, eval) = load_segments(cfg, config.seed.wrapping_add(1), out)?;
    let targets = segments[0]
        .targets
        .as_ref()
        .ok_or_else(|| config_error(cfg, "training needs [data] targets"))?;
    let d_t = targets[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut model, loaded_head) = build_model(cfg, &mut rng, cfg.config.model.init_range)?;
    let mut head = match loaded_head {
        Some(h) => h,
        None => build_head(cfg, model.output_dim(), d_t, &mut rng)?,
    };
    let history = with_model!(&mut model, m => train(m, &mut head, &segments, &config))?;
    let mse = with_model!(&model, m => evaluate_mse(m, &head, &eval))?;
    write_text(&out.join("history.csv"), &history_csv(&history.epoch_losses))?;
    let ck_path = out.join("checkpoint.rgl");
    Checkpoint::new(model.to_params(), head)
        .write(&ck_path)
        .with_context(|| format!("cannot write {}", ck_path.display()))?;
    println!(
        "{} updates over {} epochs; final epoch loss {:.6e}; evaluation MSE {:.6e}",
        history.updates,
        history.epoch_losses.len(),
        history.epoch_losses.last().copied().unwrap_or(f64::NAN),
        mse
    );
    println!("wrote {} and {}", out.join("history.csv").display(), ck_path.display());
    Ok(Outcome::Success)
}

pub fn diagnose(cfg: &LoadedConfig, seed: Option<u64>, out: &Path) -> Result<Outcome> {
    let dg = &cfg.config.diagnose;
    if dg.steps < 2 {
        return Err(config_error(cfg, "[diagnose] steps must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(cfg.config.train.seed));
    let (model, _) = build_model(cfg, &mut rng, cfg.config.model.init_range)?;
    let xs = match dg.input {
        DiagnoseInput::Random => uniform_vectors(&mut rng, dg.steps, model.input_dim(), dg.input_range),
        DiagnoseInput::Zeros => vec![Vector::zeros(model.input_dim()); dg.steps],
    };
    ensure_dir(out)?;
    let curve = with_model!(&model, m => decay_curve(m, &xs))?;
    write_text(&out.join("decay_curve.csv"), &curve.to_csv())?;
    println!(
        "decay ratio |psi[0]|/|psi[{}]| = {:.6e} ({})",
        dg.steps - 1,
        curve.ratio(),
        curve.regime()
    );
    let spans: Vec<(usize, usize)> = if dg.spans.is_empty() {
        vec![(0, dg.steps - 1)]
    } else {
        dg.spans.iter().map(|&[n, l]| (n, l)).collect()
    };
    if let Some(&(n, l)) = spans.iter().find(|&&(n, l)| n > l || l >= dg.steps) {
        return Err(config_error(cfg, format!("[diagnose] span [{n}, {l}] must satisfy n ≤ l < steps")));
    }
    let flows = match &model {
        AnyModel::Rnn(p) => Some(rnn_one_step_flows(p, &p.forward_segment(&xs)?)?),
        AnyModel::Vanilla(v) => Some(lstm_one_step_flows(&v.params, &v.forward_segment(&xs)?)?),
        AnyModel::Augmented(_) => None,
    };
    match flows {
        Some(flows) => {
            let report = FlowReport::from_flows(&flows, &spans)?;
            write_text(&out.join("flow_report.txt"), &report.to_text())?;
            for s in &report.long_range {
                println!("|dpsi[{}]/dpsi[{}]| = {:.6e}", s.n, s.l, s.norm);
            }
            println!("regime: {}", report.regime);
        }
        None => println!("one-step flow analysis covers standard-rnn and vanilla-lstm; wrote the decay curve only"),
    }
    if let AnyModel::Vanilla(v) = &model {
        let audit = q_regimes_audit(&v.params);
        write_text(&out.join("q_audit.txt"), &audit.to_text())?;
        print!("{}", audit.to_text());
    }
    Ok(Outcome::Success)
}

pub fn standardize_cmd(input: &Path, output: &Path, stats_out: &Path, apply: Option<&PathBuf>) -> Result<Outcome> {
    let table = data::read_vectors(input)?;
    let stats = match apply {
        Some(p) => data::read_stats(p)?,
        None => match fit_standardization(&table.rows) {
            Err(rgl_core::Error::ConstantFeature { column }) => {
                bail!(
                    "{}: column `{}` (number {}) is constant and cannot be standardized",
                    input.display(),
                    table.header[column],
                    column + 1
                )
            }
            other => other.with_context(|| format!("cannot standardize {}", input.display()))?,
        },
    };
    if stats.mean.len() != table.header.len() {
        bail!(
            "{} has {} columns but the statistics cover {}",
            input.display(),
            table.header.len(),
            stats.mean.len()
        );
    }
    let rows = standardize(&stats, &table.rows)?;
    data::write_vectors(output, &table.header, &rows)?;
    data::write_stats(stats_out, &table.header, &stats)?;
    println!("standardized {} rows x {} columns", rows.len(), table.header.len());
    Ok(Outcome::Success)
}
