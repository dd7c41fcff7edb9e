//! Experiment configuration: a TOML file with one table per concern.
//! Every key is documented in `docs/config.md`.

use std::path::{Path, PathBuf};

use rgl_core::lstm_augmented::InputGateMode;
use rgl_core::training::TrainConfig;
use serde::Deserialize;
use toml::Spanned;

/// A configuration problem. Maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    StandardRnn,
    VanillaLstm,
    AugmentedLstm,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    #[default]
    Free,
    /// Constant error carousel: state gate 1, update and readout gates 0.
    Cec,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    IdentityMse,
    #[default]
    AffineMse,
    AffineSoftmaxCe,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    DelayedEcho,
    Csv,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    DoubleDouble,
    Double,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnoseInput {
    #[default]
    Random,
    Zeros,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub d_x: usize,
    pub d_s: usize,
    pub d_v: Option<Spanned<usize>>,
    pub context: Option<Spanned<usize>>,
    pub input_gate: Option<Spanned<String>>,
    #[serde(default = "default_init_range")]
    pub init_range: f64,
    /// Added to `b_cs` after initialization (LSTM kinds).
    #[serde(default)]
    pub state_gate_bias: Option<Spanned<f64>>,
    /// Replace `W_r` with this multiple of the identity (standard RNN).
    #[serde(default)]
    pub recurrent_identity: Option<Spanned<f64>>,
    #[serde(default)]
    pub gates: Option<Spanned<GateMode>>,
    /// Load parameters from a checkpoint instead of initializing them.
    pub checkpoint: Option<PathBuf>,
}

fn default_init_range() -> f64 {
    0.1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub inputs: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub segment_len: usize,
    pub num_segments: usize,
    pub lag: usize,
    pub standardize: bool,
    pub eval_segments: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::DelayedEcho,
            inputs: None,
            targets: None,
            segment_len: 20,
            num_segments: 200,
            lag: 10,
            standardize: false,
            eval_segments: 100,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSection {
    pub kind: HeadKind,
    /// Output dimension of affine heads; defaults to the target width.
    pub d_y: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_updates: Option<usize>,
    pub clip: bool,
    pub train_head: bool,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            max_updates: d.max_updates,
            clip: d.clip,
            train_head: d.train_head,
            seed: d.seed,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub steps: usize,
    pub epsilon: f64,
    pub precision: Precision,
    pub tolerance: f64,
    pub param_range: f64,
    /// Test fixture: perturb one analytic gradient entry before comparing.
    pub corrupt_gradient: bool,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            steps: 6,
            epsilon: 1e-5,
            precision: Precision::DoubleDouble,
            tolerance: 1e-6,
            param_range: 0.5,
            corrupt_gradient: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    pub steps: usize,
    pub input: DiagnoseInput,
    pub input_range: f64,
    /// `[n, l]` pairs for long-range flow norms; defaults to `[0, steps−1]`.
    pub spans: Vec<[usize; 2]>,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection {
            steps: 50,
            input: DiagnoseInput::Random,
            input_range: 1.0,
            spans: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub head: HeadSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

/// Augmented-only settings after validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentedSettings {
    pub d_v: usize,
    pub context: usize,
    pub input_gate: InputGateMode,
}

pub const DEFAULT_CONFIG: &str = r#"
[model]
kind = "vanilla-lstm"
d_x = 3
d_s = 4

[head]
kind = "identity-mse"
"#;

#[derive(Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: String,
    pub path: String,
    /// Directory that relative paths in the file are resolved against.
    pub base_dir: PathBuf,
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.display().to_string(),
            message: format!("cannot read config: {e}"),
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&source, &path.display().to_string(), base_dir)
    }

    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG, "<default>", PathBuf::from(".")).expect("built-in config is valid")
    }

    pub fn parse(source: &str, path: &str, base_dir: PathBuf) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(source).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(source, s.start));
            ConfigError {
                path: path.to_string(),
                message: format!("line {line}: {}", e.message()),
            }
        })?;
        let loaded = LoadedConfig {
            config,
            source: source.to_string(),
            path: path.to_string(),
            base_dir,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn error_at<T>(&self, spanned: &Spanned<T>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            message: format!("line {}: {}", line_of(&self.source, spanned.span().start), message.into()),
        }
    }

    fn error(&self, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            message: message.into(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.config.model;
        if m.d_x == 0 || m.d_s == 0 {
            return Err(self.error("[model] d_x and d_s must be at least 1"));
        }
        if !(m.init_range >= 0.0 && m.init_range.is_finite()) {
            return Err(self.error("[model] init_range must be finite and non-negative"));
        }
        if m.kind != ModelKind::AugmentedLstm {
            for (name, span) in [
                ("d_v", m.d_v.as_ref().map(|s| s.span())),
                ("context", m.context.as_ref().map(|s| s.span())),
                ("input_gate", m.input_gate.as_ref().map(|s| s.span())),
            ] {
                if let Some(span) = span {
                    return Err(self.error(format!(
                        "line {}: `{name}` only applies to augmented-lstm",
                        line_of(&self.source, span.start)
                    )));
                }
            }
        }
        if m.kind == ModelKind::StandardRnn {
            if let Some(b) = &m.state_gate_bias {
                return Err(self.error_at(b, "`state_gate_bias` only applies to LSTM kinds"));
            }
            if let Some(g) = &m.gates {
                return Err(self.error_at(g, "`gates` only applies to LSTM kinds"));
            }
        } else if let Some(r) = &m.recurrent_identity {
            return Err(self.error_at(r, "`recurrent_identity` only applies to standard-rnn"));
        }
        if m.kind == ModelKind::AugmentedLstm {
            self.augmented()?;
        }
        if self.config.data.source == DataSource::Csv && self.config.data.inputs.is_none() {
            return Err(self.error("[data] source = \"csv\" needs `inputs`"));
        }
        if self.config.data.segment_len == 0 {
            return Err(self.error("[data] segment_len must be at least 1"));
        }
        if self.config.gradcheck.steps == 0 || self.config.diagnose.steps == 0 {
            return Err(self.error("`steps` must be at least 1"));
        }
        self.train_config(None).validate().map_err(|e| self.error(format!("[train] {e}")))?;
        Ok(())
    }

    /// Validated augmented-only settings. `d_v` defaults to `d_s`,
    /// `context` to 1 and `input_gate` to elementwise.
    pub fn augmented(&self) -> Result<AugmentedSettings, ConfigError> {
        let m = &self.config.model;
        let d_v = m.d_v.as_ref().map_or(m.d_s, |s| *s.get_ref());
        if let Some(s) = &m.d_v {
            if d_v > m.d_s || d_v == 0 {
                return Err(self.error_at(s, format!("d_v = {d_v} must lie in 1..={} (d_s)", m.d_s)));
            }
        }
        let context = m.context.as_ref().map_or(1, |s| *s.get_ref());
        if let Some(s) = &m.context {
            if context == 0 {
                return Err(self.error_at(s, "context length must be at least 1"));
            }
        }
        let input_gate = match &m.input_gate {
            None => InputGateMode::Elementwise,
            Some(s) => s.get_ref().parse().map_err(|e| self.error_at(s, format!("{e}")))?,
        };
        if input_gate == InputGateMode::Elementwise && m.d_x != m.d_s {
            let msg = "input_gate = \"elementwise\" needs d_x = d_s; use \"window-inputs\" otherwise";
            return Err(match &m.input_gate {
                Some(s) => self.error_at(s, msg),
                None => self.error(msg),
            });
        }
        Ok(AugmentedSettings { d_v, context, input_gate })
    }

    pub fn gates(&self) -> GateMode {
        self.config.model.gates.as_ref().map_or(GateMode::Free, |g| *g.get_ref())
    }

    pub fn train_config(&self, seed: Option<u64>) -> TrainConfig {
        let t = &self.config.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            max_updates: t.max_updates,
            clip: t.clip,
            train_head: t.train_head,
            seed: seed.unwrap_or(t.seed),
        }
    }
}
