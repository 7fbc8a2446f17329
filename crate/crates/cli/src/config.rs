//! Flat `key=value` experiment configs.
//!
//! ```text
//! # non-iid MNIST sweep
//! dataset=mnist
//! data_dir=../data/mnist
//! partition=non-iid
//! p=1,3,15
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys, repeated keys and
//! unparsable values are errors that name the line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use wpm_core::data::{DatasetKind, PartitionMode};
use wpm_core::learners::ModelKind;
use wpm_core::simulator::{ExperimentConfig, GradientPoint, Init, Method};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line, or 0 when the problem is not tied to a line.
    pub line: usize,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.key) {
            (0, None) => write!(f, "{}", self.message),
            (0, Some(k)) => write!(f, "key {k:?}: {}", self.message),
            (l, None) => write!(f, "line {l}: {}", self.message),
            (l, Some(k)) => write!(f, "line {l}, key {k:?}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Files { kind: DatasetKind, dir: PathBuf },
    Blobs {
        train: usize,
        test: usize,
        dim: usize,
        classes: usize,
        spread: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Label used in plot legends.
    pub name: Option<String>,
    /// `experiment.p` holds the first entry of `p_values`.
    pub experiment: ExperimentConfig,
    pub p_values: Vec<u32>,
    pub dataset: DatasetSource,
    pub partition: PartitionMode,
    pub model: ModelKind,
    pub l2: f64,
    pub target_accuracy: f64,
    pub topology: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Step size and iteration count of the centralized reference used for
    /// regret diagnostics.
    pub reference_eta: f64,
    pub reference_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: None,
            experiment: ExperimentConfig::default(),
            p_values: vec![1],
            dataset: DatasetSource::Blobs {
                train: 2000,
                test: 500,
                dim: 10,
                classes: 4,
                spread: 0.15,
            },
            partition: PartitionMode::Iid,
            model: ModelKind::LogisticRegression,
            l2: 0.0,
            target_accuracy: 0.85,
            topology: None,
            train_limit: None,
            test_limit: None,
            reference_eta: 0.5,
            reference_iterations: 500,
        }
    }
}

const KEYS: &[&str] = &[
    "name",
    "method",
    "p",
    "eta0",
    "eta",
    "devices",
    "density",
    "iterations",
    "window",
    "batch_size",
    "seed",
    "gradient_point",
    "init",
    "init_sigma",
    "record_diagnostics",
    "dataset",
    "data_dir",
    "blobs_train",
    "blobs_test",
    "blobs_dim",
    "blobs_classes",
    "blobs_spread",
    "partition",
    "model",
    "l2",
    "target_accuracy",
    "topology",
    "train_limit",
    "test_limit",
    "reference_eta",
    "reference_iterations",
];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError {
        line,
        key: Some(key.to_string()),
        message: format!("invalid value {value:?}: {e}"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError {
            line,
            key: Some(key.to_string()),
            message: format!("expected true or false, found {value:?}"),
        }),
    }
}

impl RunConfig {
    /// Parses config text. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<(&str, usize)> = Vec::new();
        let mut dataset: Option<(String, usize)> = None;
        let mut data_dir: Option<PathBuf> = None;
        let (mut b_train, mut b_test, mut b_dim, mut b_classes, mut b_spread) = (2000, 500, 10, 4, 0.15);
        let mut sigma = 0.01;
        let mut gaussian = false;

        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError {
                    line,
                    key: None,
                    message: format!("expected key=value, found {content:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
                return Err(ConfigError {
                    line,
                    key: Some(key.to_string()),
                    message: "unknown key".into(),
                });
            };
            if let Some(&(_, first)) = seen.iter().find(|(k, _)| *k == known) {
                return Err(ConfigError {
                    line,
                    key: Some(key.to_string()),
                    message: format!("repeated key, first set on line {first}"),
                });
            }
            seen.push((known, line));

            let e = &mut cfg.experiment;
            match known {
                "name" => cfg.name = Some(value.to_string()),
                "method" => e.method = parse_value::<Method>(line, key, value)?,
                "p" => {
                    cfg.p_values = value
                        .split(',')
                        .map(|s| parse_value::<u32>(line, key, s.trim()))
                        .collect::<Result<_, _>>()?;
                    if cfg.p_values.contains(&0) {
                        return Err(ConfigError {
                            line,
                            key: Some(key.to_string()),
                            message: "p must be a positive integer".into(),
                        });
                    }
                }
                "eta0" => e.eta0 = parse_value(line, key, value)?,
                "eta" => e.eta = Some(parse_value(line, key, value)?),
                "devices" => e.devices = parse_value(line, key, value)?,
                "density" => e.density = parse_value(line, key, value)?,
                "iterations" => e.iterations = parse_value(line, key, value)?,
                "window" => e.window = parse_value(line, key, value)?,
                "batch_size" => e.batch_size = parse_value(line, key, value)?,
                "seed" => e.seed = parse_value(line, key, value)?,
                "gradient_point" => e.gradient_point = parse_value::<GradientPoint>(line, key, value)?,
                "init" => {
                    gaussian = match value {
                        "zero" => false,
                        "gaussian" => true,
                        _ => {
                            return Err(ConfigError {
                                line,
                                key: Some(key.to_string()),
                                message: format!("expected zero or gaussian, found {value:?}"),
                            })
                        }
                    }
                }
                "init_sigma" => sigma = parse_value(line, key, value)?,
                "record_diagnostics" => e.record_diagnostics = parse_bool(line, key, value)?,
                "dataset" => dataset = Some((value.to_string(), line)),
                "data_dir" => data_dir = Some(base_dir.join(value)),
                "blobs_train" => b_train = parse_value(line, key, value)?,
                "blobs_test" => b_test = parse_value(line, key, value)?,
                "blobs_dim" => b_dim = parse_value(line, key, value)?,
                "blobs_classes" => b_classes = parse_value(line, key, value)?,
                "blobs_spread" => b_spread = parse_value(line, key, value)?,
                "partition" => cfg.partition = parse_value::<PartitionMode>(line, key, value)?,
                "model" => cfg.model = parse_value::<ModelKind>(line, key, value)?,
                "l2" => cfg.l2 = parse_value(line, key, value)?,
                "target_accuracy" => cfg.target_accuracy = parse_value(line, key, value)?,
                "topology" => cfg.topology = Some(base_dir.join(value)),
                "train_limit" => cfg.train_limit = Some(parse_value(line, key, value)?),
                "test_limit" => cfg.test_limit = Some(parse_value(line, key, value)?),
                "reference_eta" => cfg.reference_eta = parse_value(line, key, value)?,
                "reference_iterations" => cfg.reference_iterations = parse_value(line, key, value)?,
                _ => unreachable!("key list and match arms disagree"),
            }
        }

        cfg.experiment.init = if gaussian { Init::Gaussian { sigma } } else { Init::Zero };
        cfg.dataset = match dataset {
            None => DatasetSource::Blobs {
                train: b_train,
                test: b_test,
                dim: b_dim,
                classes: b_classes,
                spread: b_spread,
            },
            Some((name, _)) if name == "blobs" => DatasetSource::Blobs {
                train: b_train,
                test: b_test,
                dim: b_dim,
                classes: b_classes,
                spread: b_spread,
            },
            Some((name, line)) => {
                let kind = parse_value::<DatasetKind>(line, "dataset", &name)?;
                let dir = data_dir.ok_or_else(|| ConfigError {
                    line,
                    key: Some("data_dir".into()),
                    message: format!("dataset {name} needs data_dir"),
                })?;
                DatasetSource::Files { kind, dir }
            }
        };
        cfg.experiment.p = cfg.p_values[0];
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: 0,
            key: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| {
            Err(ConfigError {
                line: 0,
                key: Some(key.to_string()),
                message: message.to_string(),
            })
        };
        let e = &self.experiment;
        if !(e.eta0 > 0.0 && e.eta0.is_finite()) {
            return bad("eta0", "must be positive and finite");
        }
        if let Some(eta) = e.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad("eta", "must be positive and finite");
            }
        }
        if e.devices == 0 {
            return bad("devices", "must be >= 1");
        }
        if !(e.density > 0.0 && e.density <= 1.0) {
            return bad("density", "must lie in (0, 1]");
        }
        if e.iterations == 0 {
            return bad("iterations", "must be >= 1");
        }
        if e.window == 0 {
            return bad("window", "must be >= 1");
        }
        if e.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if let Init::Gaussian { sigma } = e.init {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad("init_sigma", "must be finite and >= 0");
            }
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy < 1.0) {
            return bad("target_accuracy", "must lie in (0, 1)");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2", "must be finite and >= 0");
        }
        if e.method == Method::SwarmSgd && self.p_values.len() > 1 {
            return bad("p", "swarm-sgd does not take a p sweep");
        }
        Ok(())
    }

    /// Canonical `key=value` echo; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let e = &self.experiment;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        if let Some(name) = &self.name {
            put("name", name.clone());
        }
        put("method", e.method.to_string());
        put(
            "p",
            self.p_values.iter().map(u32::to_string).collect::<Vec<_>>().join(","),
        );
        put("eta0", e.eta0.to_string());
        if let Some(eta) = e.eta {
            put("eta", eta.to_string());
        }
        put("devices", e.devices.to_string());
        put("density", e.density.to_string());
        put("iterations", e.iterations.to_string());
        put("window", e.window.to_string());
        put("batch_size", e.batch_size.to_string());
        put("seed", e.seed.to_string());
        put("gradient_point", e.gradient_point.to_string());
        match e.init {
            Init::Zero => put("init", "zero".into()),
            Init::Gaussian { sigma } => {
                put("init", "gaussian".into());
                put("init_sigma", sigma.to_string());
            }
        }
        put("record_diagnostics", e.record_diagnostics.to_string());
        match &self.dataset {
            DatasetSource::Files { kind, dir } => {
                put("dataset", kind.to_string());
                put("data_dir", dir.display().to_string());
            }
            DatasetSource::Blobs { train, test, dim, classes, spread } => {
                put("dataset", "blobs".into());
                put("blobs_train", train.to_string());
                put("blobs_test", test.to_string());
                put("blobs_dim", dim.to_string());
                put("blobs_classes", classes.to_string());
                put("blobs_spread", spread.to_string());
            }
        }
        put("partition", self.partition.to_string());
        put("model", self.model.to_string());
        put("l2", self.l2.to_string());
        put("target_accuracy", self.target_accuracy.to_string());
        if let Some(t) = &self.topology {
            put("topology", t.display().to_string());
        }
        if let Some(n) = self.train_limit {
            put("train_limit", n.to_string());
        }
        if let Some(n) = self.test_limit {
            put("test_limit", n.to_string());
        }
        put("reference_eta", self.reference_eta.to_string());
        put("reference_iterations", self.reference_iterations.to_string());
        out
    }
}
