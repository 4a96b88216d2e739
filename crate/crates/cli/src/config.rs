//! Experiment configuration as flat `key=value` pairs. Defaults, a config
//! file and command-line flags are layered in that order; the merged pairs
//! are the canonical form that gets hashed into every report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pfld::data::SynthConfig;
use pfld::{FairnessNotion, PrivacyConfig, SensitivityMode, SplitPolicy, TrainerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid value {value:?} for {key}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Every recognised key with its default. An empty default means unset.
pub const KEYS: &[(&str, &str)] = &[
    ("data", ""),
    ("schema", ""),
    ("synthetic-n", "2000"),
    ("synthetic-d", "6"),
    ("groups", "2"),
    ("bias", "0.4"),
    ("group-shares", ""),
    ("model", "pfld"),
    ("epochs", "100"),
    ("batch", "128"),
    ("lr", "0.01"),
    ("dual-step", "0.01"),
    ("lambda-max", "1"),
    ("hidden", "16,16"),
    ("fairness", "dp"),
    ("seed", "0"),
    ("cp", "10"),
    ("cd", "5"),
    ("sigma-p", "1"),
    ("sigma-d", "1"),
    ("epsilon", ""),
    ("delta", "1e-5"),
    ("reported-fraction", "1"),
    ("dual-ratio", "1"),
    ("sensitivity-mode", "realized"),
    ("folds", "5"),
    ("repetitions", "10"),
    ("axis", ""),
    ("values", ""),
    ("out", "pfld-out"),
];

/// Merged key/value pairs, always holding every key in [`KEYS`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settings(BTreeMap<String, String>);

impl Default for Settings {
    fn default() -> Self {
        Self(KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let slot = self.0.get_mut(key).ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
        *slot = value.into();
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or("")
    }

    /// True when the key holds something other than its default.
    pub fn is_overridden(&self, key: &str) -> bool {
        KEYS.iter().any(|(k, d)| *k == key && self.get(key) != *d)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let key = k.trim().trim_start_matches("--");
            self.set(key, v.trim()).map_err(|e| ConfigError::Syntax {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Canonical `key=value` text, one pair per line in key order.
    pub fn to_text(&self) -> String {
        self.pairs().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Settings::to_text`], leaving out
    /// the output directory so relocated reruns share a hash.
    pub fn hash(&self) -> String {
        let text: String = self.pairs().filter(|(k, _)| *k != "out").map(|(k, v)| format!("{k}={v}\n")).collect();
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let value = self.get(key);
        value.parse().map_err(|e: T::Err| ConfigError::Value {
            key: key.into(),
            value: value.into(),
            reason: e.to_string(),
        })
    }

    fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        if self.get(key).is_empty() {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let value = self.get(key);
        if value.is_empty() {
            return Ok(Vec::new());
        }
        value
            .split(',')
            .map(|p| {
                p.trim().parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.into(),
                    value: value.into(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Unconstrained classifier.
    Clf,
    Fld,
    Pfld,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Clf => "clf",
            ModelKind::Fld => "fld",
            ModelKind::Pfld => "pfld",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "clf" => Ok(ModelKind::Clf),
            "fld" | "f-ld" => Ok(ModelKind::Fld),
            "pfld" | "pf-ld" => Ok(ModelKind::Pfld),
            other => Err(format!("unknown model {other:?} (expected clf, fld or pfld)")),
        }
    }
}

/// Parameter varied across sweep points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Epsilon,
    Cp,
    Cd,
    /// Reported fraction of the protected attribute.
    R,
    LambdaMax,
    Sigma,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Cp => "cp",
            SweepAxis::Cd => "cd",
            SweepAxis::R => "r",
            SweepAxis::LambdaMax => "lambda-max",
            SweepAxis::Sigma => "sigma",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "epsilon" | "eps" => Ok(SweepAxis::Epsilon),
            "cp" => Ok(SweepAxis::Cp),
            "cd" => Ok(SweepAxis::Cd),
            "r" | "reported-fraction" => Ok(SweepAxis::R),
            "lambda-max" => Ok(SweepAxis::LambdaMax),
            "sigma" => Ok(SweepAxis::Sigma),
            other => Err(format!("unknown sweep axis {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Csv { path: PathBuf, schema: PathBuf },
}

/// Fully typed experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub models: Vec<ModelKind>,
    pub trainer: TrainerConfig,
    pub privacy: PrivacyConfig,
    /// Target epsilon; when set, noise multipliers are calibrated.
    pub epsilon: Option<f64>,
    pub split: SplitPolicy,
    pub folds: usize,
    pub repetitions: usize,
    pub sweep: Option<(SweepAxis, Vec<f64>)>,
    pub out: PathBuf,
    pub seed: u64,
    pub settings: Settings,
}

impl ExperimentConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let dataset = match (s.get("data"), s.get("schema")) {
            ("", "") => {
                let shares: Vec<f64> = s.parse_list("group-shares")?;
                let mut cfg = SynthConfig::new(s.parse("synthetic-n")?, s.parse("synthetic-d")?, s.parse("groups")?, s.parse("bias")?);
                cfg.group_shares = (!shares.is_empty()).then_some(shares);
                DatasetSource::Synthetic(cfg)
            }
            ("", _) => return invalid("schema given without data".into()),
            (_, "") => return invalid("data requires a schema file".into()),
            (d, sc) => DatasetSource::Csv {
                path: d.into(),
                schema: sc.into(),
            },
        };
        let models: Vec<ModelKind> = s.parse_list("model")?;
        if models.is_empty() {
            return invalid("at least one model is required".into());
        }
        let hidden: Vec<usize> = s.parse_list("hidden")?;
        let [h1, h2] = hidden[..] else {
            return invalid(format!("hidden needs two widths, got {:?}", s.get("hidden")));
        };
        let seed: u64 = s.parse("seed")?;
        let trainer = TrainerConfig {
            epochs: s.parse("epochs")?,
            batch_size: s.parse("batch")?,
            lr: s.parse("lr")?,
            dual_step: s.parse("dual-step")?,
            lambda_max: s.parse("lambda-max")?,
            notion: s.parse::<FairnessNotion>("fairness")?,
            hidden: (h1, h2),
            seed,
        };
        let mode = match s.get("sensitivity-mode") {
            "realized" => SensitivityMode::Realized,
            "bounded" => SensitivityMode::Bounded,
            other => return invalid(format!("unknown sensitivity mode {other:?}")),
        };
        let privacy = PrivacyConfig {
            grad_clip: s.parse("cp")?,
            value_clip: s.parse("cd")?,
            sigma_p: s.parse("sigma-p")?,
            sigma_d: s.parse("sigma-d")?,
            reported_fraction: s.parse("reported-fraction")?,
            delta: s.parse("delta")?,
            mode,
        };
        privacy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let ratio: f64 = s.parse("dual-ratio")?;
        let split = if ratio == 1.0 { SplitPolicy::Shared } else { SplitPolicy::DualRatio(ratio) };
        let epsilon = s.parse_opt::<f64>("epsilon")?;
        if let Some(e) = epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return invalid(format!("epsilon {e} must be finite and positive"));
            }
        }
        let sweep = match s.parse_opt::<SweepAxis>("axis")? {
            None => None,
            Some(axis) => {
                let values: Vec<f64> = s.parse_list("values")?;
                if values.is_empty() {
                    return invalid(format!("sweep over {} needs values", axis.name()));
                }
                Some((axis, values))
            }
        };
        let folds: usize = s.parse("folds")?;
        let repetitions: usize = s.parse("repetitions")?;
        if folds == 0 || repetitions == 0 {
            return invalid("folds and repetitions must be at least 1".into());
        }
        Ok(Self {
            dataset,
            models,
            trainer,
            privacy,
            epsilon,
            split,
            folds,
            repetitions,
            sweep,
            out: s.get("out").into(),
            seed,
            settings: s.clone(),
        })
    }

    pub fn hash(&self) -> String {
        self.settings.hash()
    }
}
