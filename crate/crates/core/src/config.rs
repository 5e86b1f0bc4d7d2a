//! Experiment configuration files (TOML or JSON, chosen by extension).
//!
//! Keys are checked against a fixed schema before deserialization so that a
//! misspelt key is a hard error with a suggestion rather than a silently
//! ignored default.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::blind_rb::{ConfigValueError, ExperimentConfig, MeasurementMode};
use crate::calibration::{ScanSettings, FIT_POINTS};
use crate::fitting::{BlindFitOptions, Weighting};

/// Allowed keys. A nested table is listed as `name` followed by its own
/// schema.
enum Schema {
    Leaf,
    Table(&'static [(&'static str, Schema)]),
}

use Schema::{Leaf, Table};

const NOISE_KEYS: &[(&str, Schema)] = &[
    ("sigma_b", Leaf),
    ("uniform_b", Leaf),
    ("overrotation", Table(&[("12", Leaf), ("23", Leaf)])),
    ("pulse_duration", Leaf),
    ("idle_duration", Leaf),
    ("z_only", Leaf),
    ("charge_jitter", Leaf),
    ("redraw", Leaf),
];

const ROOT_KEYS: &[(&str, Schema)] = &[
    ("lengths", Leaf),
    ("K", Leaf),
    ("sequences_per_length", Leaf),
    ("N", Leaf),
    ("shots_per_sequence", Leaf),
    ("seed", Leaf),
    ("measurement_mode", Leaf),
    ("pairing", Leaf),
    ("noise", Table(NOISE_KEYS)),
    ("readout", Table(&[("visibility", Leaf), ("offset", Leaf)])),
    (
        "calibration",
        Table(&[
            ("theta_min", Leaf),
            ("theta_max", Leaf),
            ("points", Leaf),
            ("repeats", Leaf),
            ("shots", Leaf),
            ("measurement_mode", Leaf),
        ]),
    ),
    ("sweep", Table(&[("epsilons", Leaf), ("bootstrap", Leaf)])),
    ("fit", Table(&[("weighting", Leaf), ("d_offset", Leaf)])),
];

const SECTIONS: [&str; 3] = ["calibration", "sweep", "fit"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unsupported config extension {0:?} (expected .toml or .json)")]
    Extension(String),
    #[error("{format} syntax error: {message}")]
    Syntax { format: &'static str, message: String },
    #[error("unknown key `{key}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey { key: String, suggestion: Option<String> },
    #[error("`{field}` is given twice (once through its short alias)")]
    Duplicate { field: String },
    #[error("invalid value for `{field}`: {message}")]
    Type { field: String, message: String },
    #[error(transparent)]
    Value(#[from] ConfigValueError),
}

impl ConfigError {
    /// Dotted path of the offending field, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. } => Some(key),
            ConfigError::Duplicate { field } | ConfigError::Type { field, .. } => Some(field),
            ConfigError::Value(e) => Some(&e.field),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub theta_min: f64,
    pub theta_max: f64,
    pub points: usize,
    pub repeats: Vec<usize>,
    pub shots: usize,
    pub measurement_mode: MeasurementMode,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            theta_min: 0.05,
            theta_max: 2.0 * PI - 0.05,
            points: 401,
            repeats: vec![1, 3, 5],
            shots: 1,
            measurement_mode: MeasurementMode::Analytic,
        }
    }
}

impl CalibrationSection {
    pub fn settings(&self, seed: u64) -> ScanSettings {
        ScanSettings {
            theta_grid: ScanSettings::uniform_grid(self.theta_min, self.theta_max, self.points),
            repeats: self.repeats.clone(),
            shots: self.shots,
            measurement_mode: self.measurement_mode,
            seed,
        }
    }

    fn validate(&self) -> Result<(), ConfigValueError> {
        let err = |field: &str, message: &str| {
            Err(ConfigValueError {
                field: format!("calibration.{field}"),
                message: message.into(),
            })
        };
        if !(self.theta_min.is_finite() && self.theta_max.is_finite() && self.theta_min < self.theta_max) {
            return err("theta_max", "need finite theta_min < theta_max");
        }
        if self.points < FIT_POINTS {
            return err("points", "need at least 5 grid points");
        }
        if self.repeats.is_empty() || self.repeats.contains(&0) {
            return err("repeats", "must be a non-empty list of counts >= 1");
        }
        if self.shots == 0 {
            return err("shots", "must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    /// Bootstrap resamples per point; 0 disables intervals.
    pub bootstrap: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            epsilons: vec![0.01, 0.02, 0.04, 0.08],
            bootstrap: 0,
        }
    }
}

/// A parsed and validated config file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigFile {
    pub experiment: ExperimentConfig,
    pub calibration: CalibrationSection,
    pub sweep: SweepSection,
    pub fit: BlindFitOptions,
}

fn closest<'a>(key: &str, candidates: impl Iterator<Item = &'a str>) -> Option<String> {
    candidates
        .map(|c| (strsim::levenshtein(&key.to_lowercase(), &c.to_lowercase()), c))
        .filter(|&(d, c)| d <= 2.max(c.len() / 3))
        .min_by_key(|&(d, _)| d)
        .map(|(_, c)| c.to_string())
}

fn all_paths(schema: &[(&str, Schema)], prefix: &str, out: &mut Vec<String>) {
    for (name, sub) in schema {
        let path = format!("{prefix}{name}");
        if let Table(inner) = sub {
            all_paths(inner, &format!("{path}."), out);
        }
        out.push(path);
    }
}

/// Suggests a key that exists elsewhere in the schema, e.g. `noise.sigma_b`
/// for a top-level `sigmab`.
fn misplaced(key: &str) -> Option<String> {
    let mut paths = Vec::new();
    all_paths(ROOT_KEYS, "", &mut paths);
    let leaf = closest(key, paths.iter().map(|p| p.rsplit('.').next().unwrap_or(p)))?;
    paths.into_iter().find(|p| p.rsplit('.').next() == Some(leaf.as_str()))
}

fn check_keys(table: &Map<String, Value>, schema: &[(&str, Schema)], prefix: &str) -> Result<(), ConfigError> {
    for (key, value) in table {
        let path = format!("{prefix}{key}");
        match schema.iter().find(|(name, _)| name == key) {
            None => {
                let suggestion = closest(key, schema.iter().map(|(n, _)| *n))
                    .map(|s| format!("{prefix}{s}"))
                    .or_else(|| misplaced(key));
                return Err(ConfigError::UnknownKey { key: path, suggestion });
            }
            Some((_, Table(inner))) => {
                if let Value::Object(sub) = value {
                    check_keys(sub, inner, &format!("{path}."))?;
                }
            }
            Some((_, Leaf)) => {}
        }
    }
    for (short, long) in [("K", "sequences_per_length"), ("N", "shots_per_sequence")] {
        if prefix.is_empty() && table.contains_key(short) && table.contains_key(long) {
            return Err(ConfigError::Duplicate { field: long.into() });
        }
    }
    Ok(())
}

fn typed<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let field = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        ConfigError::Type {
            field,
            message: e.into_inner().to_string(),
        }
    })
}

/// Parses config text already converted to a JSON value.
pub fn config_from_value(value: Value) -> Result<ConfigFile, ConfigError> {
    let Value::Object(mut root) = value else {
        return Err(ConfigError::Type {
            field: ".".into(),
            message: "top level must be a table".into(),
        });
    };
    check_keys(&root, ROOT_KEYS, "")?;
    let mut sections: [Value; 3] = Default::default();
    for (slot, name) in sections.iter_mut().zip(SECTIONS) {
        *slot = root.remove(name).unwrap_or_else(|| Value::Object(Map::new()));
    }
    let [calibration, sweep, fit] = sections;
    let experiment: ExperimentConfig = typed(Value::Object(root), "")?;
    experiment.validate()?;
    let calibration: CalibrationSection = typed(calibration, "calibration")?;
    calibration.validate()?;
    let sweep: SweepSection = typed(sweep, "sweep")?;
    let fit: FitSection = typed(fit, "fit")?;
    Ok(ConfigFile {
        experiment,
        calibration,
        sweep,
        fit: BlindFitOptions {
            weighting: fit.weighting,
            d_offset: fit.d_offset,
        },
    })
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct FitSection {
    weighting: Weighting,
    d_offset: bool,
}

pub fn parse_config_str(text: &str, format: ConfigFormat) -> Result<ConfigFile, ConfigError> {
    let value: Value = match format {
        ConfigFormat::Toml => {
            let t: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Syntax {
                format: "TOML",
                message: e.message().to_string(),
            })?;
            serde_json::to_value(t).map_err(|e| ConfigError::Syntax {
                format: "TOML",
                message: e.to_string(),
            })?
        }
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            format: "JSON",
            message: e.to_string(),
        })?,
    };
    config_from_value(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("toml") => Ok(ConfigFormat::Toml),
            Some("json") => Ok(ConfigFormat::Json),
            other => Err(ConfigError::Extension(other.unwrap_or("").to_string())),
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ConfigFile, ConfigError> {
    let format = ConfigFormat::from_path(path)?;
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, format)
}
