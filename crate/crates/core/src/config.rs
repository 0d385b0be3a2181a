//! Run configuration resolved from a TOML file, `SEGKIT_*` environment
//! variables and command-line flags, in increasing order of precedence.
//!
//! Every key of [`RunConfig`] may appear in the file; the environment
//! variable for a key is `SEGKIT_` followed by the key in upper case (e.g.
//! `SEGKIT_TOLERANCE_MM=3`). List values in the environment are comma or
//! space separated. In strict mode (the default) an unknown file key is an
//! error naming the key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::metrics::{EmptyPolicy, EvalConfig, VolumeUnit};
use crate::selection::{MetricWeights, Normalization, DEFAULT_BUDGET};
use crate::volume::LabelSet;

pub const ENV_PREFIX: &str = "SEGKIT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub label_id: u16,
    pub tolerance_mm: f64,
    pub empty_policy: EmptyPolicy,
    pub volume_unit: VolumeUnit,
    /// Label values accepted when reading label maps.
    pub labels: Vec<u16>,
    pub seed: u64,
    pub jobs: usize,
    /// Target spacing for `resample`, mm.
    pub spacing: [f64; 3],
    pub image_order: u8,
    pub label_order: u8,
    pub norm: Normalization,
    /// Dice, surface dice, MASD, HD95, volume RMSE.
    pub metric_weights: [f64; 5],
    pub budget: u64,
    /// Ranked subsets kept in the selection output.
    pub top_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        RunConfig {
            label_id: eval.label_id,
            tolerance_mm: eval.tolerance_mm,
            empty_policy: eval.empty_policy,
            volume_unit: eval.volume_unit,
            labels: vec![0, 1, 2],
            seed: 0,
            jobs: 1,
            spacing: [1.0; 3],
            image_order: 1,
            label_order: 0,
            norm: Normalization::Minmax,
            metric_weights: MetricWeights::default().0,
            budget: DEFAULT_BUDGET as u64,
            top_n: 10,
        }
    }
}

impl RunConfig {
    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            label_id: self.label_id,
            tolerance_mm: self.tolerance_mm,
            empty_policy: self.empty_policy,
            volume_unit: self.volume_unit,
        }
    }

    pub fn label_set(&self) -> LabelSet {
        LabelSet::new(self.labels.iter().copied())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_mm >= 0.0 && self.tolerance_mm.is_finite()) {
            return Err(Error::Config(format!("tolerance_mm must be >= 0, got {}", self.tolerance_mm)));
        }
        if self.labels.is_empty() {
            return Err(Error::Config("labels must not be empty".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if self.spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("spacing must be positive, got {:?}", self.spacing)));
        }
        MetricWeights(self.metric_weights).validate()
    }

    fn keys() -> Table {
        Table::try_from(RunConfig::default()).expect("config serializes")
    }
}

fn parse_scalar(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Converts `SEGKIT_*` variables into config entries.
fn env_table(env: impl IntoIterator<Item = (String, String)>, defaults: &Table) -> Table {
    let mut out = Table::new();
    for (k, v) in env {
        let Some(key) = k.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let key = key.to_ascii_lowercase();
        let Some(default) = defaults.get(&key) else {
            continue;
        };
        let value = if default.is_array() && !v.trim_start().starts_with('[') {
            Value::Array(
                v.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(parse_scalar)
                    .collect(),
            )
        } else {
            parse_scalar(&v)
        };
        out.insert(key, value);
    }
    out
}

/// Resolves defaults < file < environment < flags. `flags` holds only the
/// keys given on the command line.
pub fn resolve_config(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    flags: Table,
    strict: bool,
) -> Result<RunConfig> {
    let mut merged = RunConfig::keys();
    let defaults = merged.clone();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (k, v) in table {
            if !defaults.contains_key(&k) {
                if strict {
                    return Err(Error::Config(format!("unknown config key `{k}`")));
                }
                continue;
            }
            merged.insert(k, v);
        }
    }
    merged.extend(env_table(env, &defaults));
    merged.extend(flags);
    let cfg: RunConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// File plus process environment, strict mode.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    resolve_config(Some(path.as_ref()), std::env::vars(), Table::new(), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let f = file("");
        let cfg = resolve_config(Some(f.path()), no_env(), Table::new(), true).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.label_id, 2);
        assert_eq!(cfg.tolerance_mm, 5.0);
        assert_eq!(cfg.spacing, [1.0; 3]);
    }

    #[test]
    fn precedence() {
        let f = file("tolerance_mm = 3.0\nseed = 4\nlabel_id = 1\n");
        let env = vec![
            ("SEGKIT_SEED".to_string(), "9".to_string()),
            ("SEGKIT_LABEL_ID".to_string(), "3".to_string()),
            ("SEGKIT_LABELS".to_string(), "0,1,2,3".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let mut flags = Table::new();
        flags.insert("tolerance_mm".into(), Value::Float(5.0));
        flags.insert("label_id".into(), Value::Integer(2));
        let cfg = resolve_config(Some(f.path()), env, flags, true).unwrap();
        assert_eq!(cfg.tolerance_mm, 5.0);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.label_id, 2);
        assert_eq!(cfg.labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn env_enum_and_list_values() {
        let env = vec![
            ("SEGKIT_EMPTY_POLICY".to_string(), "exclude".to_string()),
            ("SEGKIT_SPACING".to_string(), "0.5 0.5 2".to_string()),
            ("SEGKIT_NORM".to_string(), "rank".to_string()),
        ];
        let cfg = resolve_config(None, env, Table::new(), true).unwrap();
        assert_eq!(cfg.empty_policy, EmptyPolicy::Exclude);
        assert_eq!(cfg.spacing, [0.5, 0.5, 2.0]);
        assert_eq!(cfg.norm, Normalization::Rank);
    }

    #[test]
    fn strict_unknown_key() {
        let f = file("tolerance = 3.0\n");
        let err = resolve_config(Some(f.path()), no_env(), Table::new(), true).unwrap_err();
        assert!(err.to_string().contains("`tolerance`"));
        let cfg = resolve_config(Some(f.path()), no_env(), Table::new(), false).unwrap();
        assert_eq!(cfg.tolerance_mm, 5.0);
    }

    #[test]
    fn type_mismatch() {
        let f = file("tolerance_mm = \"wide\"\n");
        assert!(matches!(
            resolve_config(Some(f.path()), no_env(), Table::new(), true),
            Err(Error::Config(_))
        ));
        let f = file("metric_weights = [0.5, 0.5, 0.5, 0.0, 0.0]\n");
        assert!(resolve_config(Some(f.path()), no_env(), Table::new(), true).is_err());
    }

    #[test]
    fn missing_file_is_io() {
        let err = resolve_config(Some(Path::new("/nonexistent/cfg.toml")), no_env(), Table::new(), true)
            .unwrap_err();
        assert!(err.is_io());
    }
}
