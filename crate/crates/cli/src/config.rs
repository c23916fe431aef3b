//! Run configuration: a TOML file with `[embedding]`, `[train]`,
//! `[transfer]`, `[eval]` and `[synth]` sections, plus `key=value`
//! overrides on the command line.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use reid_core::data::{Split, SyntheticConfig};
use reid_core::embedding::EmbeddingConfig;
use reid_core::eval::EvalMode;
use reid_core::preproc::DEFAULT_OFFSET;
use reid_core::sequence::Attention;
use reid_core::train::TrainConfig;
use reid_core::transfer::{Method, Treatment, DEFAULT_SLOW_MULTIPLIER};
use reid_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    /// Bottom groups handled per `treatment` in `transfer`.
    pub k: usize,
    pub treatment: Treatment,
    pub method: Method,
    pub slow_multiplier: f64,
    /// Sweep points of `ablate`.
    pub k_values: Vec<usize>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection {
            k: 3,
            treatment: Treatment::Frozen,
            method: Method::SplitRate,
            slow_multiplier: DEFAULT_SLOW_MULTIPLIER,
            k_values: (0..=4).collect(),
            methods: vec![Method::SplitRate, Method::Baseline],
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mode: EvalMode,
    pub attention: Attention,
    /// LSTM history window at evaluation time.
    pub history: usize,
    pub split: Split,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            mode: EvalMode::MultiShot,
            attention: Attention::Rta,
            history: 3,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Offset `t_o` of the depth-to-gray mapping.
    pub depth_offset: u16,
    pub embedding: EmbeddingConfig,
    pub train: TrainConfig,
    pub transfer: TransferSection,
    pub eval: EvalSection,
    pub synth: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            depth_offset: DEFAULT_OFFSET,
            embedding: EmbeddingConfig::default(),
            train: TrainConfig::default(),
            transfer: TransferSection::default(),
            eval: EvalSection::default(),
            synth: SyntheticConfig::default(),
        }
    }
}

const SECTIONS: [&str; 5] = ["embedding", "train", "transfer", "eval", "synth"];

fn parse_value(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Set a dotted key such as `train.rho` to a TOML literal (bare words are
/// taken as strings).
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a section")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Deserialize `section` one key at a time on top of its defaults, so the
/// first offending key can be named.
fn section<T: Serialize + DeserializeOwned + Default>(name: &str, user: Option<&Value>, extra_keys: &[&str]) -> Result<T> {
    let Some(user) = user else {
        return Ok(T::default());
    };
    let user = user
        .as_table()
        .ok_or_else(|| Error::config(name, "must be a section"))?;
    let mut merged = Table::try_from(T::default()).map_err(|e| Error::config(name, e.to_string()))?;
    for (key, value) in user {
        let full = format!("{name}.{key}");
        if !merged.contains_key(key) && !extra_keys.contains(&key.as_str()) {
            return Err(Error::config(full, "unknown key"));
        }
        merged.insert(key.clone(), value.clone());
        merged
            .clone()
            .try_into::<T>()
            .map_err(|e| Error::config(&full, e.message().trim().to_string()))?;
    }
    merged.try_into::<T>().map_err(|e| Error::config(name, e.to_string()))
}

impl RunConfig {
    /// Load `path` (if any), apply `overrides` in order, and validate.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                text.parse::<Table>()
                    .map_err(|e| Error::config(p.display().to_string(), e.message().trim().to_string()))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg = RunConfig::default();
        for (key, value) in &table {
            match key.as_str() {
                "seed" => {
                    cfg.seed = value
                        .as_integer()
                        .and_then(|v| u64::try_from(v).ok())
                        .ok_or_else(|| Error::config("seed", "must be a non-negative integer"))?
                }
                "depth_offset" => {
                    cfg.depth_offset = value
                        .as_integer()
                        .and_then(|v| u16::try_from(v).ok())
                        .filter(|&v| v <= 254)
                        .ok_or_else(|| Error::config("depth_offset", "must be an integer in [0, 254]"))?
                }
                k if SECTIONS.contains(&k) => {}
                other => return Err(Error::config(other, "unknown key or section")),
            }
        }
        cfg.embedding = section("embedding", table.get("embedding"), &[])?;
        cfg.train = section("train", table.get("train"), &[])?;
        cfg.transfer = section("transfer", table.get("transfer"), &[])?;
        cfg.eval = section("eval", table.get("eval"), &[])?;
        cfg.synth = section("synth", table.get("synth"), &["shapes"])?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.eval.history == 0 {
            return Err(Error::config("eval.history", "must be >= 1"));
        }
        let s = self.transfer.slow_multiplier;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::config("transfer.slow_multiplier", format!("{s} outside (0, 1)")));
        }
        if self.transfer.seeds.is_empty() {
            return Err(Error::config("transfer.seeds", "must not be empty"));
        }
        if self.transfer.methods.is_empty() {
            return Err(Error::config("transfer.methods", "must not be empty"));
        }
        let groups = self.embedding.group_names().len();
        if let Some(k) = std::iter::once(self.transfer.k)
            .chain(self.transfer.k_values.iter().copied())
            .find(|&k| k > groups)
        {
            return Err(Error::config("transfer.k", format!("{k} exceeds the {groups} layer groups")));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("resolved config", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        assert_eq!(RunConfig::resolve(Some(&path), &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_win() {
        let cfg = RunConfig::resolve(
            None,
            &["train.rho=5".into(), "eval.attention=uniform".into(), "transfer.k_values=[0,1]".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.rho, 5);
        assert_eq!(cfg.eval.attention, Attention::Uniform);
        assert_eq!(cfg.transfer.k_values, vec![0, 1]);
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::resolve(None, &["train.rhoo=3".into()]).unwrap_err();
        assert!(err.to_string().contains("train.rhoo"), "{err}");
        let err = RunConfig::resolve(None, &["train.rho=\"x\"".into()]).unwrap_err();
        assert!(err.to_string().contains("train.rho"), "{err}");
        let err = RunConfig::resolve(None, &["train.rho=0".into()]).unwrap_err();
        assert!(err.to_string().contains("train.rho"), "{err}");
        let err = RunConfig::resolve(None, &["synth.classes=1".into()]).unwrap_err();
        assert!(err.to_string().contains("synth.classes"), "{err}");
        let err = RunConfig::resolve(None, &["bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }
}
