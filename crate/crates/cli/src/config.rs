//! Flat dotted-key configuration: one JSON object whose keys look like
//! `model.d`, `train.lr`, or `grid.n_layers`, shared by config files, CLI
//! overrides, and run manifests.
//!
//! Precedence is flags > file > built-in defaults. Unknown keys are
//! rejected so a typo cannot silently fall back to a default.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cohesion_core::model::ModelConfig;
use cohesion_core::train::{GridSpec, TrainConfig};
use serde_json::Value;

pub type FlatConfig = BTreeMap<String, Value>;

fn flatten_into(out: &mut FlatConfig, prefix: &str, v: Value) {
    if let Value::Object(map) = v {
        for (k, val) in map {
            out.insert(format!("{prefix}.{k}"), val);
        }
    }
}

/// Serialize resolved settings back into the flat key space.
pub fn flatten(model: &ModelConfig, train: &TrainConfig) -> Result<FlatConfig> {
    let mut out = FlatConfig::new();
    flatten_into(&mut out, "model", serde_json::to_value(model)?);
    let mut train = train.clone();
    let grid = train.grid.take();
    flatten_into(&mut out, "train", serde_json::to_value(&train)?);
    if let Some(grid) = grid {
        flatten_into(&mut out, "grid", serde_json::to_value(&grid)?);
    }
    Ok(out)
}

fn known_keys() -> Result<std::collections::BTreeSet<String>> {
    let train = TrainConfig { grid: Some(GridSpec::default()), ..TrainConfig::default() };
    let mut keys: std::collections::BTreeSet<String> =
        flatten(&ModelConfig::default(), &train)?.into_keys().collect();
    keys.remove("train.grid");
    Ok(keys)
}

/// Read a config file: either a flat object, or a run manifest whose
/// `config` field holds one (so a manifest can be replayed directly).
pub fn read_config_file(path: &Path) -> Result<FlatConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let obj = match &v {
        Value::Object(m) if m.get("config").is_some_and(Value::is_object) => {
            m["config"].as_object().unwrap().clone()
        }
        Value::Object(m) => m.clone(),
        _ => bail!("config {} is not a JSON object", path.display()),
    };
    Ok(obj.into_iter().collect())
}

/// Merge defaults, an optional config file, and explicit overrides, in
/// ascending precedence, into typed configs.
pub fn resolve(
    file: Option<&Path>,
    overrides: &FlatConfig,
) -> Result<(ModelConfig, TrainConfig)> {
    let mut flat = flatten(&ModelConfig::default(), &TrainConfig::default())?;
    let known = known_keys()?;
    let mut merge = |source: &FlatConfig, origin: &str| -> Result<()> {
        for (k, v) in source {
            if !known.contains(k) {
                bail!("unknown config key '{k}' (from {origin})");
            }
            flat.insert(k.clone(), v.clone());
        }
        Ok(())
    };
    if let Some(path) = file {
        let from_file = read_config_file(path)?;
        merge(&from_file, &path.display().to_string())?;
    }
    merge(overrides, "command line")?;

    let mut model = serde_json::Map::new();
    let mut train = serde_json::Map::new();
    let mut grid = serde_json::Map::new();
    for (k, v) in flat {
        if let Some(rest) = k.strip_prefix("model.") {
            model.insert(rest.to_string(), v);
        } else if let Some(rest) = k.strip_prefix("train.") {
            train.insert(rest.to_string(), v);
        } else if let Some(rest) = k.strip_prefix("grid.") {
            grid.insert(rest.to_string(), v);
        }
    }
    let model: ModelConfig =
        serde_json::from_value(Value::Object(model)).context("model config")?;
    let mut train: TrainConfig =
        serde_json::from_value(Value::Object(train)).context("train config")?;
    if !grid.is_empty() {
        // missing lists fall back to the default sweep
        let defaults = serde_json::to_value(GridSpec::default())?;
        if let Value::Object(d) = defaults {
            for (k, v) in d {
                grid.entry(k).or_insert(v);
            }
        }
        train.grid = Some(serde_json::from_value(Value::Object(grid)).context("grid config")?);
    }
    Ok((model, train))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_flat_keys() {
        let (m, t) = resolve(None, &FlatConfig::new()).unwrap();
        assert_eq!(m.d, ModelConfig::default().d);
        assert_eq!(t.patience, TrainConfig::default().patience);
        assert!(t.grid.is_none());
    }

    #[test]
    fn overrides_beat_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"model.d": 8, "train.lr": 0.5}"#).unwrap();
        let mut over = FlatConfig::new();
        over.insert("train.lr".into(), serde_json::json!(0.25));
        let (m, t) = resolve(Some(&path), &over).unwrap();
        assert_eq!(m.d, 8);
        assert_eq!(t.lr, 0.25);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut over = FlatConfig::new();
        over.insert("model.dd".into(), serde_json::json!(8));
        assert!(resolve(None, &over).is_err());
    }

    #[test]
    fn manifest_files_are_valid_configs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"command": "train", "config": {"model.d": 16}, "created_at": "x"}"#,
        )
        .unwrap();
        let (m, _) = resolve(Some(&path), &FlatConfig::new()).unwrap();
        assert_eq!(m.d, 16);
    }

    #[test]
    fn grid_keys_build_a_grid_spec() {
        let mut over = FlatConfig::new();
        over.insert("grid.lr".into(), serde_json::json!([0.1, 0.01]));
        let (_, t) = resolve(None, &over).unwrap();
        let grid = t.grid.unwrap();
        assert_eq!(grid.lr, vec![0.1, 0.01]);
        assert_eq!(grid.n_layers, GridSpec::default().n_layers);
    }
}
