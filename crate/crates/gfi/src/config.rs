//! Preset → JSON file → `--set key=value` layering for any serializable config.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::io;

/// Applies an optional JSON file and then `key.path=value` overrides on top of `base`.
///
/// Values are parsed as JSON when possible and taken as strings otherwise, so
/// `train.epochs=5`, `train.mode=joint` and `model.latent=[16,4,4]` all work.
pub fn layer<T: Serialize + DeserializeOwned>(base: &T, file: Option<&Path>, sets: &[String]) -> Result<T> {
    let mut v = serde_json::to_value(base).expect("config serializes");
    if let Some(path) = file {
        let patch: Value = io::read_json(path)?;
        merge(&mut v, patch, "")?;
    }
    for s in sets {
        let (key, raw) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("override `{s}` is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
        set(&mut v, key, value)?;
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

// Tagged enums (objects carrying "kind" or "scheme") are replaced whole so a
// patch may switch variants; plain structs only accept keys they already have.
fn is_tagged(m: &serde_json::Map<String, Value>) -> bool {
    m.contains_key("kind") || m.contains_key("scheme")
}

fn merge(base: &mut Value, patch: Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if !is_tagged(b) => {
            for (k, pv) in p {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                if !b.contains_key(&k) {
                    return Err(unknown(&path, b.keys()));
                }
                merge(b.get_mut(&k).expect("checked"), pv, &path)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

fn set(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let mut walked = String::new();
    for part in key.split('.') {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(part);
        cur = match cur {
            Value::Object(m) => {
                let keys: Vec<String> = m.keys().cloned().collect();
                m.get_mut(part).ok_or_else(|| unknown(&walked, keys.iter()))?
            }
            Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| CliError::Usage(format!("`{walked}` needs an array index")))?;
                let n = a.len();
                a.get_mut(i).ok_or_else(|| CliError::Usage(format!("`{walked}` is out of range (length {n})")))?
            }
            _ => return Err(CliError::Usage(format!("`{walked}` does not name a configuration field"))),
        };
    }
    merge(cur, value, key)
}

fn unknown<'a>(path: &str, keys: impl Iterator<Item = &'a String>) -> CliError {
    let known: Vec<&str> = keys.map(String::as_str).collect();
    CliError::Usage(format!("unknown configuration key `{path}` (known here: {})", known.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gfi_core::training::{LossSpec, TrainConfig, TrainMode};

    #[test]
    fn overrides_apply_in_order() {
        let base = TrainConfig::desk(TrainMode::Inverse);
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"epochs": 7, "schedule": {"decay": 0.25}, "loss": {"kind": "elastic", "w_mae": 1.0, "w_mse": 2.0}}"#).unwrap();
        let sets = ["epochs=9".to_string(), "mode=joint".into(), "schedule.step_interval=3".into()];
        let c = layer(&base, Some(&file), &sets).unwrap();
        assert_eq!(c.epochs, 9);
        assert_eq!(c.mode, TrainMode::Joint);
        assert_eq!(c.schedule.decay, 0.25);
        assert_eq!(c.schedule.step_interval, 3);
        assert_eq!(c.loss, LossSpec::Elastic { w_mae: 1.0, w_mse: 2.0 });
        assert_eq!(c.batch_size, base.batch_size);
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        let base = TrainConfig::desk(TrainMode::Inverse);
        for s in ["epoch=3", "epochs", "epochs=-1", "schedule.nope=1", "mode=sideways"] {
            let e = layer(&base, None, &[s.to_string()]).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{s}: {e}");
        }
        let e = layer(&base, None, &["epoch=3".to_string()]).unwrap_err();
        assert!(e.to_string().contains("epochs"));
    }
}
