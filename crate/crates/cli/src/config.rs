use funnel_hoi::{Error, Result};
use serde_json::Value;
use std::path::Path;

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn unknown(field: String) -> Error {
    Error::Config {
        field,
        reason: "unknown field".into(),
    }
}

/// Overlays `patch` on `base`. Every key in `patch` must already exist in
/// `base`, so typos surface as config errors instead of being ignored.
fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = join(path, &k);
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(unknown(sub)),
                }
            }
            Ok(())
        }
        (slot, p) => {
            *slot = p;
            Ok(())
        }
    }
}

/// `a.b.c=value`. The value is read as JSON when it parses, else as a string.
fn apply_set(base: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Usage(format!("--set expects KEY=VALUE, got `{assignment}`"))
    })?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Usage(format!("--set has an empty key in `{assignment}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut *base;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| unknown(key.to_string()))?;
    }
    merge(slot, value, key)
}

/// Defaults, then the optional JSON file, then each `--set` in order.
pub fn resolve<T>(defaults: &T, file: Option<&Path>, sets: &[String]) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(defaults).map_err(|e| Error::Usage(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let patch: Value = serde_json::from_str(&text).map_err(|e| Error::Config {
            field: path.display().to_string(),
            reason: e.to_string(),
        })?;
        merge(&mut value, patch, "")?;
    }
    for s in sets {
        apply_set(&mut value, s)?;
    }
    serde_path_to_error::deserialize(value).map_err(|e| Error::Config {
        field: e.path().to_string(),
        reason: e.into_inner().to_string(),
    })
}
