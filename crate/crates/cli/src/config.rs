//! `--config` handling: a JSON object whose keys are flag names (with
//! underscores). Flags given on the command line win.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub fn load(path: Option<&Path>) -> Result<Map<String, Value>, CliError> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::usage(format!("{} must hold a JSON object", path.display()))),
        Err(e) => Err(CliError::usage(format!("{}: {e}", path.display()))),
    }
}

/// Overlays the flags that were given onto the config values and parses the result.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: &Map<String, Value>) -> Result<T, CliError> {
    let mut merged = config.clone();
    let Value::Object(given) = serde_json::to_value(flags).map_err(|e| CliError::usage(e.to_string()))? else {
        unreachable!("argument structs serialise to objects");
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage(format!("invalid configuration: {e}")))
}

#[cfg(test)]
mod tests {
    use serde::Deserialize;

    use super::*;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Flags {
        steps: Option<u64>,
        out: Option<String>,
    }

    #[test]
    fn flags_override_config() {
        let config: Map<String, Value> = serde_json::from_str(r#"{"steps": 5, "out": "a", "other": 1}"#).unwrap();
        let flags = Flags {
            steps: None,
            out: Some("b".into()),
        };
        assert_eq!(
            merge(&flags, &config).unwrap(),
            Flags {
                steps: Some(5),
                out: Some("b".into())
            }
        );
    }

    #[test]
    fn mistyped_config_is_a_usage_error() {
        let config: Map<String, Value> = serde_json::from_str(r#"{"steps": "many"}"#).unwrap();
        assert!(merge(&Flags::default(), &config).is_err());
    }
}
