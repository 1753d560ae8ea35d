//! Flat `key = value` configuration files.
//!
//! Keys are the field names of [`TrainConfig`]; absent keys keep their
//! defaults. `#` starts a comment. `lambda` takes three comma-separated
//! numbers, optionally bracketed.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{Map, Value};
use storyline_core::gan::TrainConfig;

use crate::{Error, Result};

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let defaults = match serde_json::to_value(TrainConfig::default()).expect("serializable config")
    {
        Value::Object(m) => m,
        _ => unreachable!("config serializes to an object"),
    };
    let mut fields = defaults.clone();
    let mut seen = Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, got {body:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let Some(default) = defaults.get(key) else {
            return Err(Error::Parse {
                line,
                msg: format!("unknown config key {key:?}"),
            });
        };
        if seen.insert(key.to_string(), Value::Null).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("config key {key:?} given twice"),
            });
        }
        let parsed = if default.is_array() {
            let inner = value.trim_start_matches('[').trim_end_matches(']');
            serde_json::from_str(&format!("[{inner}]"))
        } else {
            serde_json::from_str(value)
        }
        .map_err(|e| Error::Parse {
            line,
            msg: format!("bad value for {key}: {e}"),
        })?;
        fields.insert(key.to_string(), parsed);
    }
    let cfg: TrainConfig =
        serde_json::from_value(Value::Object(fields)).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("config: {e}"),
        })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Renders every field, one per line, in a form [`parse_config`] reads back.
pub fn render_config(cfg: &TrainConfig) -> String {
    let Value::Object(m) = serde_json::to_value(cfg).expect("serializable config") else {
        unreachable!("config serializes to an object")
    };
    let mut out = String::new();
    for (k, v) in m {
        let v = match v {
            Value::Array(items) => items
                .iter()
                .map(Value::to_string)
                .collect::<Vec<_>>()
                .join(", "),
            v => v.to_string(),
        };
        writeln!(out, "{k} = {v}").unwrap();
    }
    out
}

pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(
            parse_config("# nothing\n\n").unwrap(),
            TrainConfig::default()
        );
    }

    #[test]
    fn lambda_forms() {
        let a = parse_config("lambda = 1, 0, 0").unwrap();
        let b = parse_config("lambda = [1.0, 0.0, 0.0]  # text only").unwrap();
        assert_eq!(a.lambda, [1.0, 0.0, 0.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_lines() {
        for text in [
            "rounds",
            "round = 3",
            "rounds = -1",
            "rounds = 2.5",
            "rounds = 1\nrounds = 2",
            "lambda = 1, 2",
        ] {
            assert!(parse_config(text).is_err(), "{text}");
        }
        assert!(matches!(parse_config("length = 2"), Err(Error::Core(_))));
    }
}
