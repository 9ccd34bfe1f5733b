//! `key = value` configuration text with `#` comments.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::RtsnConfig;
use crate::trainer::TrainConfig;

/// One `key = value` entry with its 1-based line number.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_key_values(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected `key = value`, found {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config {
                line,
                msg: format!("expected `key = value`, found {content:?}"),
            });
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

pub(crate) fn parse_value<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| Error::Config {
        line: e.line,
        msg: format!("invalid value {:?} for {}", e.value, e.key),
    })
}

/// Model and training settings read from one file; unknown keys are errors.
pub fn parse_run_config(text: &str) -> Result<(RtsnConfig, TrainConfig)> {
    let mut model = RtsnConfig::default();
    let mut train = TrainConfig::default();
    for e in parse_key_values(text)? {
        if !model.set(&e)? && !train.set(&e)? {
            return Err(Error::Config {
                line: e.line,
                msg: format!("unknown key {:?}", e.key),
            });
        }
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

pub fn load_run_config(path: &Path) -> Result<(RtsnConfig, TrainConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run_config(&text)
}
