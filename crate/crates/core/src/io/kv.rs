//! Flat `key = value` text used for run configuration files and the
//! configuration block embedded in checkpoints.

use crate::error::{Result, RtfnError};

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped. Repeated keys are rejected.
pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (k, v) = trimmed.split_once('=').ok_or_else(|| {
            RtfnError::Config(format!("line {line}: expected `key = value`, got {trimmed:?}"))
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(RtfnError::Config(format!("line {line}: empty key")));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(RtfnError::Config(format!("line {line}: duplicate key {key}")));
        }
        out.push(Entry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

pub(crate) fn bad_value(key: &str, value: &str, expected: &str) -> RtfnError {
    RtfnError::Config(format!("{key}: expected {expected}, got {value:?}"))
}

pub(crate) fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| bad_value(key, value, "a non-negative integer"))
}

pub(crate) fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| bad_value(key, value, "a 64-bit unsigned integer"))
}

pub(crate) fn parse_f64(key: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(bad_value(key, value, "a finite number")),
    }
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad_value(key, value, "true or false")),
    }
}

pub(crate) fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|p| parse_usize(key, p.trim()))
        .collect()
}

pub(crate) fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
