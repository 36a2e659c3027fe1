//! Flat `key = value` configuration text. `#` starts a comment; blank lines
//! are ignored; every key may appear once.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Feeds each pair to `set`, which returns an error message for unknown
/// keys or bad values. Errors carry the line number.
pub(crate) fn apply(
    text: &str,
    path: &Path,
    mut set: impl FnMut(&str, &str) -> std::result::Result<(), String>,
) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, i + 1, "expected `key = value`"))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::format(path, i + 1, format!("duplicate key {key}")));
        }
        set(key, value.trim()).map_err(|msg| Error::format(path, i + 1, msg))?;
    }
    Ok(())
}

pub(crate) fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?}"))
}
