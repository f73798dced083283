//! Flat `key = value` settings files with flag overrides.

use std::path::Path;

use anyhow::{Context, Result};
use lim_detector::parse_key_values;

/// A settings struct that can be filled from `key = value` pairs.
pub trait Settings: Default {
    const KEYS: &'static [&'static str];

    /// Applies one pair; `key` is always one of [`Settings::KEYS`].
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
}

/// Parses a settings text on top of the defaults; unknown keys are rejected.
pub fn parse_settings<S: Settings>(text: &str) -> Result<S> {
    let mut s = S::default();
    for (k, v) in parse_key_values(text, S::KEYS)? {
        s.set(&k, &v).with_context(|| format!("invalid value {v:?} for {k}"))?;
    }
    Ok(s)
}

/// Defaults, or the file's contents when a path is given.
pub fn load_settings<S: Settings>(path: Option<&Path>) -> Result<S> {
    match path {
        None => Ok(S::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_settings(&text).with_context(|| format!("in {}", p.display()))
        }
    }
}
