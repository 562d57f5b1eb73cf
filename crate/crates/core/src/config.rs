//! Flat `key = value` configuration.
//!
//! One entry per line, `#` starts a comment. Values are stored as text and
//! parsed on access, so the same map carries settings for every subsystem.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Params {
    map: BTreeMap<String, String>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut params = Params::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", i + 1)));
            }
            params.set(key, value.trim());
        }
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    /// Parses a `key=value` override as given on a command line.
    pub fn parse_override(arg: &str) -> Result<(String, String)> {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got `{arg}`")))?;
        Ok((k.trim().to_string(), v.trim().to_string()))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.map.insert(key.into(), value.to_string());
        self
    }

    /// Builder form of [`Params::set`].
    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    /// Sets `key` only if it is absent.
    pub fn set_default(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.map
            .entry(key.to_string())
            .or_insert_with(|| value.to_string());
        self
    }

    /// Entries of `other` override entries of `self`.
    pub fn merge(&mut self, other: &Params) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::config(format!("invalid value for `{key}`: `{v}` ({e})"))),
        }
    }

    pub fn string_or(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    /// Accepts `on/off`, `true/false`, `yes/no` and `1/0`.
    pub fn flag_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "on" | "true" | "yes" | "1" => Ok(true),
                "off" | "false" | "no" | "0" => Ok(false),
                _ => Err(Error::config(format!("invalid flag for `{key}`: `{v}`"))),
            },
        }
    }

    /// Comma-separated list.
    pub fn list_or<T>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: FromStr + Clone,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|e| {
                        Error::config(format!("invalid list item for `{key}`: `{s}` ({e})"))
                    })
                })
                .collect(),
        }
    }

    /// Fails on the first key not in `allowed`, listing the valid keys.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        if let Some(bad) = self.keys().find(|k| !allowed.contains(k)) {
            let mut valid = allowed.to_vec();
            valid.sort_unstable();
            return Err(Error::config(format!(
                "unknown key `{bad}`; valid keys: {}",
                valid.join(", ")
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.map {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let p = Params::parse("# run\nsteps = 50000\n\nn_points=3 # quadratic\nlayers = 8, 16,2\n").unwrap();
        assert_eq!(p.get_or("steps", 0usize).unwrap(), 50000);
        assert_eq!(p.get_or("n_points", 0usize).unwrap(), 3);
        assert_eq!(p.list_or("layers", &[1usize]).unwrap(), vec![8, 16, 2]);
        assert_eq!(Params::parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn typed_errors() {
        let p = Params::new().with("steps", "many").with("dropout", "maybe");
        assert!(matches!(p.get_or("steps", 1usize), Err(Error::Config(_))));
        assert!(matches!(p.flag_or("dropout", true), Err(Error::Config(_))));
        assert!(Params::parse("novalue").is_err());
    }

    #[test]
    fn defaults_and_flags() {
        let p = Params::new().with("dropout", "off");
        assert!(!p.flag_or("dropout", true).unwrap());
        assert_eq!(p.get_or("rate", 0.5f64).unwrap(), 0.5);
        let mut q = p.clone();
        q.set_default("dropout", "on");
        assert_eq!(q.get("dropout"), Some("off"));
    }

    #[test]
    fn unknown_keys_are_listed() {
        let p = Params::new().with("stesp", 10);
        let err = p.check_keys(&["steps", "seed"]).unwrap_err().to_string();
        assert!(err.contains("stesp") && err.contains("seed, steps"), "{err}");
    }
}
