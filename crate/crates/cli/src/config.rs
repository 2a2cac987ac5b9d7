//! Flat `key=value` configuration with dotted keys.

use std::collections::BTreeMap;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable that overrides `run.seed`.
pub const SEED_ENV: &str = "CALIBLAB_SEED";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    /// Parse config text. Blank lines and lines starting with `#` are skipped;
    /// a key may appear only once.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Config::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = split_pair(line).ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key=value`, got `{line}`", no + 1))
            })?;
            if cfg.entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", no + 1)));
            }
        }
        Ok(cfg)
    }

    /// Apply a `key=value` override (command-line precedence).
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (key, value) =
            split_pair(pair).ok_or_else(|| CliError::Config(format!("override `{pair}` is not `key=value`")))?;
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Apply `CALIBLAB_SEED` when set.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        if let Ok(seed) = std::env::var(SEED_ENV) {
            seed.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{seed}` is not an unsigned integer")))?;
            self.set("run.seed", seed.trim());
        }
        Ok(())
    }

    /// Reject keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<(), CliError> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(CliError::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    /// Sorted, trimmed `key=value` lines.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// Counts written as `1000`, `1e6` or `2^10`.
    pub fn count(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.get(key)
            .map(|v| parse_count(v).ok_or_else(|| CliError::Config(format!("`{key}`: `{v}` is not a count"))))
            .transpose()
    }

    pub fn count_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.count(key)?.unwrap_or(default))
    }

    /// Comma-separated counts, with `2^a..2^b` expanding to every power of two between.
    pub fn counts(&self, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        self.get(key)
            .map(|v| parse_counts(v).ok_or_else(|| CliError::Config(format!("`{key}`: `{v}` is not a count list"))))
            .transpose()
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            None | Some("false") | Some("0") | Some("no") => Ok(false),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some(v) => Err(CliError::Config(format!("`{key}`: `{v}` is not a boolean"))),
        }
    }
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    if k.is_empty() || k.contains(char::is_whitespace) {
        return None;
    }
    Some((k, v.trim()))
}

pub fn parse_count(s: &str) -> Option<usize> {
    let s = s.trim().replace('_', "");
    if let Some((b, e)) = s.split_once('^') {
        let b: usize = b.trim().parse().ok()?;
        let e: u32 = e.trim().parse().ok()?;
        return b.checked_pow(e);
    }
    if let Ok(n) = s.parse::<usize>() {
        return Some(n);
    }
    let f: f64 = s.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f < 9.0e15).then_some(f as usize)
}

pub fn parse_counts(s: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((lo, hi)) => {
                let (lo, hi) = (parse_count(lo)?, parse_count(hi)?);
                if !lo.is_power_of_two() || !hi.is_power_of_two() || lo > hi {
                    return None;
                }
                let mut n = lo;
                while n <= hi {
                    out.push(n);
                    n *= 2;
                }
            }
            None => out.push(parse_count(part)?),
        }
    }
    (!out.is_empty()).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_canonicalizes() {
        let a = Config::parse("# c\n run.seed = 4\nenv.kind=bernoulli\n\n").unwrap();
        let b = Config::parse("env.kind = bernoulli\nrun.seed=4").unwrap();
        assert_eq!(a.canonical(), "env.kind=bernoulli\nrun.seed=4\n");
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        assert!(Config::parse("novalue").is_err());
        assert!(Config::parse("a=1\na=2").is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(parse_count("1e6"), Some(1_000_000));
        assert_eq!(parse_count("2^10"), Some(1024));
        assert_eq!(parse_count("1.5"), None);
        assert_eq!(parse_counts("2^10..2^12, 10000"), Some(vec![1024, 2048, 4096, 10_000]));
        assert_eq!(parse_counts("3..8"), None);
    }

    #[test]
    fn overrides_win() {
        let mut c = Config::parse("run.seed=1").unwrap();
        c.set_pair("run.seed=9").unwrap();
        assert_eq!(c.get("run.seed"), Some("9"));
        assert!(c.set_pair("--oops").is_err());
    }
}
