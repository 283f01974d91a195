//! Flat `key = value` configuration files and flag/config/default resolution.

use crate::report::CliError;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "family",
    "g1",
    "estimator",
    "cov-density",
    "cov-truncvar",
    "bootstrap",
    "window",
    "hs-window",
    "reps",
    "mc-n",
    "seed",
    "threads",
    "no-intercept",
    "translate",
    "dgp",
    "n",
    "families",
    "study",
    "points",
    "base",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Blank lines and `#` comments are skipped. Keys accept `_` for `-`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::input(format!("config line {}: expected key = value", i + 1)));
            };
            let key = k.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::input(format!("config line {}: unknown key '{}'", i + 1, k.trim())));
            }
            values.insert(key, (v.trim().to_string(), i + 1));
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::input(format!("config line {line}: bad value for {key}: {e}"))),
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.values.get(key) {
            None => Ok(false),
            Some((v, line)) => match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(CliError::input(format!("config line {line}: {key} must be true or false"))),
            },
        }
    }
}

/// Flag if given, else config value, else default.
pub fn pick<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.get(key)?.unwrap_or(default)),
    }
}

pub fn pick_str(flag: &Option<String>, cfg: &ConfigFile, key: &str, default: &str) -> String {
    flag.clone().or_else(|| cfg.raw(key).map(str::to_string)).unwrap_or_else(|| default.to_string())
}

/// Counts written like `1e7` or `10000000`.
pub fn parse_count(s: &str) -> Result<usize, CliError> {
    let t = s.trim();
    if let Ok(v) = t.parse::<usize>() {
        return Ok(v);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= 1e15 => Ok(v as usize),
        _ => Err(CliError::input(format!("'{s}' is not a non-negative integer count"))),
    }
}

pub fn parse_list<T, F>(s: &str, f: F) -> Result<Vec<T>, CliError>
where
    F: Fn(&str) -> Result<T, CliError>,
{
    let items: Vec<T> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(f).collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(CliError::input(format!("empty list '{s}'")));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let c = ConfigFile::parse("# run\nalpha = 0.05\ncov_truncvar=scl-sp  # trailing\n\n").unwrap();
        assert_eq!(c.get::<f64>("alpha").unwrap(), Some(0.05));
        assert_eq!(c.raw("cov-truncvar"), Some("scl-sp"));
    }

    #[test]
    fn rejects_unknown_key_with_line() {
        let e = ConfigFile::parse("alpha=0.1\nalhpa=0.2\n").unwrap_err();
        assert!(e.message.contains("line 2"), "{}", e.message);
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let c = ConfigFile::parse("reps=7").unwrap();
        assert_eq!(pick(Some(3usize), &c, "reps", 1).unwrap(), 3);
        assert_eq!(pick(None, &c, "reps", 1usize).unwrap(), 7);
        assert_eq!(pick(None, &c, "window", 1usize).unwrap(), 1);
    }

    #[test]
    fn counts_accept_scientific() {
        assert_eq!(parse_count("1e7").unwrap(), 10_000_000);
        assert_eq!(parse_count("2500").unwrap(), 2500);
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }
}
