//! `key = value` configuration files. Command-line flags take precedence
//! over file values, which take precedence over defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    path: Option<PathBuf>,
    values: BTreeMap<String, (String, usize)>,
    used: BTreeSet<String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(UsageError(format!("{}:{}: expected `key = value`", path.display(), i + 1)).into());
            };
            let key = key.trim().replace('_', "-");
            if values.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(UsageError(format!("{}:{}: duplicate key `{key}`", path.display(), i + 1)).into());
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            values,
            used: BTreeSet::new(),
        })
    }

    fn location(&self, key: &str) -> String {
        let line = self.values.get(key).map_or(0, |v| v.1);
        let path = self.path.as_deref().map_or_else(String::new, |p| p.display().to_string());
        format!("{path}:{line}")
    }

    /// The flag if given, else the file's value for `key`.
    pub fn pick<T>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some((raw, _)) => raw.parse().map(Some).map_err(|e| {
                UsageError(format!("{}: bad value {raw:?} for `{key}`: {e}", self.location(key))).into()
            }),
        }
    }

    pub fn pick_or<T>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// A switch is on if the flag is set or the file says `true`.
    pub fn switch(&mut self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    pub fn require<T>(&mut self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| UsageError(format!("missing --{key} (flag or config key)")).into())
    }

    /// Rejects keys no option consumed.
    pub fn finish(&self) -> Result<()> {
        match self.values.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(UsageError(format!("{}: unknown key `{k}`", self.location(k))).into()),
            None => Ok(()),
        }
    }
}

/// Comma-separated list, e.g. `2,4,8`.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|e| UsageError(format!("bad list entry {v:?}: {e}")).into())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> (tempfile::NamedTempFile, ConfigFile) {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        let c = ConfigFile::load(Some(f.path())).unwrap();
        (f, c)
    }

    #[test]
    fn flags_override_file_values() {
        let (_f, mut c) = file("lr = 0.01\n# comment\nbatch_size = 4 # trailing\n");
        assert_eq!(c.pick_or(None, "lr", 1.0).unwrap(), 0.01);
        assert_eq!(c.pick_or(Some(0.5), "lr", 1.0).unwrap(), 0.5);
        assert_eq!(c.pick_or::<usize>(None, "batch-size", 64).unwrap(), 4);
        assert_eq!(c.pick_or::<usize>(None, "epochs", 7).unwrap(), 7);
        c.finish().unwrap();
    }

    #[test]
    fn unknown_and_malformed_keys_are_usage_errors() {
        let (_f, mut c) = file("lr = 0.01\ncolour = red\n");
        c.pick::<f64>(None, "lr").unwrap();
        let e = c.finish().unwrap_err();
        assert!(e.downcast_ref::<UsageError>().unwrap().0.contains(":2: unknown key `colour`"));

        let (_f, mut c) = file("lr = fast\n");
        assert!(c.pick::<f64>(None, "lr").is_err());

        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "just words\n").unwrap();
        assert!(ConfigFile::load(Some(f.path())).is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("2, 4,8").unwrap(), vec![2, 4, 8]);
        assert!(parse_list::<f64>("0.1,x").is_err());
    }
}
