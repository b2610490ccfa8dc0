//! Plain-text `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, and a key given more than once
//! forms a list.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: Vec<Entry>,
    base_dir: Option<PathBuf>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<KvConfig> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `key = value`, found {line:?}"),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            entries.push(Entry {
                key: key.to_string(),
                value: v.trim().to_string(),
                line: i + 1,
            });
        }
        Ok(KvConfig { entries, base_dir: None })
    }

    /// Reads a file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<KvConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = KvConfig::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.iter().any(|e| e.key == key)
    }

    /// Last value given for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|e| e.key == key).map(|e| e.value.as_str())
    }

    /// Every value given for `key`, in file order.
    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.key == key)
            .map(|e| e.value.as_str())
            .collect()
    }

    /// Values of `key` split on whitespace and commas, across repeats.
    pub fn get_list(&self, key: &str) -> Vec<&str> {
        self.get_all(key)
            .into_iter()
            .flat_map(|v| v.split(|c: char| c.is_whitespace() || c == ','))
            .filter(|s| !s.is_empty())
            .collect()
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.entries.iter().rev().find(|e| e.key == key) else {
            return Ok(None);
        };
        e.value.parse().map(Some).map_err(|err| Error::Parse {
            line: e.line,
            message: format!("{key}: {err}"),
        })
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse_value(key)?.unwrap_or(default))
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get_list(key)
            .into_iter()
            .map(|v| {
                v.parse().map_err(|err| Error::Parse {
                    line: self.line_of(key),
                    message: format!("{key}: {v:?}: {err}"),
                })
            })
            .collect()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse_value(key)?
            .ok_or_else(|| Error::invalid(format!("missing required key `{key}`")))
    }

    /// Resolves a path value against the directory of the loaded file.
    pub fn path(&self, value: &str) -> PathBuf {
        let p = PathBuf::from(value);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        }
    }

    /// Errors on the first key not in `known`. Entries ending in `.*` match
    /// any key with that prefix.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for e in &self.entries {
            let ok = known.iter().any(|k| match k.strip_suffix('*') {
                Some(prefix) => e.key.starts_with(prefix),
                None => *k == e.key,
            });
            if !ok {
                return Err(Error::Parse {
                    line: e.line,
                    message: format!("unknown key `{}`", e.key),
                });
            }
        }
        Ok(())
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.iter().find(|e| e.key == key).map_or(0, |e| e.line)
    }
}
