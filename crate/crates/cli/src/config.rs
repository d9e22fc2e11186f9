//! `key=value` run configuration: flags override the config file, which
//! overrides built-in defaults. Every resolved value is echoed into the
//! command's manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use latentclean::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Argument(format!("config line {}: expected key=value, got {raw:?}", n + 1)));
        };
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::Argument(format!("config file {} does not exist", p.display())));
                }
                parse_config(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?
            }
            None => BTreeMap::new(),
        };
        Ok(Settings { file, echo: BTreeMap::new() })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Argument(format!("config value {key}={v} is not valid"))),
        }
    }

    /// Flag, else config file, else `default`.
    pub fn value<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Flag, else config file; error when neither gives one.
    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => self
                .file_value(key)?
                .ok_or_else(|| Error::Argument(format!("--{key} is required (flag or config file)")))?,
        };
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Flag, else config file, else absent (echoed as `none`).
    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        self.echo.insert(key.to_string(), v.as_ref().map_or("none".to_string(), T::to_string));
        Ok(v)
    }

    /// Record a derived value in the echo.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.echo.insert(key.to_string(), value.to_string());
    }

    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.echo
    }

    pub fn echo_text(&self) -> String {
        self.echo.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.echo_text().as_bytes()))
    }
}
