//! Flat key/value config file support.
//!
//! `FAIRMAP_CONFIG` names a default config file; command-line flags override
//! file values, which override built-in defaults. Lines look like
//! `key = value`; `#` begins a comment line and blank lines are ignored.
//! Keys mirror the long flag names with `-` replaced by `_`
//! (e.g. `lr`, `epochs`, `literal_pseudocode`, `reference_attribute`).

use fairmap::{Error, Result};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    /// Loads the file named by `FAIRMAP_CONFIG`, if set. An unset variable
    /// yields an empty config; a set-but-missing file is an error.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os("FAIRMAP_CONFIG") {
            Some(path) => Self::load(Path::new(&path)),
            None => Ok(FileConfig::default()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut values = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_string(),
                line: idx + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn string(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(PathBuf::from)
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Invalid(format!("config key {key:?} has unparsable value {raw:?}"))
            }),
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.values.get(key).map(String::as_str) {
            None => Ok(false),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(other) => Err(Error::Invalid(format!(
                "config key {key:?} expects a boolean, got {other:?}"
            ))),
        }
    }
}
