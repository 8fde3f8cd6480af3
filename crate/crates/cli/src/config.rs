//! The flat `[section]` / `key = value` configuration format, parsed
//! with line tracking so schema errors point at the offending line.
//! Keys that no code path reads are rejected after extraction, which
//! catches typos like `zeta_0` for `zeta0`.

use std::cell::Cell;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

#[derive(Debug)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    used: Cell<bool>,
}

#[derive(Debug)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
    used: Cell<bool>,
}

/// A parsed configuration file. Sections keep file order; reads mark
/// what they touch so [`Config::check_consumed`] can flag the rest.
#[derive(Debug)]
pub struct Config {
    path: PathBuf,
    sections: Vec<Section>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let err = |line, message: String| ConfigError {
            path: path.to_path_buf(),
            line: Some(line),
            message,
        };
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(line_no, format!("unterminated section header {line:?}")))?
                    .trim();
                if name.is_empty() {
                    return Err(err(line_no, "empty section name".into()));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(err(line_no, format!("duplicate section [{name}]")));
                }
                sections.push(Section {
                    name: name.to_string(),
                    line: line_no,
                    entries: Vec::new(),
                    used: Cell::new(false),
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected `key = value`, got {line:?}")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err(line_no, "empty key".into()));
            }
            let section = sections
                .last_mut()
                .ok_or_else(|| err(line_no, format!("key `{key}` before any [section]")))?;
            if section.entries.iter().any(|e| e.key == key) {
                return Err(err(
                    line_no,
                    format!("duplicate key `{key}` in [{}]", section.name),
                ));
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line: line_no,
                used: Cell::new(false),
            });
        }
        Ok(Self { path: path.to_path_buf(), sections })
    }

    /// A view of the named section; an absent section reads as empty,
    /// so callers fall back to their defaults.
    pub fn section(&self, name: &'static str) -> SectionRef<'_> {
        let section = self.sections.iter().find(|s| s.name == name);
        if let Some(s) = section {
            s.used.set(true);
        }
        SectionRef { config: self, name, section }
    }

    /// Errors on any section or key no reader touched — the schema
    /// check's last line of defense against misspellings.
    pub fn check_consumed(&self) -> Result<(), ConfigError> {
        for s in &self.sections {
            if !s.used.get() {
                return Err(ConfigError {
                    path: self.path.clone(),
                    line: Some(s.line),
                    message: format!("unrecognized section [{}]", s.name),
                });
            }
            for e in &s.entries {
                if !e.used.get() {
                    return Err(ConfigError {
                        path: self.path.clone(),
                        line: Some(e.line),
                        message: format!("unrecognized or unused key `{}` in [{}]", e.key, s.name),
                    });
                }
            }
        }
        Ok(())
    }

    /// Every `section.key = value` pair as written, for artifact
    /// provenance headers.
    pub fn flatten(&self) -> Vec<(String, String)> {
        self.sections
            .iter()
            .flat_map(|s| {
                s.entries
                    .iter()
                    .map(|e| (format!("{}.{}", s.name, e.key), e.value.clone()))
            })
            .collect()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Clone, Copy)]
pub struct SectionRef<'a> {
    config: &'a Config,
    name: &'static str,
    section: Option<&'a Section>,
}

impl<'a> SectionRef<'a> {
    fn entry(&self, key: &str) -> Option<&'a Entry> {
        self.section?.entries.iter().find(|e| e.key == key)
    }

    /// An error anchored at `key`'s line (or the section's, if the key
    /// is not present).
    pub fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.config.path.clone(),
            line: self
                .entry(key)
                .map(|e| e.line)
                .or(self.section.map(|s| s.line)),
            message: format!("[{}] {}: {}", self.name, key, message.into()),
        }
    }

    pub fn get(&self, key: &str) -> Option<&'a str> {
        let entry = self.entry(key)?;
        entry.used.set(true);
        Some(entry.value.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&'a str, ConfigError> {
        self.get(key)
            .ok_or_else(|| self.err(key, "required key is missing"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                self.err(
                    key,
                    format!("cannot parse {raw:?} as {}", std::any::type_name::<T>()),
                )
            }),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn require_parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.require(key)?;
        Ok(self.parse(key)?.expect("key just required"))
    }

    /// `auto` (or absence) against an explicit parsed value.
    pub fn auto_or<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some("auto") => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                self.err(
                    key,
                    format!(
                        "cannot parse {raw:?} as `auto` or {}",
                        std::any::type_name::<T>()
                    ),
                )
            }),
        }
    }

    /// A comma-separated list parsed elementwise.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        let Some(raw) = self.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<T>().map_err(|_| {
                    self.err(
                        key,
                        format!("cannot parse list item {item:?} as {}", std::any::type_name::<T>()),
                    )
                })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }
}
