//! The tool's structured text format: `[section]` headers over `key = value`
//! pairs. Configuration files, run manifests, and dataset manifests all use
//! it; dataset manifests additionally allow bare entry lines (ids) inside
//! split sections. Blank lines and `#` comments are ignored.
//!
//! Resolution precedence for command settings is: command-line flag, then
//! config file value, then built-in default.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

/// One parsed line inside a section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Pair(String, String),
    Bare(String),
}

/// A parsed sectioned file, order-preserving.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sections {
    pub sections: Vec<(String, Vec<Item>)>,
}

impl Sections {
    /// Last value wins when a key repeats, matching flag-like semantics.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .rev()
            .filter(|(name, _)| name == section)
            .find_map(|(_, items)| {
                items.iter().rev().find_map(|item| match item {
                    Item::Pair(k, v) if k == key => Some(v.as_str()),
                    _ => None,
                })
            })
    }

    pub fn section(&self, name: &str) -> Option<&[Item]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, items)| items.as_slice())
    }

    pub fn bare_entries(&self, name: &str) -> Vec<&str> {
        self.section(name)
            .into_iter()
            .flatten()
            .filter_map(|item| match item {
                Item::Bare(v) => Some(v.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }
}

/// Parse sectioned text. `origin` labels error messages; `bare_ok` admits
/// bare entry lines (dataset manifests) instead of rejecting them (configs).
pub fn parse_sections(text: &str, origin: &str, bare_ok: bool) -> Result<Sections> {
    let mut out = Sections::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |what: &str| {
            CliError::invalid(format!("{origin} line {}: {what}", idx + 1))
        };
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err("unterminated section header"))?
                .trim();
            if name.is_empty() {
                return Err(err("empty section name"));
            }
            out.sections.push((name.to_string(), Vec::new()));
            continue;
        }
        let section = out
            .sections
            .last_mut()
            .ok_or_else(|| err("entry before any [section] header"))?;
        if let Some((k, v)) = line.split_once('=') {
            let key = k.trim();
            if key.is_empty() {
                return Err(err("empty key"));
            }
            section.1.push(Item::Pair(key.to_string(), v.trim().to_string()));
        } else if bare_ok {
            section.1.push(Item::Bare(line.to_string()));
        } else {
            return Err(err("expected `key = value`"));
        }
    }
    Ok(out)
}

pub fn load_sections(path: &Path, bare_ok: bool) -> Result<Sections> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
    parse_sections(&text, &path.display().to_string(), bare_ok)
}

/// Serialize sections back to the canonical text form.
pub fn render_sections(sections: &Sections) -> String {
    let mut out = String::new();
    for (i, (name, items)) in sections.sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push('[');
        out.push_str(name);
        out.push_str("]\n");
        for item in items {
            match item {
                Item::Pair(k, v) => {
                    out.push_str(k);
                    out.push_str(" = ");
                    out.push_str(v);
                    out.push('\n');
                }
                Item::Bare(v) => {
                    out.push_str(v);
                    out.push('\n');
                }
            }
        }
    }
    out
}

/// Flag/config/default resolution for one config-file section.
pub struct Resolver<'a> {
    cfg: Option<&'a Sections>,
    section: &'a str,
}

impl<'a> Resolver<'a> {
    pub fn new(cfg: Option<&'a Sections>, section: &'a str) -> Resolver<'a> {
        Resolver { cfg, section }
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T>
    where
        T::Err: Display,
    {
        raw.parse().map_err(|e| {
            CliError::invalid(format!(
                "config {}.{key}: cannot parse {raw:?}: {e}",
                self.section
            ))
        })
    }

    /// Flag value if given, else config value, else the default.
    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get_opt(flag, key)?.unwrap_or(default))
    }

    /// Flag value if given, else config value, else nothing.
    pub fn get_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.cfg.and_then(|c| c.get(self.section, key)) {
            Some(raw) => Ok(Some(self.parse(key, raw)?)),
            None => Ok(None),
        }
    }
}
