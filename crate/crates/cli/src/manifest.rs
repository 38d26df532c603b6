//! Run manifests: every `train` and `evaluate` invocation records its fully
//! resolved settings, derived seeds, and artifact paths in `manifest.txt`
//! inside the run directory — written before the long-running work starts,
//! so an interrupted run still documents what it was doing. Rerunning the
//! command from the manifest's recorded settings reproduces the run's
//! artifacts bitwise; the manifest itself carries a wall-clock timestamp, so
//! it is the one file in a run directory excluded from byte comparisons.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::{Item, Sections};
use crate::error::{CliError, Result};

pub const RUN_MANIFEST_FILE: &str = "manifest.txt";

pub struct RunManifest {
    sections: Sections,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut m = RunManifest { sections: Sections::default() };
        m.set("run", "tool", env!("CARGO_PKG_NAME"));
        m.set("run", "version", env!("CARGO_PKG_VERSION"));
        m.set("run", "command", command);
        m.set("run", "created_unix", created);
        m
    }

    /// Append `key = value` to `section`, creating the section on first use.
    pub fn set(&mut self, section: &str, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.sections.sections.iter_mut().find(|(n, _)| n == section) {
            Some((_, items)) => items.push(Item::Pair(key.to_string(), value)),
            None => self
                .sections
                .sections
                .push((section.to_string(), vec![Item::Pair(key.to_string(), value)])),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::io_at(dir, e))?;
        let path = dir.join(RUN_MANIFEST_FILE);
        fs::write(&path, crate::config::render_sections(&self.sections))
            .map_err(|e| CliError::io_at(&path, e))?;
        Ok(path)
    }
}
