//! `manifest.txt`: flat `key = value` record written by every run.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub const FILE: &str = "manifest.txt";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, threads: usize) -> Self {
        let mut m = Manifest::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("threads", threads);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Write with a creation timestamp, the only field that varies between
    /// identical runs.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        s.push_str(&format!("created_unix = {secs}\n"));
        std::fs::write(dir.join(FILE), s)
    }

    pub fn read(dir: &Path) -> std::io::Result<Option<Manifest>> {
        let path = dir.join(FILE);
        if !path.exists() {
            return Ok(None);
        }
        let mut m = Manifest::default();
        for line in std::fs::read_to_string(path)?.lines() {
            if let Some((k, v)) = line.split_once('=') {
                m.set(k.trim(), v.trim());
            }
        }
        Ok(if m.entries.is_empty() { None } else { Some(m) })
    }
}
