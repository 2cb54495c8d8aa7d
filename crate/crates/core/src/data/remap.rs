use std::collections::BTreeMap;
use std::path::Path;

use crate::geometry::IGNORE_LABEL;
use crate::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../../data/semantic-kitti-remap.txt");

/// Raw dataset label ids to contiguous training ids.
///
/// Parsed from whitespace-delimited `raw_id train_id name` lines; `#` starts
/// a comment and a training id of `-1` means "ignore".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemapTable {
    forward: BTreeMap<u32, u32>,
    /// Canonical raw id for each training id (the first line that names it).
    inverse: Vec<u32>,
    names: Vec<String>,
}

impl Default for RemapTable {
    fn default() -> Self {
        RemapTable::parse(DEFAULT_TABLE).expect("bundled remap table")
    }
}

impl RemapTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut forward = BTreeMap::new();
        let mut canonical: BTreeMap<u32, (u32, String)> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Config(format!("remap table line {}: {msg}", lineno + 1));
            let mut parts = line.split_whitespace();
            let raw: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("expected a raw id"))?;
            let train: i64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("expected a training id"))?;
            let name = parts.collect::<Vec<_>>().join(" ");
            if raw > u16::MAX as u32 {
                return Err(bad("raw id exceeds 16 bits"));
            }
            let mapped = match train {
                -1 => IGNORE_LABEL,
                t if (0..IGNORE_LABEL as i64).contains(&t) => t as u32,
                _ => return Err(bad("training id must be -1 or non-negative")),
            };
            if forward.insert(raw, mapped).is_some() {
                return Err(bad("duplicate raw id"));
            }
            if mapped != IGNORE_LABEL {
                canonical.entry(mapped).or_insert((raw, name));
            }
        }
        let n = canonical.len();
        if canonical.keys().copied().ne(0..n as u32) {
            return Err(Error::Config(
                "remap table training ids must be contiguous from 0".into(),
            ));
        }
        let (inverse, names) = canonical.into_values().unzip();
        Ok(RemapTable {
            forward,
            inverse,
            names,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RemapTable::parse(&text)
    }

    pub fn n_classes(&self) -> usize {
        self.inverse.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.names
    }

    /// Training id for a raw id; `None` for ids absent from the table.
    pub fn remap(&self, raw: u32) -> Option<u32> {
        self.forward.get(&(raw & 0xffff)).copied()
    }

    /// Canonical raw id for a training id.
    pub fn inverse(&self, train: u32) -> Option<u32> {
        self.inverse.get(train as usize).copied()
    }

    /// Every raw id present in the table.
    pub fn raw_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.forward.keys().copied()
    }
}
