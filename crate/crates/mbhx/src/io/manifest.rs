//! `manifest.json` for generated datasets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// (height, width) shared by every sample.
    pub extent: (usize, usize),
    pub splits: Vec<SplitRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub name: String,
    pub count: usize,
    pub seeds: Vec<u64>,
}

impl Manifest {
    pub fn new(extent: (usize, usize)) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            extent,
            splits: Vec::new(),
        }
    }

    pub fn split(&self, name: &str) -> Option<&SplitRecord> {
        self.splits.iter().find(|s| s.name == name)
    }

    /// Insert or replace one split record, keeping records sorted by name
    /// so repeated generation produces identical bytes.
    pub fn upsert_split(&mut self, record: SplitRecord) {
        self.splits.retain(|s| s.name != record.name);
        self.splits.push(record);
        self.splits.sort_by(|a, b| a.name.cmp(&b.name));
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                found: manifest.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_upserts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = Manifest::new((64, 64));
        m.upsert_split(SplitRecord {
            name: "train".into(),
            count: 2,
            seeds: vec![100, 101],
        });
        m.save(&path).unwrap();
        let loaded = Manifest::load(&path).unwrap();
        assert_eq!(loaded, m);

        // Replacing a split keeps one record per name.
        m.upsert_split(SplitRecord {
            name: "train".into(),
            count: 3,
            seeds: vec![7, 8, 9],
        });
        assert_eq!(m.splits.len(), 1);
        assert_eq!(m.split("train").unwrap().count, 3);
    }
}
