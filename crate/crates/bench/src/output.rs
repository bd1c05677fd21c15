//! JSON metadata and CSV series.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Describes one CLI run and lists the series it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub seed: u64,
    pub workers: usize,
    pub parameters: serde_json::Value,
    pub summary: serde_json::Value,
    pub files: Vec<String>,
}

/// Collects the files of one run below `dir`.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, BenchError> {
        fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), BenchError> {
        write_csv(&self.dir.join(name), rows)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `metadata.json` listing every series written so far.
    pub fn finish(self, mut meta: RunMetadata) -> Result<PathBuf, BenchError> {
        meta.files = self.files;
        let path = self.dir.join("metadata.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?)?;
        Ok(path)
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(BenchError::from))
        .collect()
}

pub fn read_metadata(path: &Path) -> Result<RunMetadata, BenchError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
