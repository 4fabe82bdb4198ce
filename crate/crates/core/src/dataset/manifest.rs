use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::format::file_hash;
use super::DatasetError;

pub const MANIFEST_NAME: &str = "manifest.json";

/// A data file next to the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    /// Demonstrations or tuples in the file.
    pub records: u64,
}

/// JSON index of an output directory.
///
/// `config` echoes the full configuration of the run and `extra` carries
/// command-specific fields (per-plan outcomes, timing).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub schema_version: u32,
    pub tool_version: String,
    pub source_revision: Option<String>,
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
    pub counts: BTreeMap<String, u64>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            schema_version: super::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            source_revision: option_env!("CDSYNTH_REVISION").map(str::to_string),
            config,
            files: Vec::new(),
            counts: BTreeMap::new(),
            extra: serde_json::Value::Null,
        }
    }

    /// Hashes `dir/name` and lists it.
    pub fn add_file(&mut self, dir: &Path, name: &str, records: u64) -> Result<(), DatasetError> {
        let sha256 = file_hash(&dir.join(name))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256,
            records,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, DatasetError> {
        let path = dir.join(MANIFEST_NAME);
        self.write_to(&path)?;
        Ok(path)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), DatasetError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, DatasetError> {
        Self::read_from(&dir.join(MANIFEST_NAME))
    }

    pub fn read_from(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path)
            .map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))
    }

    /// Re-hashes every listed file.
    pub fn verify(&self, dir: &Path) -> Result<(), DatasetError> {
        for f in &self.files {
            let h = file_hash(&dir.join(&f.path))?;
            if h != f.sha256 {
                return Err(DatasetError::Manifest(format!(
                    "{} changed since it was written",
                    f.path
                )));
            }
        }
        Ok(())
    }
}
