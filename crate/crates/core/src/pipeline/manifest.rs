//! Clip manifests: one CSV record per clip.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VIOLENT: u8 = 1;
pub const NONVIOLENT: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Directory of `frame_00000.png`, `frame_00001.png`, ...; relative paths
    /// resolve against the manifest's directory.
    pub path: PathBuf,
    pub label: u8,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative entry paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            entries,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for (i, rec) in rdr.deserialize::<ManifestEntry>().enumerate() {
            entries.push(rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("record {}: {e}", i + 1),
            })?);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(entries, root).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(path, &bytes)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if e.label > 1 {
                return Err(Error::Argument(format!("clip {}: label {} is not 0 or 1", e.clip_id, e.label)));
            }
            if !seen.insert(e.clip_id.as_str()) {
                return Err(Error::Argument(format!("duplicate clip_id {}", e.clip_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frames_dir(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn find(&self, clip_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.clip_id == clip_id)
    }
}

/// Writes via a sibling temp file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
