//! Stratified k-fold partitions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::rng::Rng;

use super::manifest::{write_atomic, Manifest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Clip ids per fold.
    pub folds: Vec<Vec<String>>,
}

/// Shuffles each class with `seed`, then deals its clips round-robin. The
/// dealing continues across classes so fold sizes stay within one.
pub fn make_folds(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(arg_err!("need at least 2 folds, got {k}"));
    }
    let mut rng = Rng::new(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for label in [0u8, 1] {
        let mut ids: Vec<&str> = manifest
            .entries
            .iter()
            .filter(|e| e.label == label)
            .map(|e| e.clip_id.as_str())
            .collect();
        if ids.len() < k {
            return Err(arg_err!("class {label} has {} clips, fewer than {k} folds", ids.len()));
        }
        rng.shuffle(&mut ids);
        for id in ids {
            folds[next % k].push(id.to_string());
            next += 1;
        }
    }
    Ok(FoldPlan { k, seed, folds })
}

impl FoldPlan {
    /// Indices into `manifest` of the test fold `fold` and of the remaining
    /// training clips, both in manifest order.
    pub fn split(&self, manifest: &Manifest, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let test_ids = self
            .folds
            .get(fold)
            .ok_or_else(|| arg_err!("fold {fold} out of range for {} folds", self.k))?;
        for id in self.folds.iter().flatten() {
            if manifest.find(id).is_none() {
                return Err(arg_err!("fold plan names clip {id}, absent from the manifest"));
            }
        }
        let (mut test, mut train) = (Vec::new(), Vec::new());
        for (i, e) in manifest.entries.iter().enumerate() {
            if test_ids.contains(&e.clip_id) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, test))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
