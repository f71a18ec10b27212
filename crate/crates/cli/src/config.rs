use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fightnet::model::ModelConfig;
use fightnet::pipeline::PipelineConfig;
use fightnet::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Clip manifest CSV. Relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    /// Fold plan JSON; when absent, folds are made from `folds`/`fold_seed`.
    pub fold_plan: Option<PathBuf>,
    pub folds: usize,
    pub fold_seed: u64,
    /// Clips per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            fold_plan: None,
            folds: 5,
            fold_seed: 0,
            eval_batch: 8,
        }
    }
}

/// Everything one run needs, as read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub data: DataConfig,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key=value`
    /// overrides and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>().with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        let mut overridden = Vec::new();
        for o in overrides {
            overridden.push(apply_override(&mut table, o)?);
        }
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e| anyhow!("invalid config: {e}"))?;
        if let Some(dir) = path.and_then(Path::parent) {
            for (key, field) in [
                ("data.manifest", &mut cfg.data.manifest),
                ("data.fold_plan", &mut cfg.data.fold_plan),
            ] {
                if let Some(p) = field.as_mut().filter(|p| p.is_relative()) {
                    if !overridden.iter().any(|k| k == key) {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.pipeline.validate()?;
        if self.pipeline.crop != self.model.frame_size {
            bail!(
                "pipeline.crop ({}) must equal model.frame_size ({})",
                self.pipeline.crop,
                self.model.frame_size
            );
        }
        if self.data.folds < 2 {
            bail!("data.folds must be at least 2, got {}", self.data.folds);
        }
        if self.data.eval_batch == 0 {
            bail!("data.eval_batch must be positive");
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        let p = self
            .data
            .manifest
            .as_deref()
            .ok_or_else(|| anyhow!("data.manifest is not set"))?;
        if !p.is_file() {
            bail!("manifest {} does not exist", p.display());
        }
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Sets `section.key = value` in `table`, parsing `value` as TOML and
/// falling back to a plain string. Returns the key.
fn apply_override(table: &mut Table, spec: &str) -> Result<String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{s}` is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(key.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_toml_values() {
        let cfg = RunConfig::load(
            None,
            &[
                "model.backbone=tiny-cnn".into(),
                "model.frame_size=32".into(),
                "pipeline.crop=32".into(),
                "pipeline.resize=36".into(),
                "model.head=[8, 1]".into(),
                "train.learning_rate=1e-3".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.head, vec![8, 1]);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.pipeline.resize, 36);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["train.lr=0.1".into()]).is_err());
        assert!(RunConfig::load(None, &["extra.x=1".into()]).is_err());
        assert!(RunConfig::load(None, &["train.batch_size".into()]).is_err());
    }

    #[test]
    fn crop_must_match_frame_size() {
        let err = RunConfig::load(None, &["pipeline.crop=200".into()]).unwrap_err();
        assert!(err.to_string().contains("frame_size"));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
