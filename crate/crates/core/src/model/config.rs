use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{arg_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    /// Ungrouped five-layer AlexNet convolution stack ending at pool5.
    AlexnetConv,
    /// Two conv/pool blocks for desk-scale experiments.
    TinyCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorKind {
    Convlstm,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    Frames,
    #[default]
    Diff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormSlot {
    Batchnorm,
    #[default]
    None,
}

/// Where backbone weights come from: `xavier` or `archive:<path>`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum BackboneInit {
    #[default]
    Xavier,
    Archive(PathBuf),
}

impl fmt::Display for BackboneInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackboneInit::Xavier => write!(f, "xavier"),
            BackboneInit::Archive(p) => write!(f, "archive:{}", p.display()),
        }
    }
}

impl FromStr for BackboneInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xavier" => Ok(BackboneInit::Xavier),
            _ => match s.strip_prefix("archive:") {
                Some(p) if !p.is_empty() => Ok(BackboneInit::Archive(PathBuf::from(p))),
                _ => Err(arg_err!("backbone_init must be `xavier` or `archive:<path>`, got `{s}`")),
            },
        }
    }
}

impl Serialize for BackboneInit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackboneInit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Declarative description of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub aggregator: AggregatorKind,
    /// ConvLSTM filters or LSTM units. Defaults to 256 / 1000.
    pub aggregator_width: Option<usize>,
    /// ConvLSTM gate kernel size (odd).
    pub aggregator_kernel: usize,
    /// Fully-connected widths after the batch norm; must end with 1.
    pub head: Vec<usize>,
    /// Fully-connected layers between the conv stack and the LSTM
    /// (AlexNet fc6/fc7). Unused by the ConvLSTM aggregator.
    pub feature_fc: Vec<usize>,
    pub input_mode: InputMode,
    pub backbone_init: BackboneInit,
    /// Per-position normalization inside the conv stack (after the first and
    /// second conv blocks). Missing entries mean `none`.
    pub norm_slots: Vec<NormSlot>,
    /// Side of the square frames fed to the backbone.
    pub frame_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::AlexnetConv,
            aggregator: AggregatorKind::Convlstm,
            aggregator_width: None,
            aggregator_kernel: 3,
            head: vec![125, 1],
            feature_fc: vec![4096, 4096],
            input_mode: InputMode::Diff,
            backbone_init: BackboneInit::Xavier,
            norm_slots: Vec::new(),
            frame_size: 224,
        }
    }
}

pub const NORM_SLOT_POSITIONS: usize = 2;

impl ModelConfig {
    /// The LSTM baseline: conv stack, fc6, fc7, LSTM(1000), same head.
    pub fn lstm_baseline() -> Self {
        Self {
            aggregator: AggregatorKind::Lstm,
            ..Self::default()
        }
    }

    /// Small ConvLSTM model for tests and desk-scale training.
    pub fn tiny(frame_size: usize, width: usize) -> Self {
        Self {
            backbone: Backbone::TinyCnn,
            aggregator_width: Some(width),
            head: vec![8, 1],
            frame_size,
            ..Self::default()
        }
    }

    pub fn width(&self) -> usize {
        self.aggregator_width.unwrap_or(match self.aggregator {
            AggregatorKind::Convlstm => 256,
            AggregatorKind::Lstm => 1000,
        })
    }

    pub fn norm_slot(&self, position: usize) -> NormSlot {
        self.norm_slots.get(position).copied().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.head.last() != Some(&1) {
            return Err(arg_err!("head widths must end with 1, got {:?}", self.head));
        }
        if self.head.contains(&0) || self.feature_fc.contains(&0) {
            return Err(arg_err!("fully-connected widths must be positive"));
        }
        if self.width() == 0 {
            return Err(arg_err!("aggregator_width must be positive"));
        }
        if self.aggregator_kernel.is_multiple_of(2) {
            return Err(arg_err!("aggregator_kernel must be odd, got {}", self.aggregator_kernel));
        }
        if self.norm_slots.len() > NORM_SLOT_POSITIONS {
            return Err(arg_err!(
                "{} norm slots given, the conv stack has {NORM_SLOT_POSITIONS}",
                self.norm_slots.len()
            ));
        }
        if self.aggregator == AggregatorKind::Lstm && self.feature_fc.is_empty() {
            return Err(arg_err!("the lstm aggregator needs at least one feature_fc layer"));
        }
        if self.frame_size == 0 {
            return Err(arg_err!("frame_size must be positive"));
        }
        Ok(())
    }
}
