//! Parameter counts, measured from a built model or derived analytically
//! from a config.

use serde::Serialize;

use crate::error::{shape_err, Result};
use crate::tensor::Scalar;

use super::config::{AggregatorKind, ModelConfig, NormSlot};
use super::network::{backbone_stages, Component, Model, Stage};

/// Trainable-parameter totals, split by component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub backbone: usize,
    pub aggregator: usize,
    pub batchnorm: usize,
    pub head: usize,
    pub total: usize,
}

impl ParamCount {
    fn add(&mut self, c: Component, n: usize) {
        match c {
            Component::Backbone => self.backbone += n,
            Component::Aggregator => self.aggregator += n,
            Component::BatchNorm => self.batchnorm += n,
            Component::Head => self.head += n,
        }
        self.total += n;
    }

    pub fn get(&self, c: Component) -> usize {
        match c {
            Component::Backbone => self.backbone,
            Component::Aggregator => self.aggregator,
            Component::BatchNorm => self.batchnorm,
            Component::Head => self.head,
        }
    }
}

/// Sums the sizes of the model's trainable tensors. Batch-norm layers inside
/// the backbone count towards the backbone.
pub fn count_params<T: Scalar>(model: &Model<T>) -> ParamCount {
    let mut out = ParamCount::default();
    for p in model.params() {
        let c = Component::of(&p.name).expect("every param name carries a component prefix");
        out.add(c, p.value.len());
    }
    out
}

fn extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    (input + 2 * pad)
        .checked_sub(kernel)
        .map(|r| r / stride + 1)
        .ok_or_else(|| shape_err!("extent {input} too small for window {kernel}"))
}

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn linear_params(n_in: usize, n_out: usize) -> usize {
    n_out * n_in + n_out
}

fn convlstm_params(cin: usize, hidden: usize, k: usize) -> usize {
    4 * (k * k * cin * hidden + k * k * hidden * hidden + hidden)
}

fn lstm_params(n_in: usize, units: usize) -> usize {
    4 * (units * n_in + units * units + units)
}

/// Parameter count from the config alone, one formula per layer type.
pub fn expected_params(cfg: &ModelConfig) -> Result<ParamCount> {
    cfg.validate()?;
    let mut out = ParamCount::default();
    let (mut c, mut h) = (3, cfg.frame_size);
    for stage in backbone_stages(cfg.backbone) {
        match stage {
            Stage::Conv { out: cout, kernel, stride, pad } => {
                out.add(Component::Backbone, conv_params(c, cout, kernel));
                h = extent(h, kernel, stride, pad)?;
                c = cout;
            }
            Stage::Pool { window, stride } => h = extent(h, window, stride, 0)?,
            Stage::NormSlot(i) => {
                if cfg.norm_slot(i) == NormSlot::Batchnorm {
                    out.add(Component::Backbone, 2 * c);
                }
            }
        }
    }
    let width = cfg.width();
    let head_in = match cfg.aggregator {
        AggregatorKind::Convlstm => {
            out.add(Component::Aggregator, convlstm_params(c, width, cfg.aggregator_kernel));
            width * h * h
        }
        AggregatorKind::Lstm => {
            let mut n = c * h * h;
            for &w in &cfg.feature_fc {
                out.add(Component::Backbone, linear_params(n, w));
                n = w;
            }
            out.add(Component::Aggregator, lstm_params(n, width));
            width
        }
    };
    out.add(Component::BatchNorm, 2 * width);
    let mut n = head_in;
    for &w in &cfg.head {
        out.add(Component::Head, linear_params(n, w));
        n = w;
    }
    Ok(out)
}
