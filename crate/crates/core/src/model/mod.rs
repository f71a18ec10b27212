mod archive;
mod audit;
mod config;
mod network;

pub use archive::{
    apply_entries, decode, encode, load_weights, load_weights_scoped, read_archive, save_weights, Entries, LoadScope,
    MAGIC,
};
pub use audit::{count_params, expected_params, ParamCount};
pub use config::{AggregatorKind, Backbone, BackboneInit, InputMode, ModelConfig, NormSlot, NORM_SLOT_POSITIONS};
pub use network::{backbone_stages, Aggregator, BatchCache, ClipCache, Component, Model, Stage};
