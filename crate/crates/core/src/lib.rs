//! Pedestrian crossing-intent prediction from short observation windows.
//!
//! The pipeline encodes a visual and a non-visual feature sequence, merges
//! similar frames into events by density-peaks clustering, attends over the
//! events within each branch, fuses the two branches and emits a crossing
//! probability.

pub mod cab;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod tmm;
pub mod train;

pub use cab::{AttentionTrace, CabParams};
pub use config::{Ablation, HeadKind, PipelineConfig};
pub use data::{load_dataset, save_dataset, Branch, FeatureSequence, SampleRecord};
pub use error::{Error, Result};
pub use metrics::{evaluate, MetricReport};
pub use model::ModelParams;
pub use numeric::{Matrix, RngState};
pub use tmm::{DensityProfile, EventSet};
pub use train::{train, Checkpoint, TrainReport};
