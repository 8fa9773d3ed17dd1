//! Temporal refinement of pose sequences: the SmoothNet network, classical
//! low-pass baselines, jitter-aware metrics, sliding-window inference and a
//! seeded trainer.

pub mod bench;
pub mod data;
pub mod error;
pub mod filters;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod trainer;
pub mod windowing;

pub use data::{PoseSequence, SequenceMeta};
pub use error::{Error, Result};
pub use filters::{apply_filter, FilterSpec};
pub use metrics::{evaluate, MetricsReport};
pub use model::{Checkpoint, SmoothNet, SmoothNetConfig, Variant};
pub use numerics::{Matrix, RngState};
pub use trainer::{train, TrainConfig};
pub use windowing::smooth_sequence;
