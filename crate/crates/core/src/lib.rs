//! Semantic video object segmentation.
//!
//! Object proposals scored by a classifier are pooled into per-superpixel
//! class confidences, adapted by label propagation over a space-time
//! superpixel graph, and turned into masks by a binary MRF combining
//! colour models, the adapted confidences and the graph affinities.

pub mod confidence;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gmm;
pub mod graph;
pub mod mrf;
pub mod pipeline;
pub mod propagation;
pub mod proposal;
pub mod synth;
pub mod video;

pub use confidence::{ConfidenceField, Derivation};
pub use error::{Error, Result};
pub use exec::Exec;
pub use graph::SpaceTimeGraph;
pub use pipeline::{run_pipeline, PipelineConfig};
pub use video::{BinaryMask, FlowField, SuperpixelMap, VideoVolume};
