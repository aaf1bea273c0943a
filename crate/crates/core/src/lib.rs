//! Open-vocabulary temporal action detection: label splits, feature stores, zero-shot
//! classification, detector decoding, training math and evaluation.

pub mod config;
pub mod dataset;
pub mod detdecode;
pub mod error;
pub mod featurestore;
pub mod fsutil;
pub mod metrics;
pub mod ovclassify;
pub mod pipeline;
pub mod segfile;
pub mod splits;
pub mod synth;
pub mod taxonomy;
pub mod trainmath;
pub mod types;

pub use config::PipelineConfig;
pub use dataset::{AnnotatedDataset, Annotation, Subset, VideoRecord};
pub use detdecode::{CenterNetOutput, DetrOutput, DetrProposal};
pub use error::{Error, Result};
pub use featurestore::{FeatureSequence, TextEmbeddingSet};
pub use metrics::{EvalConfig, EvalReport, Preset};
pub use ovclassify::{ClassScores, LabelMode, ScoreRule};
pub use splits::{LabelSplit, Provenance, Side};
pub use taxonomy::Taxonomy;
pub use trainmath::{Assignment, CostMatrix, TrainConstants};
pub use types::{Segment, SegmentDetection, VideoDetections};
