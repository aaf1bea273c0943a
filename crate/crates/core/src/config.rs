use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Subset;
use crate::detdecode::{DEFAULT_NMS_IOU, DEFAULT_PEAK_WINDOW, DEFAULT_TOP_K};
use crate::error::{Error, Result};
use crate::metrics::{Preset, DEFAULT_RECALL_NS};
use crate::ovclassify::ScoreRule;
use crate::trainmath::TrainConstants;

/// Every tunable constant of the pipeline. Loaded from JSON; missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub top_k: usize,
    pub peak_window: usize,
    pub nms_iou: f64,
    pub nms_class_aware: bool,
    pub detr_score_threshold: f64,
    pub temperature: f64,
    pub score_rule: ScoreRule,
    pub preset: Preset,
    pub recall_ns: Vec<usize>,
    pub subset: Option<Subset>,
    pub train: TrainConstants,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            top_k: DEFAULT_TOP_K,
            peak_window: DEFAULT_PEAK_WINDOW,
            nms_iou: DEFAULT_NMS_IOU,
            nms_class_aware: false,
            detr_score_threshold: 0.0,
            temperature: 1.0,
            score_rule: ScoreRule::Product,
            preset: Preset::Activitynet,
            recall_ns: DEFAULT_RECALL_NS.to_vec(),
            subset: Some(Subset::Validation),
            train: TrainConstants::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json("config", e))
    }
}
