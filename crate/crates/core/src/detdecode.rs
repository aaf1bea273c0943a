//! Class-agnostic decoding of detector head outputs and temporal NMS.
//!
//! CenterNet head files reuse the feature container with magic `OVTH`: `dim` is 3 (columns
//! heatmap, width, offset, time-major), `frames` is the number of cells, the f32 rate slot
//! holds the stride in seconds per cell, and one flags byte follows the video id
//! (bit 0 set: the heatmap column holds logits).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{decode, encode};
use crate::fsutil::write_atomic;
use crate::types::{Segment, SegmentDetection};

pub const HEAD_MAGIC: [u8; 4] = *b"OVTH";
pub const HEAD_EXTENSION: &str = "ovth";
pub const DETR_EXTENSION: &str = "detr.json";
pub const DETR_MAX_PROPOSALS: usize = 64;
pub const DEFAULT_TOP_K: usize = 512;
pub const DEFAULT_PEAK_WINDOW: usize = 2;
pub const DEFAULT_NMS_IOU: f64 = 0.6;

const FLAG_LOGITS: u8 = 1;

/// Per-cell CenterNet outputs for one video. The heatmap holds probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterNetOutput {
    pub video_id: String,
    /// Seconds per output cell.
    pub stride: f64,
    pub heatmap: Vec<f64>,
    /// Segment widths in cells.
    pub widths: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl CenterNetOutput {
    pub fn new(
        video_id: impl Into<String>,
        stride: f64,
        heatmap: Vec<f64>,
        widths: Vec<f64>,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        let len = heatmap.len();
        if widths.len() != len || offsets.len() != len {
            return Err(Error::arg(format!(
                "head lengths differ: heatmap {len}, width {}, offset {}",
                widths.len(),
                offsets.len()
            )));
        }
        if len == 0 {
            return Err(Error::arg("empty head output"));
        }
        if !(stride.is_finite() && stride > 0.0) {
            return Err(Error::arg(format!("stride must be positive, got {stride}")));
        }
        if heatmap.iter().any(|h| !(0.0..=1.0).contains(h)) {
            return Err(Error::arg("heatmap values must lie in [0, 1]"));
        }
        if widths.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::arg("widths must be finite and >= 0"));
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::NonFinite("offset".into()));
        }
        Ok(CenterNetOutput { video_id: video_id.into(), stride, heatmap, widths, offsets })
    }

    /// Like [`CenterNetOutput::new`] with the heatmap given as logits.
    pub fn from_logits(
        video_id: impl Into<String>,
        stride: f64,
        logits: &[f64],
        widths: Vec<f64>,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("heatmap logit".into()));
        }
        let heatmap = logits.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        Self::new(video_id, stride, heatmap, widths, offsets)
    }

    pub fn len(&self) -> usize {
        self.heatmap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heatmap.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let data: Vec<f32> = (0..self.len())
            .flat_map(|i| [self.heatmap[i] as f32, self.widths[i] as f32, self.offsets[i] as f32])
            .collect();
        encode(HEAD_MAGIC, &self.video_id, self.stride as f32, 3, self.len(), &data, Some(0))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = decode(HEAD_MAGIC, bytes, true)?;
        if raw.dim != 3 {
            return Err(Error::Parse {
                what: "head file",
                message: format!("expected 3 channels, found {}", raw.dim),
            });
        }
        let col = |k: usize| -> Vec<f64> { raw.data.chunks_exact(3).map(|r| r[k] as f64).collect() };
        let (h, w, o) = (col(0), col(1), col(2));
        if h.iter().chain(&w).chain(&o).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("head file".into()));
        }
        if raw.flags & FLAG_LOGITS != 0 {
            Self::from_logits(raw.video_id, raw.rate as f64, &h, w, o)
        } else {
            Self::new(raw.video_id, raw.rate as f64, h, w, o)
        }
    }
}

pub fn read_heads(path: impl AsRef<Path>) -> Result<CenterNetOutput> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    CenterNetOutput::from_bytes(&bytes)
}

pub fn write_heads(heads: &CenterNetOutput, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &heads.to_bytes())
}

/// Indices whose value is strictly greater than every other value within `window` cells.
pub fn local_peaks(values: &[f64], window: usize) -> Vec<usize> {
    (0..values.len())
        .filter(|&i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(values.len());
            (lo..hi).all(|j| j == i || values[i] > values[j])
        })
        .collect()
}

/// Decodes up to `top_k` peaks into segments clipped to `[0, bound]`.
///
/// `bound` defaults to the head extent (`len * stride`).
pub fn decode_centernet(
    out: &CenterNetOutput,
    top_k: usize,
    peak_window: usize,
    bound: Option<f64>,
) -> Result<Vec<SegmentDetection>> {
    if top_k < 1 {
        return Err(Error::arg("top_k must be >= 1"));
    }
    let bound = bound.unwrap_or(out.len() as f64 * out.stride);
    let mut peaks = local_peaks(&out.heatmap, peak_window);
    peaks.sort_by(|&a, &b| out.heatmap[b].total_cmp(&out.heatmap[a]).then(a.cmp(&b)));
    peaks.truncate(top_k);
    let mut dets = Vec::with_capacity(peaks.len());
    for i in peaks {
        let center = (i as f64 + out.offsets[i]) * out.stride;
        let half = 0.5 * out.widths[i] * out.stride;
        let Ok(raw) = Segment::new(center - half, center + half) else { continue };
        if let Some(segment) = raw.clip(0.0, bound) {
            dets.push(SegmentDetection::agnostic(segment, out.heatmap[i])?);
        }
    }
    Ok(dets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetrProposal {
    /// Normalized center in [0, 1].
    pub center: f64,
    /// Normalized width in (0, 1].
    pub width: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetrOutput {
    pub video_id: String,
    pub proposals: Vec<DetrProposal>,
}

impl DetrOutput {
    pub fn new(video_id: impl Into<String>, proposals: Vec<DetrProposal>) -> Result<Self> {
        if proposals.len() > DETR_MAX_PROPOSALS {
            return Err(Error::arg(format!(
                "{} proposals exceed the maximum of {DETR_MAX_PROPOSALS}",
                proposals.len()
            )));
        }
        for p in &proposals {
            if !(0.0..=1.0).contains(&p.center) || !(p.width > 0.0 && p.width <= 1.0) || !(0.0..=1.0).contains(&p.score) {
                return Err(Error::arg(format!("proposal out of range: {p:?}")));
            }
        }
        Ok(DetrOutput { video_id: video_id.into(), proposals })
    }

    pub fn parse(video_id: impl Into<String>, text: &str) -> Result<Self> {
        let proposals: Vec<DetrProposal> =
            serde_json::from_str(text).map_err(|e| Error::json("DETR proposals", e))?;
        Self::new(video_id, proposals)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(&self.proposals).expect("serialization cannot fail");
        s.push('\n');
        s
    }
}

pub fn decode_detr(out: &DetrOutput, duration: f64, score_threshold: f64) -> Result<Vec<SegmentDetection>> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::arg(format!("duration must be positive, got {duration}")));
    }
    let mut dets = Vec::new();
    for p in &out.proposals {
        if p.score < score_threshold {
            continue;
        }
        let start = (p.center - 0.5 * p.width) * duration;
        let end = (p.center + 0.5 * p.width) * duration;
        let Some(segment) = Segment::new(start, end)?.clip(0.0, duration) else { continue };
        dets.push(SegmentDetection::agnostic(segment, p.score)?);
    }
    Ok(dets)
}

/// Greedy temporal non-maximum suppression.
///
/// Candidates are visited by descending score (ties: earlier start, then input order). A
/// candidate is kept iff its IoU with every kept detection (of the same label when
/// `class_aware`) is below `iou_threshold`.
pub fn nms(
    detections: &[SegmentDetection],
    iou_threshold: f64,
    class_aware: bool,
) -> Result<Vec<SegmentDetection>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::arg(format!("NMS threshold {iou_threshold} not in (0, 1]")));
    }
    if detections.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::NonFinite("detection score".into()));
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.score
            .total_cmp(&da.score)
            .then(da.segment.start().total_cmp(&db.segment.start()))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<SegmentDetection> = Vec::new();
    for i in order {
        let cand = &detections[i];
        let suppressed = kept.iter().any(|k| {
            (!class_aware || k.label == cand.label) && k.segment.iou(&cand.segment) >= iou_threshold
        });
        if !suppressed {
            kept.push(cand.clone());
        }
    }
    Ok(kept)
}
