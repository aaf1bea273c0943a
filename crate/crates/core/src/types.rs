//! Segment primitives shared by every stage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A half-open temporal interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    start: f64,
    end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidSegment { start, end, reason: "non-finite bound" });
        }
        if end <= start {
            return Err(Error::InvalidSegment { start, end, reason: "end must exceed start" });
        }
        Ok(Segment { start, end })
    }

    #[inline]
    pub fn start(&self) -> f64 {
        self.start
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.end
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    #[inline]
    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn intersection(&self, other: &Segment) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    /// Temporal intersection over union, 0 for disjoint segments.
    pub fn iou(&self, other: &Segment) -> f64 {
        let inter = self.intersection(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.length() + other.length() - inter;
        inter / union
    }

    /// Clips to `[lo, hi]`, returning `None` when nothing of positive length remains.
    pub fn clip(&self, lo: f64, hi: f64) -> Option<Segment> {
        let start = self.start.max(lo);
        let end = self.end.min(hi);
        Segment::new(start, end).ok()
    }
}

/// A scored segment, optionally carrying a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDetection {
    pub segment: Segment,
    pub score: f64,
    pub label: Option<String>,
}

impl SegmentDetection {
    pub fn new(segment: Segment, score: f64, label: Option<String>) -> Result<Self> {
        if !score.is_finite() || score < 0.0 {
            return Err(Error::arg(format!("detection score must be finite and >= 0, got {score}")));
        }
        Ok(SegmentDetection { segment, score, label })
    }

    pub fn agnostic(segment: Segment, score: f64) -> Result<Self> {
        Self::new(segment, score, None)
    }
}

/// Detections keyed by video id. Ordered so iteration is reproducible.
pub type VideoDetections = BTreeMap<String, Vec<SegmentDetection>>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_reversed_and_empty() {
        assert!(Segment::new(5.0, 2.0).is_err());
        assert!(Segment::new(2.0, 2.0).is_err());
        assert!(Segment::new(0.0, f64::NAN).is_err());
        assert!(Segment::new(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn iou_cases() {
        let a = Segment::new(0.0, 10.0).unwrap();
        let b = Segment::new(5.0, 15.0).unwrap();
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        let c = Segment::new(0.0, 1.0).unwrap();
        let d = Segment::new(2.0, 3.0).unwrap();
        assert_eq!(c.iou(&d), 0.0);
        // touching intervals do not overlap
        let e = Segment::new(1.0, 2.0).unwrap();
        assert_eq!(c.iou(&e), 0.0);
    }

    #[test]
    fn clip_drops_empty() {
        let s = Segment::new(-3.0, 7.0).unwrap();
        assert_eq!(s.clip(0.0, 100.0), Some(Segment::new(0.0, 7.0).unwrap()));
        assert_eq!(s.clip(7.0, 100.0), None);
    }

    #[test]
    fn negative_score_rejected() {
        let s = Segment::new(0.0, 1.0).unwrap();
        assert!(SegmentDetection::agnostic(s, -0.1).is_err());
        assert!(SegmentDetection::agnostic(s, f64::NAN).is_err());
        assert!(SegmentDetection::agnostic(s, 0.0).is_ok());
    }
}
