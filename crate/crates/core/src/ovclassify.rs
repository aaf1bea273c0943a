//! Segment classification against label text embeddings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::AnnotatedDataset;
use crate::error::{Error, Result};
use crate::featurestore::{FeatureSequence, TextEmbeddingSet};
use crate::types::SegmentDetection;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub labels: Vec<String>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ClassScores {
    /// Index of the highest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate().skip(1) {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    /// Indices of the `k` most probable labels, ties broken by index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probabilities.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probabilities[b].total_cmp(&self.probabilities[a]).then(a.cmp(&b))
        });
        idx.truncate(k);
        idx
    }
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Scores a pooled segment feature against every label.
///
/// The pooled vector is L2-normalized, so logits are cosine similarities.
pub fn classify(pooled: &[f64], texts: &TextEmbeddingSet, temperature: f64) -> Result<ClassScores> {
    if pooled.len() != texts.dim() {
        return Err(Error::DimMismatch { expected: texts.dim(), got: pooled.len() });
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::arg(format!("temperature must be positive, got {temperature}")));
    }
    let norm = pooled.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::arg("cannot classify a zero or non-finite pooled feature"));
    }
    let logits: Vec<f64> = (0..texts.len())
        .map(|i| texts.embedding(i).iter().zip(pooled).map(|(t, p)| t * p).sum::<f64>() / norm)
        .collect();
    let probabilities = softmax(&logits, temperature);
    Ok(ClassScores { labels: texts.labels().to_vec(), logits, probabilities })
}

/// Per-k hit counts for ground-truth segment classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GtClassification {
    pub ks: Vec<usize>,
    pub hits: Vec<usize>,
    pub segments: usize,
    /// Videos with annotations but no feature sequence.
    pub missing_videos: Vec<String>,
    pub skipped_segments: usize,
}

impl GtClassification {
    pub fn accuracy(&self, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        Some(if self.segments == 0 { 0.0 } else { self.hits[i] as f64 / self.segments as f64 })
    }
}

/// Classifies every annotation of `dataset` using the texts of its vocabulary.
///
/// Videos without features are collected in `missing_videos` instead of failing.
pub fn classify_ground_truth(
    dataset: &AnnotatedDataset,
    features: &BTreeMap<String, FeatureSequence>,
    texts: &TextEmbeddingSet,
    ks: &[usize],
    temperature: f64,
) -> Result<GtClassification> {
    if ks.contains(&0) {
        return Err(Error::arg("k must be >= 1"));
    }
    let texts = texts.restrict(dataset.vocabulary())?;
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let mut out = GtClassification {
        ks: ks.to_vec(),
        hits: vec![0; ks.len()],
        segments: 0,
        missing_videos: Vec::new(),
        skipped_segments: 0,
    };
    for video in dataset.videos().values().filter(|v| !v.annotations.is_empty()) {
        let Some(seq) = features.get(&video.video_id) else {
            out.missing_videos.push(video.video_id.clone());
            out.skipped_segments += video.annotations.len();
            continue;
        };
        for ann in &video.annotations {
            let pooled = seq.pool_segment(&ann.segment).map_err(|e| Error::Video {
                video_id: video.video_id.clone(),
                message: e.to_string(),
            })?;
            let scores = classify(&pooled, &texts, temperature)?;
            let truth = texts.index_of(&ann.label).ok_or_else(|| Error::UnknownLabel(ann.label.clone()))?;
            let ranked = scores.top_k(kmax);
            let rank = ranked.iter().position(|&i| i == truth);
            for (slot, &k) in ks.iter().enumerate() {
                if rank.is_some_and(|r| r < k) {
                    out.hits[slot] += 1;
                }
            }
            out.segments += 1;
        }
    }
    Ok(out)
}

/// Fraction of ground-truth segments whose label is among the `k` most probable.
pub fn topk_accuracy(
    dataset: &AnnotatedDataset,
    features: &BTreeMap<String, FeatureSequence>,
    texts: &TextEmbeddingSet,
    k: usize,
) -> Result<f64> {
    let res = classify_ground_truth(dataset, features, texts, &[k], 1.0)?;
    if let Some(v) = res.missing_videos.first() {
        return Err(Error::Video { video_id: v.clone(), message: "no feature sequence".into() });
    }
    Ok(res.accuracy(k).unwrap_or(0.0))
}

/// How a detection's confidence combines with the class probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRule {
    /// detector score x class probability
    #[default]
    Product,
    ClassProbability,
    DetectorScore,
}

impl ScoreRule {
    fn combine(self, detector: f64, probability: f64) -> f64 {
        match self {
            ScoreRule::Product => detector * probability,
            ScoreRule::ClassProbability => probability,
            ScoreRule::DetectorScore => detector,
        }
    }
}

impl std::str::FromStr for ScoreRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(ScoreRule::Product),
            "class_probability" => Ok(ScoreRule::ClassProbability),
            "detector_score" => Ok(ScoreRule::DetectorScore),
            other => Err(Error::arg(format!("unknown score rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LabelMode {
    /// One detection carrying the argmax label.
    #[default]
    Top1,
    /// One detection per label.
    FanOut,
}

pub fn classify_detections(
    detections: &[SegmentDetection],
    features: &FeatureSequence,
    texts: &TextEmbeddingSet,
    temperature: f64,
    rule: ScoreRule,
    mode: LabelMode,
) -> Result<Vec<SegmentDetection>> {
    let mut out = Vec::with_capacity(detections.len());
    for det in detections {
        let pooled = features.pool_segment(&det.segment)?;
        let scores = classify(&pooled, texts, temperature)?;
        match mode {
            LabelMode::Top1 => {
                let best = scores.argmax();
                out.push(SegmentDetection {
                    segment: det.segment,
                    score: rule.combine(det.score, scores.probabilities[best]),
                    label: Some(scores.labels[best].clone()),
                });
            }
            LabelMode::FanOut => {
                for (label, &p) in scores.labels.iter().zip(&scores.probabilities) {
                    out.push(SegmentDetection {
                        segment: det.segment,
                        score: rule.combine(det.score, p),
                        label: Some(label.clone()),
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Segment;
    use proptest::prelude::*;

    fn basis(labels: &[&str], dim: usize) -> TextEmbeddingSet {
        let rows = (0..labels.len())
            .map(|i| {
                let mut r = vec![0.0; dim];
                r[i] = 1.0;
                r
            })
            .collect();
        TextEmbeddingSet::new(labels.iter().map(|s| s.to_string()).collect(), rows).unwrap()
    }

    #[test]
    fn orthonormal_pair() {
        let texts = basis(&["a", "b"], 2);
        let s = classify(&[1.0, 0.0], &texts, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((s.probabilities[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((s.probabilities[0] - 0.73106).abs() < 1e-5);
        assert!((s.probabilities[1] - 0.26894).abs() < 1e-5);
        assert_eq!(s.argmax(), 0);
    }

    #[test]
    fn single_label_is_certain() {
        let texts = basis(&["only"], 3);
        let s = classify(&[0.2, -5.0, 1.0], &texts, 1.0).unwrap();
        assert_eq!(s.probabilities, vec![1.0]);
    }

    #[test]
    fn tie_goes_to_first() {
        let texts = basis(&["a", "b"], 2);
        let s = classify(&[1.0, 1.0], &texts, 1.0).unwrap();
        assert_eq!(s.argmax(), 0);
        assert_eq!(s.top_k(2), vec![0, 1]);
    }

    #[test]
    fn errors() {
        let texts = basis(&["a", "b"], 2);
        assert!(matches!(classify(&[1.0], &texts, 1.0), Err(Error::DimMismatch { .. })));
        assert!(classify(&[0.0, 0.0], &texts, 1.0).is_err());
        assert!(classify(&[1.0, 0.0], &texts, 0.0).is_err());
    }

    #[test]
    fn high_temperature_is_uniform() {
        let texts = basis(&["a", "b", "c", "d"], 4);
        let s = classify(&[0.9, -0.3, 0.1, 0.4], &texts, 1e6).unwrap();
        for p in s.probabilities {
            assert!((p - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn detection_labels_and_scores() {
        let texts = basis(&["a", "b"], 2);
        let feats = FeatureSequence::from_rows("v", 1.0, &[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let seg = Segment::new(0.0, 2.0).unwrap();
        let dets = vec![
            SegmentDetection::agnostic(seg, 1.0).unwrap(),
            SegmentDetection::agnostic(seg, 0.0).unwrap(),
        ];
        let out = classify_detections(&dets, &feats, &texts, 1.0, ScoreRule::Product, LabelMode::Top1).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out[0].score - 0.73106).abs() < 1e-5);
        assert_eq!(out[0].label.as_deref(), Some("a"));
        assert_eq!(out[1].score, 0.0);

        let texts3 = basis(&["a", "b", "c"], 3);
        let feats3 = FeatureSequence::from_rows("v", 1.0, &[vec![0.3, 0.5, 0.1]]).unwrap();
        let det = SegmentDetection::agnostic(Segment::new(0.0, 1.0).unwrap(), 0.8).unwrap();
        let fan = classify_detections(&[det], &feats3, &texts3, 1.0, ScoreRule::Product, LabelMode::FanOut).unwrap();
        assert_eq!(fan.len(), 3);
        assert!((fan.iter().map(|d| d.score).sum::<f64>() - 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn argmax_invariances(
            pooled in proptest::collection::vec(-1.0f64..1.0, 6),
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 6), 1..8),
            shift in -50.0f64..50.0,
            lambda in 0.01f64..100.0,
        ) {
            prop_assume!(pooled.iter().any(|x| x.abs() > 1e-3));
            prop_assume!(rows.iter().all(|r| r.iter().any(|x| x.abs() > 1e-3)));
            let labels: Vec<String> = (0..rows.len()).map(|i| format!("l{i}")).collect();
            let texts = TextEmbeddingSet::new(labels.clone(), rows.clone()).unwrap();
            let base = classify(&pooled, &texts, 1.0).unwrap();
            let sum: f64 = base.probabilities.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);

            let shifted: Vec<f64> = base.logits.iter().map(|l| l + shift).collect();
            let p = softmax(&shifted, 1.0);
            let sc = ClassScores { labels: labels.clone(), logits: shifted, probabilities: p };
            prop_assert_eq!(sc.argmax(), base.argmax());

            let scaled_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * lambda).collect()).collect();
            let scaled = TextEmbeddingSet::new(labels, scaled_rows).unwrap();
            prop_assert_eq!(classify(&pooled, &scaled, 1.0).unwrap().argmax(), base.argmax());
            let pooled_scaled: Vec<f64> = pooled.iter().map(|x| x * lambda).collect();
            prop_assert_eq!(classify(&pooled_scaled, &texts, 1.0).unwrap().argmax(), base.argmax());
        }

        #[test]
        fn probability_monotone_in_logit(logits in proptest::collection::vec(-5.0f64..5.0, 2..6), which in 0usize..6, bump in 0.01f64..3.0) {
            let i = which % logits.len();
            let p = softmax(&logits, 1.0);
            let mut raised = logits.clone();
            raised[i] += bump;
            prop_assert!(softmax(&raised, 1.0)[i] > p[i]);
        }
    }
}
