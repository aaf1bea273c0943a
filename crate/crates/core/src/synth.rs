//! Synthetic datasets with known answers for every pipeline stage.
//!
//! Class text embeddings are the first `n_classes` standard basis vectors. Frames inside a
//! planted segment are the class embedding plus Gaussian noise, renormalized; all other frames
//! are random unit vectors. Segments have integer boundaries, length >= 2 s and gaps >= 1 s, so
//! rendered CenterNet peaks are at least three cells apart.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedDataset, Annotation, Subset, VideoRecord};
use crate::detdecode::{write_heads, CenterNetOutput, HEAD_EXTENSION};
use crate::error::{Error, Result};
use crate::featurestore::{feature_path, write_features, FeatureSequence, TextEmbeddingSet};
use crate::fsutil::write_atomic;
use crate::segfile::write_segments;
use crate::trainmath::{render_targets, TrainConstants};
use crate::types::{Segment, SegmentDetection, VideoDetections};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_videos: usize,
    pub n_classes: usize,
    /// Inclusive range of video durations in whole seconds.
    pub duration: (u32, u32),
    pub segments_per_video: (usize, usize),
    /// Inclusive range of planted segment lengths in seconds (minimum 2).
    pub segment_length: (u32, u32),
    pub dim: usize,
    pub feature_sigma: f64,
    /// Standard deviation of boundary noise on oracle detections, seconds.
    pub boundary_jitter: f64,
    /// Standard deviation of the score noise on oracle detections.
    pub score_noise: f64,
    /// Fraction of planted segments that are unannotated distractors.
    pub distractor_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            n_videos: 50,
            n_classes: 10,
            duration: (40, 120),
            segments_per_video: (1, 5),
            segment_length: (2, 12),
            dim: 32,
            feature_sigma: 0.0,
            boundary_jitter: 0.0,
            score_noise: 0.0,
            distractor_rate: 0.0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_videos == 0 || self.n_classes == 0 {
            return Err(Error::arg("synth needs at least one video and one class"));
        }
        if self.dim < self.n_classes {
            return Err(Error::arg(format!(
                "dim {} is smaller than n_classes {}",
                self.dim, self.n_classes
            )));
        }
        if self.duration.0 > self.duration.1 || self.duration.0 < 4 {
            return Err(Error::arg("duration range must be ordered and start at >= 4 s"));
        }
        if self.segments_per_video.0 > self.segments_per_video.1 || self.segments_per_video.0 == 0 {
            return Err(Error::arg("segments_per_video must be an ordered range starting at >= 1"));
        }
        if self.segment_length.0 < 2 || self.segment_length.0 > self.segment_length.1 {
            return Err(Error::arg("segment_length must be ordered with minimum >= 2"));
        }
        for (name, v) in [
            ("feature_sigma", self.feature_sigma),
            ("boundary_jitter", self.boundary_jitter),
            ("score_noise", self.score_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::arg(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::arg("distractor_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSegment {
    pub segment: Segment,
    pub label: String,
    pub distractor: bool,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: AnnotatedDataset,
    pub features: BTreeMap<String, FeatureSequence>,
    pub texts: TextEmbeddingSet,
    /// Every planted segment, annotated or not.
    pub planted: BTreeMap<String, Vec<PlantedSegment>>,
    /// Class-agnostic detections around every planted segment.
    pub oracle_detections: VideoDetections,
    pub heads: BTreeMap<String, CenterNetOutput>,
}

pub fn class_label(i: usize) -> String {
    format!("class_{i:03}")
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<String> = (0..spec.n_classes).map(class_label).collect();
    let basis: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|i| {
            let mut r = vec![0.0; spec.dim];
            r[i] = 1.0;
            r
        })
        .collect();
    let texts = TextEmbeddingSet::new(labels.clone(), basis.clone())?;
    let feature_noise = Normal::new(0.0, spec.feature_sigma).expect("sigma validated");
    let jitter = Normal::new(0.0, spec.boundary_jitter).expect("jitter validated");
    let score_noise = Normal::new(0.0, spec.score_noise).expect("noise validated");
    let consts = TrainConstants::default();
    let width = (spec.n_videos.saturating_sub(1)).to_string().len();

    let mut videos = Vec::with_capacity(spec.n_videos);
    let mut features = BTreeMap::new();
    let mut planted_all = BTreeMap::new();
    let mut oracle = VideoDetections::new();
    let mut heads = BTreeMap::new();

    for v in 0..spec.n_videos {
        let video_id = format!("synth_{v:0width$}");
        let duration = rng.random_range(spec.duration.0..=spec.duration.1);
        let wanted = rng.random_range(spec.segments_per_video.0..=spec.segments_per_video.1);

        let mut planted = Vec::new();
        let mut cursor = rng.random_range(0..=2u32);
        while planted.len() < wanted {
            let len = rng.random_range(spec.segment_length.0..=spec.segment_length.1);
            if cursor + len > duration {
                break;
            }
            let segment = Segment::new(cursor as f64, (cursor + len) as f64)?;
            let label = labels[rng.random_range(0..spec.n_classes)].clone();
            let distractor = rng.random_bool(spec.distractor_rate);
            planted.push(PlantedSegment { segment, label, distractor });
            cursor += len + rng.random_range(1..=4u32);
        }
        if planted.is_empty() || planted.iter().all(|p| p.distractor) {
            // Guarantee at least one annotated segment per video.
            let len = spec.segment_length.0.min(duration);
            let segment = Segment::new(0.0, len as f64)?;
            let label = labels[rng.random_range(0..spec.n_classes)].clone();
            match planted.first_mut() {
                Some(first) if first.segment.start() == 0.0 => first.distractor = false,
                _ => {
                    planted.retain(|p| p.segment.start() >= len as f64 + 1.0);
                    planted.insert(0, PlantedSegment { segment, label, distractor: false });
                }
            }
        }

        let frames = duration as usize;
        let mut data = Vec::with_capacity(frames * spec.dim);
        for t in 0..frames {
            let inside = planted
                .iter()
                .find(|p| (t as f64) >= p.segment.start() && (t as f64) < p.segment.end());
            let row = match inside {
                Some(p) => {
                    let c = labels.binary_search(&p.label).expect("planted label exists");
                    let raw: Vec<f64> =
                        basis[c].iter().map(|&b| b + feature_noise.sample(&mut rng)).collect();
                    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                    raw.into_iter().map(|x| x / n).collect()
                }
                None => random_unit(&mut rng, spec.dim),
            };
            data.extend(row.into_iter().map(|x| x as f32));
        }
        features.insert(video_id.clone(), FeatureSequence::new(video_id.clone(), 1.0, spec.dim, data)?);

        let mut dets = Vec::with_capacity(planted.len());
        for p in &planted {
            let s = p.segment.start() + jitter.sample(&mut rng);
            let e = p.segment.end() + jitter.sample(&mut rng);
            let segment = Segment::new(s.min(e), s.max(e))
                .ok()
                .and_then(|seg| seg.clip(0.0, duration as f64))
                .unwrap_or(p.segment);
            let score = (1.0 - score_noise.sample(&mut rng).abs()).clamp(0.01, 1.0);
            dets.push(SegmentDetection::agnostic(segment, score)?);
        }
        oracle.insert(video_id.clone(), dets);

        let gt: Vec<Segment> = planted.iter().map(|p| p.segment).collect();
        heads.insert(video_id.clone(), render_targets(&video_id, &gt, frames, 1.0, &consts)?.heads);

        videos.push(VideoRecord {
            video_id: video_id.clone(),
            duration: duration as f64,
            subset: Subset::Validation,
            annotations: planted
                .iter()
                .filter(|p| !p.distractor)
                .map(|p| Annotation { segment: p.segment, label: p.label.clone() })
                .collect(),
        });
        planted_all.insert(video_id, planted);
    }

    Ok(SynthData {
        dataset: AnnotatedDataset::new(videos, labels)?,
        features,
        texts,
        planted: planted_all,
        oracle_detections: oracle,
        heads,
    })
}

/// File names written by [`SynthData::write`] inside the output directory.
pub mod layout {
    pub const DATASET: &str = "dataset.json";
    pub const TEXTS: &str = "texts.json";
    pub const VOCABULARY: &str = "vocabulary.txt";
    pub const ORACLE: &str = "oracle_detections.jsonl";
    pub const FEATURES_DIR: &str = "features";
    pub const HEADS_DIR: &str = "heads";
}

impl SynthData {
    /// Writes every artifact in the production file formats.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let fdir = dir.join(layout::FEATURES_DIR);
        let hdir = dir.join(layout::HEADS_DIR);
        for d in [dir, &fdir, &hdir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        write_atomic(dir.join(layout::DATASET), self.dataset.to_json().as_bytes())?;
        write_atomic(dir.join(layout::TEXTS), self.texts.to_json().as_bytes())?;
        let mut vocab = self.dataset.vocabulary().join("\n");
        vocab.push('\n');
        write_atomic(dir.join(layout::VOCABULARY), vocab.as_bytes())?;
        write_segments(&self.oracle_detections, dir.join(layout::ORACLE))?;
        for (id, seq) in &self.features {
            write_features(seq, feature_path(&fdir, id))?;
        }
        for (id, h) in &self.heads {
            write_heads(h, hdir.join(format!("{id}.{HEAD_EXTENSION}")))?;
        }
        Ok(())
    }
}
