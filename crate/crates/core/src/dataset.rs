//! Annotated datasets in the public ActivityNet JSON layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Segment, SegmentDetection, VideoDetections};

/// Annotations may overshoot the video duration by this much (seconds); they are clamped.
pub const DURATION_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Training,
    Validation,
    Testing,
}

impl Subset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subset::Training => "training",
            Subset::Validation => "validation",
            Subset::Testing => "testing",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(Subset::Training),
            "validation" => Ok(Subset::Validation),
            "testing" => Ok(Subset::Testing),
            other => Err(Error::arg(format!("unknown subset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub segment: Segment,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration: f64,
    pub subset: Subset,
    pub annotations: Vec<Annotation>,
}

/// Videos plus a lexicographically ordered vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDataset {
    videos: BTreeMap<String, VideoRecord>,
    vocabulary: Vec<String>,
    clamped: usize,
}

impl AnnotatedDataset {
    /// Builds a dataset, checking that every annotation label is in `vocabulary`.
    ///
    /// The vocabulary is sorted and deduplicated.
    pub fn new(
        videos: impl IntoIterator<Item = VideoRecord>,
        vocabulary: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let vocabulary: Vec<String> =
            vocabulary.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut map = BTreeMap::new();
        for video in videos {
            for ann in &video.annotations {
                if vocabulary.binary_search(&ann.label).is_err() {
                    return Err(Error::Video {
                        video_id: video.video_id.clone(),
                        message: format!("label {:?} not in vocabulary", ann.label),
                    });
                }
                if ann.segment.start() < 0.0
                    || ann.segment.end() > video.duration + DURATION_TOLERANCE
                {
                    return Err(Error::Video {
                        video_id: video.video_id.clone(),
                        message: format!(
                            "annotation [{}, {}] outside [0, {}]",
                            ann.segment.start(),
                            ann.segment.end(),
                            video.duration
                        ),
                    });
                }
            }
            let id = video.video_id.clone();
            if map.insert(id.clone(), video).is_some() {
                return Err(Error::Video { video_id: id, message: "duplicate video id".into() });
            }
        }
        Ok(AnnotatedDataset { videos: map, vocabulary, clamped: 0 })
    }

    pub fn videos(&self) -> &BTreeMap<String, VideoRecord> {
        &self.videos
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.get(id)
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.vocabulary.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    /// Number of annotations whose end was clamped to the video duration on load.
    pub fn clamped_annotations(&self) -> usize {
        self.clamped
    }

    pub fn annotation_count(&self) -> usize {
        self.videos.values().map(|v| v.annotations.len()).sum()
    }

    /// Keeps only videos of the given subsets. Vocabulary is unchanged.
    pub fn filter_subsets(&self, subsets: &[Subset]) -> AnnotatedDataset {
        AnnotatedDataset {
            videos: self
                .videos
                .iter()
                .filter(|(_, v)| subsets.contains(&v.subset))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            vocabulary: self.vocabulary.clone(),
            clamped: self.clamped,
        }
    }

    /// Ground truth as labeled detections with score 1, one entry per annotated video.
    pub fn ground_truth(&self) -> VideoDetections {
        self.videos
            .values()
            .filter(|v| !v.annotations.is_empty())
            .map(|v| {
                let dets = v
                    .annotations
                    .iter()
                    .map(|a| SegmentDetection {
                        segment: a.segment,
                        score: 1.0,
                        label: Some(a.label.clone()),
                    })
                    .collect();
                (v.video_id.clone(), dets)
            })
            .collect()
    }

    /// Serializes back to the ActivityNet layout. Output is deterministic.
    pub fn to_json(&self) -> String {
        let database: BTreeMap<&str, RawVideo> = self
            .videos
            .values()
            .map(|v| {
                let raw = RawVideo {
                    duration: v.duration,
                    subset: v.subset.as_str().to_string(),
                    annotations: v
                        .annotations
                        .iter()
                        .map(|a| RawAnnotation {
                            segment: [a.segment.start(), a.segment.end()],
                            label: a.label.clone(),
                        })
                        .collect(),
                };
                (v.video_id.as_str(), raw)
            })
            .collect();
        let mut out = serde_json::to_string_pretty(&RawDatabaseOut { database })
            .expect("dataset serialization cannot fail");
        out.push('\n');
        out
    }
}

#[derive(Deserialize)]
struct RawDatabase {
    database: BTreeMap<String, RawVideo>,
}

#[derive(Serialize)]
struct RawDatabaseOut<'a> {
    database: BTreeMap<&'a str, RawVideo>,
}

#[derive(Serialize, Deserialize)]
struct RawVideo {
    duration: f64,
    subset: String,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    segment: [f64; 2],
    label: String,
}

/// Loads an ActivityNet-format annotation file.
///
/// The vocabulary is the sorted set of labels found in the file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<AnnotatedDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, None)
}

/// Like [`load_dataset`] but with an explicit vocabulary, which must contain every label.
pub fn load_dataset_with_vocabulary(
    path: impl AsRef<Path>,
    vocabulary: &[String],
) -> Result<AnnotatedDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, Some(vocabulary))
}

pub fn parse_dataset(text: &str, vocabulary: Option<&[String]>) -> Result<AnnotatedDataset> {
    let raw: RawDatabase = serde_json::from_str(text).map_err(|e| Error::json("dataset", e))?;
    let mut clamped = 0;
    let mut videos = Vec::with_capacity(raw.database.len());
    let mut seen_labels = BTreeSet::new();
    for (video_id, rv) in raw.database {
        if !rv.duration.is_finite() || rv.duration < 0.0 {
            return Err(Error::Video { video_id, message: format!("bad duration {}", rv.duration) });
        }
        let subset: Subset = rv
            .subset
            .parse()
            .map_err(|_| Error::Video { video_id: video_id.clone(), message: format!("unknown subset {:?}", rv.subset) })?;
        let mut annotations = Vec::with_capacity(rv.annotations.len());
        for ra in rv.annotations {
            let [start, mut end] = ra.segment;
            if start < 0.0 {
                return Err(Error::Video {
                    video_id,
                    message: format!("annotation {:?} starts before 0 ({start})", ra.label),
                });
            }
            if end > rv.duration {
                if end - rv.duration <= DURATION_TOLERANCE {
                    log::warn!(
                        "video {video_id}: annotation end {end} exceeds duration {}, clamped",
                        rv.duration
                    );
                    end = rv.duration;
                    clamped += 1;
                } else {
                    return Err(Error::Video {
                        video_id,
                        message: format!(
                            "annotation [{start}, {end}] exceeds duration {}",
                            rv.duration
                        ),
                    });
                }
            }
            let segment = Segment::new(start, end).map_err(|e| Error::Video {
                video_id: video_id.clone(),
                message: e.to_string(),
            })?;
            seen_labels.insert(ra.label.clone());
            annotations.push(Annotation { segment, label: ra.label });
        }
        videos.push(VideoRecord { video_id, duration: rv.duration, subset, annotations });
    }
    let vocab: Vec<String> = match vocabulary {
        Some(v) => v.to_vec(),
        None => seen_labels.into_iter().collect(),
    };
    let mut ds = AnnotatedDataset::new(videos, vocab)?;
    ds.clamped = clamped;
    Ok(ds)
}

/// Reads a vocabulary file: either a JSON array of strings or one label per line.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vocabulary(&text)
}

pub fn parse_vocabulary(text: &str) -> Result<Vec<String>> {
    let labels: Vec<String> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| Error::json("vocabulary", e))?
    } else {
        text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
    };
    let set: BTreeSet<String> = labels.iter().cloned().collect();
    if set.len() != labels.len() {
        return Err(Error::Parse { what: "vocabulary", message: "duplicate label".into() });
    }
    Ok(set.into_iter().collect())
}
