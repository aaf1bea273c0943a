//! Stage orchestration shared by the CLI: feature loading, detection decoding, labeling and
//! evaluation. Per-video failures are collected rather than aborting the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::dataset::AnnotatedDataset;
use crate::detdecode::{decode_centernet, decode_detr, nms, read_heads, DetrOutput, DETR_EXTENSION, HEAD_EXTENSION};
use crate::error::{Error, Result};
use crate::featurestore::{ensemble, feature_path, read_features, FeatureSequence, TextEmbeddingSet};
use crate::metrics::{aggregate, evaluate, strip_labels, Aggregate, EvalConfig, EvalReport, AGNOSTIC_LABEL};
use crate::ovclassify::{classify_detections, classify_ground_truth, GtClassification, LabelMode};
use crate::segfile::read_segments;
use crate::splits::{apply_split, LabelSplit, Side};
use crate::types::VideoDetections;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VideoError {
    pub video_id: String,
    pub message: String,
}

impl VideoError {
    fn new(video_id: &str, message: impl std::fmt::Display) -> Self {
        VideoError { video_id: video_id.to_string(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FeatureLoad {
    pub features: BTreeMap<String, FeatureSequence>,
    pub errors: Vec<VideoError>,
}

/// Reads `<dir>/<id>.ovtf` for every id and every dir. With several dirs the blocks are
/// ensembled in dir order.
pub fn load_features<'a>(dirs: &[PathBuf], video_ids: impl IntoIterator<Item = &'a str>) -> Result<FeatureLoad> {
    if dirs.is_empty() {
        return Err(Error::arg("no feature directory given"));
    }
    let ids: Vec<&str> = video_ids.into_iter().collect();
    let results: Vec<(String, Result<FeatureSequence>)> = ids
        .par_iter()
        .map(|&id| {
            let seqs: Result<Vec<FeatureSequence>> = dirs
                .iter()
                .map(|d| {
                    let seq = read_features(feature_path(d, id))?;
                    if seq.video_id() != id {
                        return Err(Error::Video {
                            video_id: id.to_string(),
                            message: format!("file declares video id {:?}", seq.video_id()),
                        });
                    }
                    Ok(seq)
                })
                .collect();
            let seq = seqs.and_then(|s| if s.len() == 1 { Ok(s.into_iter().next().unwrap()) } else { ensemble(&s) });
            (id.to_string(), seq)
        })
        .collect();
    let mut out = FeatureLoad::default();
    for (id, r) in results {
        match r {
            Ok(seq) => {
                out.features.insert(id, seq);
            }
            Err(e) => out.errors.push(VideoError::new(&id, e)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyGtReport {
    pub split: Option<String>,
    pub side: Option<String>,
    pub labels: usize,
    /// Fraction of annotated segments whose video had features.
    pub coverage: f64,
    #[serde(flatten)]
    pub result: GtClassification,
    /// Top-k accuracy keyed by k.
    pub accuracy: BTreeMap<usize, f64>,
}

impl ClassifyGtReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "segments: {}  labels: {}  skipped: {}  coverage: {:.1}%",
            self.result.segments,
            self.labels,
            self.result.skipped_segments,
            self.coverage * 100.0
        );
        for (k, acc) in &self.accuracy {
            let _ = writeln!(out, "top-{k}: {:.2}%", acc * 100.0);
        }
        out
    }
}

/// Classifies ground-truth segments, optionally restricted to one side of a split.
pub fn classify_gt(
    dataset: &AnnotatedDataset,
    split: Option<(&LabelSplit, Side)>,
    features: &BTreeMap<String, FeatureSequence>,
    texts: &TextEmbeddingSet,
    ks: &[usize],
    temperature: f64,
) -> Result<ClassifyGtReport> {
    let restricted;
    let ds = match split {
        Some((s, side)) => {
            restricted = apply_split(dataset, s, side)?;
            &restricted
        }
        None => dataset,
    };
    let result = classify_ground_truth(ds, features, texts, ks, temperature)?;
    let accuracy = ks.iter().map(|&k| (k, result.accuracy(k).unwrap_or(0.0))).collect();
    let total = result.segments + result.skipped_segments;
    let coverage = if total == 0 { 1.0 } else { result.segments as f64 / total as f64 };
    Ok(ClassifyGtReport {
        split: split.map(|(s, _)| s.name.clone()),
        side: split.map(|(_, side)| side.to_string()),
        labels: ds.vocabulary().len(),
        coverage,
        result,
        accuracy,
    })
}

/// Where class-agnostic detections come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DetectorSource {
    /// Directory of `<id>.ovth` CenterNet head files.
    CenterNet(PathBuf),
    /// Directory of `<id>.detr.json` proposal files.
    Detr(PathBuf),
    /// A segments file with precomputed detections.
    Segments(PathBuf),
}

#[derive(Debug, Clone, Default)]
pub struct Detections {
    pub detections: VideoDetections,
    pub errors: Vec<VideoError>,
}

fn decode_one(dataset: &AnnotatedDataset, id: &str, dir: &Path, centernet: bool, config: &PipelineConfig) -> Result<Vec<crate::types::SegmentDetection>> {
    let duration = dataset.video(id).expect("id comes from the dataset").duration;
    let dets = if centernet {
        let heads = read_heads(dir.join(format!("{id}.{HEAD_EXTENSION}")))?;
        if heads.video_id != id {
            return Err(Error::arg(format!("head file declares video id {:?}", heads.video_id)));
        }
        decode_centernet(&heads, config.top_k, config.peak_window, Some(duration))?
    } else {
        let path = dir.join(format!("{id}.{DETR_EXTENSION}"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        decode_detr(&DetrOutput::parse(id, &text)?, duration, config.detr_score_threshold)?
    };
    nms(&dets, config.nms_iou, config.nms_class_aware)
}

/// Produces class-agnostic detections for every video of `dataset`, after NMS.
pub fn detect(dataset: &AnnotatedDataset, source: &DetectorSource, config: &PipelineConfig) -> Result<Detections> {
    let mut out = Detections::default();
    match source {
        DetectorSource::Segments(path) => {
            let all = read_segments(path)?;
            for (id, video) in dataset.videos() {
                let raw: Vec<_> = all
                    .get(id)
                    .map(|ds| {
                        ds.iter()
                            .filter_map(|d| {
                                d.segment.clip(0.0, video.duration).map(|segment| crate::types::SegmentDetection {
                                    segment,
                                    ..d.clone()
                                })
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                out.detections.insert(id.clone(), nms(&raw, config.nms_iou, config.nms_class_aware)?);
            }
            let unknown = all.keys().filter(|k| dataset.video(k).is_none()).count();
            if unknown > 0 {
                log::warn!("{unknown} videos in the segments file are not in the dataset");
            }
        }
        DetectorSource::CenterNet(dir) | DetectorSource::Detr(dir) => {
            let centernet = matches!(source, DetectorSource::CenterNet(_));
            let results: Vec<(String, Result<_>)> = dataset
                .videos()
                .keys()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|id| ((*id).clone(), decode_one(dataset, id, dir, centernet, config)))
                .collect();
            for (id, r) in results {
                match r {
                    Ok(d) => {
                        out.detections.insert(id, d);
                    }
                    Err(e) => out.errors.push(VideoError::new(&id, e)),
                }
            }
        }
    }
    Ok(out)
}

/// Assigns each detection its top-1 label among `labels`.
pub fn label_detections(
    detections: &VideoDetections,
    features: &BTreeMap<String, FeatureSequence>,
    texts: &TextEmbeddingSet,
    labels: &[String],
    config: &PipelineConfig,
) -> Result<Detections> {
    let texts = texts.restrict(labels)?;
    let results: Vec<(String, Result<Vec<_>>)> = detections
        .par_iter()
        .map(|(id, dets)| {
            let r = match features.get(id) {
                Some(seq) => classify_detections(dets, seq, &texts, config.temperature, config.score_rule, LabelMode::Top1),
                None if dets.is_empty() => Ok(Vec::new()),
                None => Err(Error::arg("no feature sequence")),
            };
            (id.clone(), r)
        })
        .collect();
    let mut out = Detections::default();
    for (id, r) in results {
        match r {
            Ok(d) => {
                out.detections.insert(id, d);
            }
            Err(e) => out.errors.push(VideoError::new(&id, e)),
        }
    }
    Ok(out)
}

pub fn eval_config(config: &PipelineConfig, class_list: Vec<String>) -> Result<EvalConfig> {
    let base = EvalConfig::preset(config.preset, class_list);
    EvalConfig::new(base.iou_thresholds, config.recall_ns.clone(), base.ar_iou_thresholds, base.class_list)
}

/// Evaluates predictions against the dataset's ground truth. `agnostic` ignores labels.
pub fn evaluate_dataset(
    predictions: &VideoDetections,
    dataset: &AnnotatedDataset,
    config: &PipelineConfig,
    agnostic: bool,
) -> Result<EvalReport> {
    let gt = dataset.ground_truth();
    if agnostic {
        let cfg = eval_config(config, vec![AGNOSTIC_LABEL.to_string()])?;
        evaluate(&strip_labels(predictions), &strip_labels(&gt), &cfg)
    } else {
        let cfg = eval_config(config, dataset.vocabulary().to_vec())?;
        evaluate(predictions, &gt, &cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitRun {
    pub split: Option<String>,
    pub side: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct E2eOutput {
    pub runs: Vec<SplitRun>,
    pub aggregate: Option<Aggregate>,
    /// Class-agnostic evaluation of the proposals before labeling.
    pub proposals: EvalReport,
    pub detector_feature_dim: Option<usize>,
    pub errors: Vec<VideoError>,
    #[serde(skip)]
    pub labeled: Vec<VideoDetections>,
}

impl E2eOutput {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "class-agnostic proposals");
        out.push_str(&self.proposals.to_table());
        for run in &self.runs {
            let _ = writeln!(out, "\n{} ({})", run.split.as_deref().unwrap_or("full vocabulary"), run.side);
            out.push_str(&run.report.to_table());
        }
        if let Some(agg) = &self.aggregate {
            let _ = writeln!(out, "\nmean ± sem over {} splits", agg.splits);
            out.push_str(&agg.to_table(&self.runs[0].report.map.iou_thresholds));
        }
        if !self.errors.is_empty() {
            let _ = writeln!(out, "\n{} per-video errors", self.errors.len());
        }
        out
    }
}

pub struct E2eInputs<'a> {
    pub dataset: &'a AnnotatedDataset,
    /// Empty means the full dataset vocabulary.
    pub splits: &'a [LabelSplit],
    pub side: Side,
    pub source: &'a DetectorSource,
    pub feature_dirs: &'a [PathBuf],
    /// Detector-side features; only checked for presence and alignment.
    pub detector_feature_dirs: &'a [PathBuf],
    pub texts: &'a TextEmbeddingSet,
}

/// Detect, label and evaluate, once per split.
///
/// Predictions cover every video of the configured subset. Videos whose annotations all belong
/// to the other side contribute only false positives.
pub fn e2e(inputs: &E2eInputs, config: &PipelineConfig) -> Result<E2eOutput> {
    let dataset = match config.subset {
        Some(s) => inputs.dataset.filter_subsets(&[s]),
        None => inputs.dataset.clone(),
    };
    let mut errors = Vec::new();
    let mut detector_feature_dim = None;
    if !inputs.detector_feature_dirs.is_empty() {
        let det = load_features(inputs.detector_feature_dirs, dataset.videos().keys().map(String::as_str))?;
        for (id, seq) in &det.features {
            let duration = dataset.video(id).expect("loaded from dataset ids").duration;
            if (seq.duration() - duration).abs() > 1.0 / seq.fps() as f64 + crate::dataset::DURATION_TOLERANCE {
                log::warn!("{id}: detector features cover {:.2} s of a {duration:.2} s video", seq.duration());
            }
        }
        detector_feature_dim = det.features.values().next().map(FeatureSequence::dim);
        errors.extend(det.errors);
    }
    let proposals = detect(&dataset, inputs.source, config)?;
    errors.extend(proposals.errors);
    let features = load_features(inputs.feature_dirs, dataset.videos().keys().map(String::as_str))?;
    errors.extend(features.errors);
    let proposal_report = evaluate_dataset(&proposals.detections, &dataset, config, true)?;

    let targets: Vec<(Option<&LabelSplit>, AnnotatedDataset)> = if inputs.splits.is_empty() {
        vec![(None, dataset.clone())]
    } else {
        inputs
            .splits
            .iter()
            .map(|s| Ok((Some(s), apply_split(&dataset, s, inputs.side)?)))
            .collect::<Result<_>>()?
    };
    let mut runs = Vec::with_capacity(targets.len());
    let mut labeled_all = Vec::with_capacity(targets.len());
    for (split, ds) in targets {
        let labeled = label_detections(&proposals.detections, &features.features, inputs.texts, ds.vocabulary(), config)?;
        if split.is_none() || runs.is_empty() {
            errors.extend(labeled.errors);
        }
        let report = evaluate_dataset(&labeled.detections, &ds, config, false)?;
        runs.push(SplitRun {
            split: split.map(|s| s.name.clone()),
            side: inputs.side.to_string(),
            report,
        });
        labeled_all.push(labeled.detections);
    }
    let aggregate = if runs.len() > 1 {
        Some(aggregate(&runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?)
    } else {
        None
    };
    errors.sort_by(|a, b| a.video_id.cmp(&b.video_id).then(a.message.cmp(&b.message)));
    errors.dedup();
    Ok(E2eOutput {
        runs,
        aggregate,
        proposals: proposal_report,
        detector_feature_dim,
        errors,
        labeled: labeled_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, layout, SynthSpec};

    #[test]
    fn synthetic_run_from_disk() {
        let data = generate(&SynthSpec { n_videos: 8, n_classes: 4, dim: 8, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.write(dir.path()).unwrap();
        let fdirs = vec![dir.path().join(layout::FEATURES_DIR)];
        let source = DetectorSource::CenterNet(dir.path().join(layout::HEADS_DIR));
        let out = e2e(
            &E2eInputs {
                dataset: &data.dataset,
                splits: &[],
                side: Side::Eval,
                source: &source,
                feature_dirs: &fdirs,
                detector_feature_dirs: &[],
                texts: &data.texts,
            },
            &PipelineConfig::default(),
        )
        .unwrap();
        assert!(out.errors.is_empty(), "{:?}", out.errors);
        assert!((out.runs[0].report.map.map_avg - 1.0).abs() < 1e-12);
        assert!((out.proposals.map.map_avg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_features_are_per_video_errors() {
        let data = generate(&SynthSpec { n_videos: 3, n_classes: 2, dim: 4, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.write(dir.path()).unwrap();
        let fdir = dir.path().join(layout::FEATURES_DIR);
        let victim = data.dataset.videos().keys().next().unwrap().clone();
        std::fs::remove_file(feature_path(&fdir, &victim)).unwrap();
        let load = load_features(&[fdir], data.dataset.videos().keys().map(String::as_str)).unwrap();
        assert_eq!(load.errors.len(), 1);
        assert_eq!(load.errors[0].video_id, victim);
        assert_eq!(load.features.len(), 2);
    }

    #[test]
    fn ensembling_two_dirs() {
        let data = generate(&SynthSpec { n_videos: 2, n_classes: 2, dim: 4, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.write(dir.path()).unwrap();
        let fdir = dir.path().join(layout::FEATURES_DIR);
        let load = load_features(&[fdir.clone(), fdir], data.dataset.videos().keys().map(String::as_str)).unwrap();
        assert!(load.features.values().all(|s| s.dim() == 8));
    }
}
