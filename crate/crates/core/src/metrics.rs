//! Detection evaluation: temporal IoU, per-class average precision, mAP over IoU grids and
//! average recall at N.
//!
//! Average precision uses the all-points rule `sum_i (r_i - r_{i-1}) * p_i` over predictions
//! ranked by score (ties: video id, then start). Each prediction matches the unmatched ground
//! truth of its video with the highest IoU, provided that IoU reaches the threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Segment, SegmentDetection, VideoDetections};

/// Label assigned to every detection in class-agnostic evaluation.
pub const AGNOSTIC_LABEL: &str = "<agnostic>";

pub fn temporal_iou(a: &Segment, b: &Segment) -> f64 {
    a.iou(b)
}

/// `start, start + step, ..., end` computed in integer hundredths so grids are exact.
fn grid(start_pct: u32, end_pct: u32, step_pct: u32) -> Vec<f64> {
    (start_pct..=end_pct).step_by(step_pct as usize).map(|p| p as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Activitynet,
    Thumos,
}

impl Preset {
    /// mAP IoU grid: 0.5:0.05:0.95 for ActivityNet, 0.3:0.1:0.7 for Thumos.
    pub fn iou_thresholds(self) -> Vec<f64> {
        match self {
            Preset::Activitynet => grid(50, 95, 5),
            Preset::Thumos => grid(30, 70, 10),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activitynet" => Ok(Preset::Activitynet),
            "thumos" => Ok(Preset::Thumos),
            other => Err(Error::arg(format!("unknown preset {other:?}"))),
        }
    }
}

/// IoU grid used for average recall regardless of dataset.
pub fn default_ar_thresholds() -> Vec<f64> {
    grid(50, 95, 5)
}

pub const DEFAULT_RECALL_NS: [usize; 3] = [10, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_ns: Vec<usize>,
    pub ar_iou_thresholds: Vec<f64>,
    pub class_list: Vec<String>,
}

impl EvalConfig {
    pub fn new(
        iou_thresholds: Vec<f64>,
        recall_ns: Vec<usize>,
        ar_iou_thresholds: Vec<f64>,
        class_list: Vec<String>,
    ) -> Result<Self> {
        for grid in [&iou_thresholds, &ar_iou_thresholds] {
            if grid.is_empty() {
                return Err(Error::arg("empty IoU threshold list"));
            }
            if grid.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                return Err(Error::arg("IoU thresholds must lie in (0, 1]"));
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::arg("IoU thresholds must be strictly increasing"));
            }
        }
        if recall_ns.contains(&0) {
            return Err(Error::arg("recall N must be positive"));
        }
        let class_list: Vec<String> =
            class_list.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        Ok(EvalConfig { iou_thresholds, recall_ns, ar_iou_thresholds, class_list })
    }

    pub fn preset(preset: Preset, class_list: Vec<String>) -> Self {
        Self::new(
            preset.iou_thresholds(),
            DEFAULT_RECALL_NS.to_vec(),
            default_ar_thresholds(),
            class_list,
        )
        .expect("preset grids are valid")
    }
}

struct Ranked<'a> {
    video: &'a str,
    det: &'a SegmentDetection,
    index: usize,
}

/// Average precision of one class, or `None` when there is no ground truth.
///
/// Labels are ignored: callers pass predictions and ground truth of a single class.
pub fn average_precision(
    predictions: &VideoDetections,
    gt: &VideoDetections,
    iou_threshold: f64,
) -> Option<f64> {
    let total_gt: usize = gt.values().map(Vec::len).sum();
    if total_gt == 0 {
        return None;
    }
    let mut ranked: Vec<Ranked> = predictions
        .iter()
        .flat_map(|(v, dets)| dets.iter().map(move |d| (v.as_str(), d)))
        .enumerate()
        .map(|(index, (video, det))| Ranked { video, det, index })
        .collect();
    ranked.sort_by(|a, b| {
        b.det
            .score
            .total_cmp(&a.det.score)
            .then_with(|| a.video.cmp(b.video))
            .then(a.det.segment.start().total_cmp(&b.det.segment.start()))
            .then(a.index.cmp(&b.index))
    });

    let mut matched: BTreeMap<&str, Vec<bool>> =
        gt.iter().map(|(v, g)| (v.as_str(), vec![false; g.len()])).collect();
    let mut tp = 0usize;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (rank, r) in ranked.iter().enumerate() {
        if let (Some(gts), Some(flags)) = (gt.get(r.video), matched.get_mut(r.video)) {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if flags[j] {
                    continue;
                }
                let iou = r.det.segment.iou(&g.segment);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                flags[j] = true;
                tp += 1;
            }
        }
        let precision = tp as f64 / (rank + 1) as f64;
        let recall = tp as f64 / total_gt as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

fn by_label(dets: &VideoDetections, label: &str) -> VideoDetections {
    dets.iter()
        .filter_map(|(v, ds)| {
            let kept: Vec<SegmentDetection> =
                ds.iter().filter(|d| d.label.as_deref() == Some(label)).cloned().collect();
            (!kept.is_empty()).then(|| (v.clone(), kept))
        })
        .collect()
}

fn check_labels(dets: &VideoDetections, classes: &[String], what: &str) -> Result<()> {
    for (video, ds) in dets {
        for d in ds {
            match &d.label {
                None => {
                    return Err(Error::Video {
                        video_id: video.clone(),
                        message: format!("unlabeled {what} in labeled evaluation"),
                    })
                }
                Some(l) if classes.binary_search(l).is_err() => {
                    return Err(Error::UnknownLabel(l.clone()))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Replaces every label with [`AGNOSTIC_LABEL`].
pub fn strip_labels(dets: &VideoDetections) -> VideoDetections {
    dets.iter()
        .map(|(v, ds)| {
            let ds = ds
                .iter()
                .map(|d| SegmentDetection { label: Some(AGNOSTIC_LABEL.to_string()), ..d.clone() })
                .collect();
            (v.clone(), ds)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub iou_thresholds: Vec<f64>,
    /// AP per class per threshold, for classes with at least one ground-truth segment.
    pub per_class_ap: BTreeMap<String, Vec<f64>>,
    pub map: Vec<f64>,
    pub map_avg: f64,
    /// Classes left out of the mean because they have no ground truth.
    pub excluded_classes: Vec<String>,
}

pub fn map_avg(
    predictions: &VideoDetections,
    gt: &VideoDetections,
    config: &EvalConfig,
) -> Result<MapReport> {
    check_labels(predictions, &config.class_list, "prediction")?;
    check_labels(gt, &config.class_list, "ground truth")?;
    let per_class: Vec<(String, Option<Vec<f64>>)> = config
        .class_list
        .par_iter()
        .map(|class| {
            let p = by_label(predictions, class);
            let g = by_label(gt, class);
            let aps: Option<Vec<f64>> = config
                .iou_thresholds
                .iter()
                .map(|&t| average_precision(&p, &g, t))
                .collect();
            (class.clone(), aps)
        })
        .collect();
    let mut per_class_ap = BTreeMap::new();
    let mut excluded_classes = Vec::new();
    for (class, aps) in per_class {
        match aps {
            Some(aps) => {
                per_class_ap.insert(class, aps);
            }
            None => excluded_classes.push(class),
        }
    }
    let n = per_class_ap.len();
    let map: Vec<f64> = (0..config.iou_thresholds.len())
        .map(|t| {
            if n == 0 {
                0.0
            } else {
                per_class_ap.values().map(|aps| aps[t]).sum::<f64>() / n as f64
            }
        })
        .collect();
    let map_avg = map.iter().sum::<f64>() / map.len() as f64;
    Ok(MapReport {
        iou_thresholds: config.iou_thresholds.clone(),
        per_class_ap,
        map,
        map_avg,
        excluded_classes,
    })
}

/// Average recall when each video keeps its `n` best proposals, averaged over `iou_grid`.
///
/// At each threshold proposals and ground truth are matched one-to-one, greedily by
/// descending IoU. Labels are ignored.
pub fn average_recall_at_n(
    proposals: &VideoDetections,
    gt: &VideoDetections,
    n: usize,
    iou_grid: &[f64],
) -> Result<f64> {
    if n == 0 {
        return Err(Error::arg("N must be >= 1"));
    }
    if iou_grid.is_empty() {
        return Err(Error::arg("empty IoU grid"));
    }
    let total_gt: usize = gt.values().map(Vec::len).sum();
    if total_gt == 0 {
        return Ok(0.0);
    }
    let mut matched = vec![0usize; iou_grid.len()];
    for (video, gts) in gt {
        let Some(props) = proposals.get(video) else { continue };
        let mut order: Vec<usize> = (0..props.len()).collect();
        order.sort_by(|&a, &b| {
            props[b]
                .score
                .total_cmp(&props[a].score)
                .then(props[a].segment.start().total_cmp(&props[b].segment.start()))
                .then(a.cmp(&b))
        });
        order.truncate(n);
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, &p) in order.iter().enumerate() {
            for (gi, g) in gts.iter().enumerate() {
                let iou = props[p].segment.iou(&g.segment);
                if iou > 0.0 {
                    pairs.push((iou, pi, gi));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (t, &thr) in iou_grid.iter().enumerate() {
            let mut used_p = vec![false; order.len()];
            let mut used_g = vec![false; gts.len()];
            for &(iou, pi, gi) in &pairs {
                if iou < thr {
                    break;
                }
                if !used_p[pi] && !used_g[gi] {
                    used_p[pi] = true;
                    used_g[gi] = true;
                    matched[t] += 1;
                }
            }
        }
    }
    Ok(matched.iter().map(|&m| m as f64 / total_gt as f64).sum::<f64>() / iou_grid.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub map: MapReport,
    /// AR@N keyed by N.
    pub average_recall: BTreeMap<usize, f64>,
    pub ar_iou_thresholds: Vec<f64>,
    pub predictions: usize,
    pub ground_truth: usize,
}

/// Full report: mAP over the config grid plus AR@N for every configured N.
pub fn evaluate(
    predictions: &VideoDetections,
    gt: &VideoDetections,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let map = map_avg(predictions, gt, config)?;
    let average_recall = config
        .recall_ns
        .iter()
        .map(|&n| Ok((n, average_recall_at_n(predictions, gt, n, &config.ar_iou_thresholds)?)))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        map,
        average_recall,
        ar_iou_thresholds: config.ar_iou_thresholds.clone(),
        predictions: predictions.values().map(Vec::len).sum(),
        ground_truth: gt.values().map(Vec::len).sum(),
    })
}

fn threshold_label(t: f64) -> String {
    let s = format!("{t:.2}");
    let s = s.trim_end_matches('0');
    format!("mAP@{s}")
}

impl EvalReport {
    /// Aligned plain-text table, metric values in percent.
    pub fn to_table(&self) -> String {
        let mut headers: Vec<String> =
            self.map.iou_thresholds.iter().map(|&t| threshold_label(t)).collect();
        headers.push("mAP@avg".into());
        let mut values: Vec<f64> = self.map.map.clone();
        values.push(self.map.map_avg);
        for (n, ar) in &self.average_recall {
            headers.push(format!("AR@{n}"));
            values.push(*ar);
        }
        let cells: Vec<String> = values.iter().map(|v| format!("{:.1}", v * 100.0)).collect();
        render_rows(&headers, &[cells])
    }
}

fn render_rows(headers: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| rows.iter().map(|r| r[i].len()).chain([h.len()]).max().unwrap())
        .collect();
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> =
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "| {} |", parts.join(" | "));
    };
    line(headers, &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for r in rows {
        line(r, &mut out);
    }
    out
}

/// Mean and standard error of the mean (sample standard deviation / sqrt(n)).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub splits: usize,
    pub map: Vec<MeanSem>,
    pub map_avg: MeanSem,
    pub average_recall: BTreeMap<usize, MeanSem>,
}

/// Aggregates reports across splits. All reports must share the same threshold grid.
pub fn aggregate(reports: &[EvalReport]) -> Result<Aggregate> {
    let first = reports.first().ok_or_else(|| Error::arg("no reports to aggregate"))?;
    if reports.iter().any(|r| r.map.iou_thresholds != first.map.iou_thresholds) {
        return Err(Error::arg("reports use different IoU grids"));
    }
    let ms = |vals: Vec<f64>| {
        let (mean, sem) = mean_sem(&vals);
        MeanSem { mean, sem }
    };
    Ok(Aggregate {
        splits: reports.len(),
        map: (0..first.map.map.len()).map(|t| ms(reports.iter().map(|r| r.map.map[t]).collect())).collect(),
        map_avg: ms(reports.iter().map(|r| r.map.map_avg).collect()),
        average_recall: first
            .average_recall
            .keys()
            .map(|n| (*n, ms(reports.iter().map(|r| r.average_recall.get(n).copied().unwrap_or(0.0)).collect())))
            .collect(),
    })
}

impl Aggregate {
    pub fn to_table(&self, thresholds: &[f64]) -> String {
        let mut headers: Vec<String> = vec!["splits".into()];
        headers.extend(thresholds.iter().map(|&t| threshold_label(t)));
        headers.push("mAP@avg".into());
        let fmt = |m: &MeanSem| format!("{:.1} ± {:.1}", m.mean * 100.0, m.sem * 100.0);
        let mut cells = vec![self.splits.to_string()];
        cells.extend(self.map.iter().map(fmt));
        cells.push(fmt(&self.map_avg));
        for (n, m) in &self.average_recall {
            headers.push(format!("AR@{n}"));
            cells.push(fmt(m));
        }
        render_rows(&headers, &[cells])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(s: f64, e: f64, score: f64, label: &str) -> SegmentDetection {
        SegmentDetection::new(Segment::new(s, e).unwrap(), score, Some(label.into())).unwrap()
    }

    fn one_video(dets: Vec<SegmentDetection>) -> VideoDetections {
        [("v".to_string(), dets)].into_iter().collect()
    }

    #[test]
    fn preset_grids() {
        let a = Preset::Activitynet.iou_thresholds();
        assert_eq!(a.len(), 10);
        assert_eq!(a[0], 0.5);
        assert_eq!(a[9], 0.95);
        assert_eq!(a[5], 0.75);
        assert_eq!(Preset::Thumos.iou_thresholds(), vec![0.3, 0.4, 0.5, 0.6, 0.7]);
    }

    #[test]
    fn iou_examples() {
        let s = |a, b| Segment::new(a, b).unwrap();
        assert!((temporal_iou(&s(0.0, 10.0), &s(5.0, 15.0)) - 0.33333).abs() < 1e-5);
        assert_eq!(temporal_iou(&s(1.0, 2.0), &s(1.0, 2.0)), 1.0);
        assert_eq!(temporal_iou(&s(0.0, 1.0), &s(2.0, 3.0)), 0.0);
    }

    #[test]
    fn hand_pr_curve() {
        // TP, FP, TP in score order against 2 gt.
        let gt = one_video(vec![det(0.0, 10.0, 1.0, "a"), det(20.0, 30.0, 1.0, "a")]);
        let preds = one_video(vec![
            det(0.0, 10.0, 0.9, "a"),
            det(50.0, 60.0, 0.8, "a"),
            det(20.0, 30.0, 0.7, "a"),
        ]);
        let ap = average_precision(&preds, &gt, 0.5).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_miss() {
        let gt = one_video(vec![det(0.0, 10.0, 1.0, "a")]);
        assert_eq!(average_precision(&gt, &gt, 0.95), Some(1.0));
        let miss = one_video(vec![det(20.0, 30.0, 0.5, "a")]);
        assert_eq!(average_precision(&miss, &gt, 0.5), Some(0.0));
        assert_eq!(average_precision(&VideoDetections::new(), &gt, 0.5), Some(0.0));
        assert_eq!(average_precision(&gt, &VideoDetections::new(), 0.5), None);
    }

    #[test]
    fn duplicate_prediction_is_false_positive() {
        let gt = one_video(vec![det(0.0, 10.0, 1.0, "a")]);
        let preds = one_video(vec![det(0.0, 10.0, 0.9, "a"), det(0.0, 10.0, 0.8, "a")]);
        assert_eq!(average_precision(&preds, &gt, 0.5), Some(1.0));
        let preds = one_video(vec![det(0.0, 10.0, 0.8, "a"), det(0.0, 9.0, 0.9, "a")]);
        // 0.9 matches with IoU 0.9, 0.8 becomes FP; recall saturates at rank 1
        assert_eq!(average_precision(&preds, &gt, 0.5), Some(1.0));
    }

    #[test]
    fn map_excludes_empty_classes_and_rejects_unknown() {
        let gt = one_video(vec![det(0.0, 10.0, 1.0, "a")]);
        let cfg = EvalConfig::preset(Preset::Thumos, vec!["a".into(), "b".into()]);
        let r = map_avg(&gt, &gt, &cfg).unwrap();
        assert_eq!(r.map_avg, 1.0);
        assert_eq!(r.excluded_classes, vec!["b".to_string()]);
        let bad = one_video(vec![det(0.0, 10.0, 1.0, "zzz")]);
        assert!(matches!(map_avg(&bad, &gt, &cfg), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn recall_examples() {
        let grid = default_ar_thresholds();
        let gt = one_video(vec![det(0.0, 10.0, 1.0, "a"), det(20.0, 30.0, 1.0, "a")]);
        assert_eq!(average_recall_at_n(&gt, &gt, 10, &grid).unwrap(), 1.0);
        assert_eq!(average_recall_at_n(&VideoDetections::new(), &gt, 10, &grid).unwrap(), 0.0);
        let props = one_video(vec![det(0.0, 10.0, 0.9, "a"), det(20.0, 30.0, 0.1, "a")]);
        assert_eq!(average_recall_at_n(&props, &gt, 1, &grid).unwrap(), 0.5);
        assert!(average_recall_at_n(&props, &gt, 0, &grid).is_err());
    }

    #[test]
    fn sem() {
        assert_eq!(mean_sem(&[0.3, 0.3]), (0.3, 0.0));
        let (m, s) = mean_sem(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::new(vec![0.5, 0.5], vec![10], vec![0.5], vec![]).is_err());
        assert!(EvalConfig::new(vec![0.0], vec![10], vec![0.5], vec![]).is_err());
        assert!(EvalConfig::new(vec![0.5], vec![0], vec![0.5], vec![]).is_err());
    }

    #[test]
    fn table_layout() {
        let gt = one_video(vec![det(0.0, 10.0, 1.0, "a")]);
        let cfg = EvalConfig::preset(Preset::Activitynet, vec!["a".into()]);
        let table = evaluate(&gt, &gt, &cfg).unwrap().to_table();
        let header = table.lines().next().unwrap();
        assert!(header.contains("mAP@0.5 ") && header.contains("mAP@0.95") && header.contains("AR@100"));
        assert_eq!(header.matches("mAP@0.").count(), 10);
    }
}
