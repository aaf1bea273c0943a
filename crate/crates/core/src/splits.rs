//! Open-vocabulary label splits: seeded random hold-outs and taxonomy-paired Smart splits.
//!
//! Random splits shuffle the lexicographically sorted vocabulary with a Fisher-Yates pass
//! driven by SplitMix64 (state initialized to the seed). For position `i` (descending from
//! `n - 1` to `1`) the swap index is `(next_u64() * (i + 1)) >> 64`, computed in 128 bits.
//! The first `round_half_up(fraction * n)` labels of the shuffled order are held out.
//! Any implementation following these three rules reproduces the same split files.

use std::collections::BTreeSet;
use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedDataset, VideoRecord};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::taxonomy::Taxonomy;

/// The held-out labels of the ActivityNet Smart 75/25 split, with the remaining 150 for training.
pub const ACTIVITYNET_SMART_SPLIT: &str = include_str!("../data/activitynet_smart_split.json");

/// ActivityNet 1.3 class names, one per line, sorted.
pub const ACTIVITYNET_CLASSES: &str = include_str!("../data/activitynet_v1-3_classes.txt");

pub fn activitynet_vocabulary() -> Vec<String> {
    ACTIVITYNET_CLASSES.lines().filter(|l| !l.is_empty()).map(String::from).collect()
}

pub fn activitynet_smart_split() -> LabelSplit {
    parse_split(ACTIVITYNET_SMART_SPLIT).expect("bundled smart split is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Random { seed: u64, eval_fraction: f64 },
    Smart { taxonomy_hash: Option<String> },
    Explicit { file: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Eval,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Train => "train",
            Side::Eval => "eval",
        })
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Side::Train),
            "eval" => Ok(Side::Eval),
            other => Err(Error::arg(format!("unknown split side {other:?}"))),
        }
    }
}

/// Disjoint train/eval label sets, both stored sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSplit {
    pub name: String,
    pub train: Vec<String>,
    pub eval: Vec<String>,
    pub provenance: Provenance,
}

impl LabelSplit {
    pub fn new(
        name: impl Into<String>,
        train: impl IntoIterator<Item = String>,
        eval: impl IntoIterator<Item = String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let train_v: Vec<String> = train.into_iter().collect();
        let eval_v: Vec<String> = eval.into_iter().collect();
        let train: BTreeSet<String> = train_v.iter().cloned().collect();
        let eval: BTreeSet<String> = eval_v.iter().cloned().collect();
        if train.len() != train_v.len() || eval.len() != eval_v.len() {
            return Err(Error::Split("duplicate label within one side".into()));
        }
        if let Some(both) = train.intersection(&eval).next() {
            return Err(Error::Split(format!("label {both:?} is on both sides")));
        }
        if eval.is_empty() {
            return Err(Error::Split("eval side is empty".into()));
        }
        Ok(LabelSplit {
            name: name.into(),
            train: train.into_iter().collect(),
            eval: eval.into_iter().collect(),
            provenance,
        })
    }

    pub fn labels(&self, side: Side) -> &[String] {
        match side {
            Side::Train => &self.train,
            Side::Eval => &self.eval,
        }
    }

    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.train.iter().chain(&self.eval).map(String::as_str).collect()
    }

    /// Errors unless train and eval together are exactly `vocabulary`.
    pub fn check_vocabulary(&self, vocabulary: &[String]) -> Result<()> {
        let ours = self.vocabulary();
        let theirs: BTreeSet<&str> = vocabulary.iter().map(String::as_str).collect();
        if let Some(l) = theirs.difference(&ours).next() {
            return Err(Error::Split(format!("vocabulary label {l:?} missing from split")));
        }
        if let Some(l) = ours.difference(&theirs).next() {
            return Err(Error::Split(format!("split label {l:?} not in vocabulary")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split serialization cannot fail");
        s.push('\n');
        s
    }
}

/// `round(fraction * n)` with halves rounded up.
pub fn eval_count(n: usize, eval_fraction: f64) -> usize {
    (eval_fraction * n as f64 + 0.5).floor() as usize
}

pub fn generate_random_split(
    vocabulary: &[String],
    eval_fraction: f64,
    seed: u64,
) -> Result<LabelSplit> {
    if vocabulary.is_empty() {
        return Err(Error::Split("empty vocabulary".into()));
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::Split(format!("eval fraction {eval_fraction} not in (0, 1)")));
    }
    let mut labels: Vec<String> =
        vocabulary.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if labels.len() != vocabulary.len() {
        return Err(Error::Split("vocabulary contains duplicates".into()));
    }
    let k = eval_count(labels.len(), eval_fraction);
    if k < 1 {
        return Err(Error::Split(format!(
            "fraction {eval_fraction} of {} labels holds out nothing",
            labels.len()
        )));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    for i in (1..labels.len()).rev() {
        let j = ((rng.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        labels.swap(i, j);
    }
    let train = labels.split_off(k);
    let pct = (eval_fraction * 100.0).round() as u32;
    LabelSplit::new(
        format!("random-{}-{}-seed{seed}", 100 - pct, pct),
        train,
        labels,
        Provenance::Random { seed, eval_fraction },
    )
}

/// Restricts a dataset to one side of a split.
///
/// Videos keep their full duration; annotations with labels from the other side are removed
/// and videos left without annotations are dropped. The output vocabulary is the side's labels.
pub fn apply_split(
    dataset: &AnnotatedDataset,
    split: &LabelSplit,
    side: Side,
) -> Result<AnnotatedDataset> {
    split.check_vocabulary(dataset.vocabulary())?;
    let keep = split.labels(side);
    let videos: Vec<VideoRecord> = dataset
        .videos()
        .values()
        .filter_map(|v| {
            let annotations: Vec<_> = v
                .annotations
                .iter()
                .filter(|a| keep.binary_search(&a.label).is_ok())
                .cloned()
                .collect();
            (!annotations.is_empty()).then(|| VideoRecord { annotations, ..v.clone() })
        })
        .collect();
    AnnotatedDataset::new(videos, keep.iter().cloned())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalLabelCheck {
    pub label: String,
    pub parent: Option<String>,
    /// Training labels sharing this label's immediate parent.
    pub train_siblings: Vec<String>,
    pub satisfied: bool,
    /// Tree distance to the closest training leaf (2 for a sibling).
    pub nearest_train_distance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub split: String,
    pub checks: Vec<EvalLabelCheck>,
    pub satisfied: usize,
    pub unsatisfied: usize,
    pub passed: bool,
    /// Whether paired classes look alike cannot be checked from the hierarchy.
    pub perceptual_pairing: &'static str,
}

pub fn validate_smart_split(split: &LabelSplit, taxonomy: &Taxonomy) -> Result<ValidationReport> {
    for label in split.train.iter().chain(&split.eval) {
        if taxonomy.leaf(label).is_none() {
            return Err(Error::Taxonomy(format!("label {label:?} is not a leaf")));
        }
    }
    let train_ids: Vec<i64> =
        split.train.iter().map(|l| taxonomy.leaf(l).expect("checked").node_id).collect();
    let checks: Vec<EvalLabelCheck> = split
        .eval
        .iter()
        .map(|label| {
            let leaf = taxonomy.leaf(label).expect("checked");
            let parent = leaf.parent_id.and_then(|p| taxonomy.node(p)).map(|n| n.name.clone());
            let mut train_siblings: Vec<String> = taxonomy
                .sibling_leaves(label)
                .into_iter()
                .filter(|s| split.train.binary_search_by(|t| t.as_str().cmp(s)).is_ok())
                .map(String::from)
                .collect();
            train_siblings.sort();
            let nearest_train_distance =
                train_ids.iter().map(|&t| taxonomy.distance(leaf.node_id, t)).min();
            EvalLabelCheck {
                label: label.clone(),
                parent,
                satisfied: !train_siblings.is_empty(),
                train_siblings,
                nearest_train_distance,
            }
        })
        .collect();
    let satisfied = checks.iter().filter(|c| c.satisfied).count();
    let unsatisfied = checks.len() - satisfied;
    Ok(ValidationReport {
        split: split.name.clone(),
        checks,
        satisfied,
        unsatisfied,
        passed: unsatisfied == 0,
        perceptual_pairing: "unverifiable",
    })
}

pub fn parse_split(text: &str) -> Result<LabelSplit> {
    let raw: LabelSplit = serde_json::from_str(text).map_err(|e| Error::json("split file", e))?;
    LabelSplit::new(raw.name, raw.train, raw.eval, raw.provenance)
}

pub fn import_split(path: impl AsRef<Path>) -> Result<LabelSplit> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text)
}

pub fn export_split(split: &LabelSplit, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, split.to_json().as_bytes())
}
