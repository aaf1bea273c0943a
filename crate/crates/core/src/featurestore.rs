//! Per-second feature files, text embeddings, ensembling and segment pooling.
//!
//! Feature file layout (all little-endian):
//!
//! ```text
//! magic    [u8; 4]   "OVTF"
//! version  u32       1
//! dim      u32       D
//! frames   u32       T
//! fps      f32
//! name_len u16
//! video_id [u8; name_len]  UTF-8
//! data     [f32; T * D]    time-major
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::types::Segment;

pub const FEATURE_MAGIC: [u8; 4] = *b"OVTF";
pub const FORMAT_VERSION: u32 = 1;
pub const FEATURE_EXTENSION: &str = "ovtf";

/// A `frames x dim` matrix of per-frame features for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    video_id: String,
    fps: f32,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, fps: f32, dim: usize, data: Vec<f32>) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::arg(format!("fps must be positive, got {fps}")));
        }
        if dim == 0 {
            return Err(Error::arg("feature dim must be >= 1"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::arg(format!(
                "payload of {} values is not a positive multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("feature row {}, col {}", i / dim, i % dim)));
        }
        Ok(FeatureSequence { video_id: video_id.into(), fps, dim, data })
    }

    pub fn from_rows(video_id: impl Into<String>, fps: f32, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::arg("ragged feature rows"));
        }
        Self::new(video_id, fps, dim, rows.concat())
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Duration covered by the frames, in seconds.
    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.fps as f64
    }

    /// Frame rows covered by `segment`: `[floor(start * fps), ceil(end * fps))` clamped to
    /// `[0, T)`, widened to the nearest single row when the clamped range is empty.
    pub fn covered_rows(&self, segment: &Segment) -> Result<std::ops::Range<usize>> {
        let fps = self.fps as f64;
        let t = self.frames() as f64;
        let lo = (segment.start() * fps).floor();
        let hi = (segment.end() * fps).ceil();
        if lo >= t || hi <= 0.0 {
            return Err(Error::InvalidSegment {
                start: segment.start(),
                end: segment.end(),
                reason: "segment lies outside the feature sequence",
            });
        }
        let lo = lo.max(0.0) as usize;
        let hi = (hi.min(t) as usize).max(lo + 1);
        Ok(lo..hi)
    }

    /// Mean of the covered rows, accumulated in f64.
    pub fn pool_segment(&self, segment: &Segment) -> Result<Vec<f64>> {
        let rows = self.covered_rows(segment)?;
        let n = rows.len() as f64;
        let mut acc = vec![0.0f64; self.dim];
        for i in rows {
            for (a, &x) in acc.iter_mut().zip(self.row(i)) {
                *a += x as f64;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(FEATURE_MAGIC, &self.video_id, self.fps, self.dim, self.frames(), &self.data, None)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = decode(FEATURE_MAGIC, bytes, false)?;
        Self::new(raw.video_id, raw.rate, raw.dim, raw.data)
    }
}

pub(crate) struct RawContainer {
    pub video_id: String,
    pub rate: f32,
    pub dim: usize,
    pub data: Vec<f32>,
    pub flags: u8,
}

pub(crate) fn encode(
    magic: [u8; 4],
    video_id: &str,
    rate: f32,
    dim: usize,
    frames: usize,
    data: &[f32],
    flags: Option<u8>,
) -> Vec<u8> {
    let name = video_id.as_bytes();
    let mut out = Vec::with_capacity(22 + name.len() + 1 + data.len() * 4);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(frames as u32).to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    if let Some(f) = flags {
        out.push(f);
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated { expected: end, found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub(crate) fn decode(magic: [u8; 4], bytes: &[u8], with_flags: bool) -> Result<RawContainer> {
    let mut cur = Cursor { bytes, pos: 0 };
    let found: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic { found, expected: magic });
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let dim = cur.u32()? as usize;
    let frames = cur.u32()? as usize;
    let rate = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
    let video_id = std::str::from_utf8(cur.take(name_len)?)
        .map_err(|e| Error::Parse { what: "video id", message: e.to_string() })?
        .to_string();
    let flags = if with_flags { cur.take(1)?[0] } else { 0 };
    let payload = dim
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Parse { what: "header", message: "size overflow".into() })?;
    let body = cur.take(payload)?;
    if cur.pos != bytes.len() {
        return Err(Error::Parse {
            what: "feature file",
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(RawContainer { video_id, rate, dim, data, flags })
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::from_bytes(&bytes)
}

pub fn write_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &seq.to_bytes())
}

/// Path of a video's feature file inside a feature directory.
pub fn feature_path(dir: impl AsRef<Path>, video_id: &str) -> std::path::PathBuf {
    dir.as_ref().join(format!("{video_id}.{FEATURE_EXTENSION}"))
}

/// Concatenates feature blocks column-wise, truncating all inputs to the shortest.
pub fn ensemble(sequences: &[FeatureSequence]) -> Result<FeatureSequence> {
    let first = sequences.first().ok_or_else(|| Error::arg("ensemble of zero sequences"))?;
    for s in &sequences[1..] {
        if s.video_id != first.video_id {
            return Err(Error::arg(format!(
                "ensemble video mismatch: {} vs {}",
                first.video_id, s.video_id
            )));
        }
        if s.fps != first.fps {
            return Err(Error::arg(format!("ensemble fps mismatch: {} vs {}", first.fps, s.fps)));
        }
    }
    let frames = sequences.iter().map(FeatureSequence::frames).min().unwrap();
    let dim: usize = sequences.iter().map(FeatureSequence::dim).sum();
    let mut data = Vec::with_capacity(frames * dim);
    for t in 0..frames {
        for s in sequences {
            data.extend_from_slice(s.row(t));
        }
    }
    FeatureSequence::new(first.video_id.clone(), first.fps, dim, data)
}

/// Label strings with unit-norm embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingSet {
    labels: Vec<String>,
    dim: usize,
    embeddings: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTextEmbeddings {
    dim: usize,
    labels: Vec<String>,
    embeddings: Vec<Vec<f32>>,
}

impl TextEmbeddingSet {
    /// Builds the set, L2-normalizing every row.
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::arg("text embedding set has no labels"));
        }
        if labels.len() != rows.len() {
            return Err(Error::arg(format!(
                "{} labels but {} embedding rows",
                labels.len(),
                rows.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::arg(format!("duplicate label {dup:?} in text embeddings")));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::arg("text embedding dim must be >= 1"));
        }
        let mut embeddings = Vec::with_capacity(dim * rows.len());
        for (label, row) in labels.iter().zip(&rows) {
            if row.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: row.len() });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("text embedding of {label:?}")));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::arg(format!("zero text embedding for {label:?}")));
            }
            embeddings.extend(row.iter().map(|x| x / norm));
        }
        Ok(TextEmbeddingSet { labels, dim, embeddings })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// The subset of rows for `labels`, in the given order.
    pub fn restrict(&self, labels: &[String]) -> Result<TextEmbeddingSet> {
        let rows = labels
            .iter()
            .map(|l| {
                self.index_of(l)
                    .map(|i| self.embedding(i).to_vec())
                    .ok_or_else(|| Error::UnknownLabel(l.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        TextEmbeddingSet::new(labels.to_vec(), rows)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawTextEmbeddings =
            serde_json::from_str(text).map_err(|e| Error::json("text embeddings", e))?;
        if raw.embeddings.iter().any(|r| r.len() != raw.dim) {
            return Err(Error::Parse {
                what: "text embeddings",
                message: format!("row length differs from declared dim {}", raw.dim),
            });
        }
        let rows = raw.embeddings.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
        Self::new(raw.labels, rows)
    }

    pub fn to_json(&self) -> String {
        let raw = RawTextEmbeddings {
            dim: self.dim,
            labels: self.labels.clone(),
            embeddings: (0..self.len())
                .map(|i| self.embedding(i).iter().map(|&x| x as f32).collect())
                .collect(),
        };
        let mut s = serde_json::to_string(&raw).expect("serialization cannot fail");
        s.push('\n');
        s
    }
}

pub fn load_text_embeddings(path: impl AsRef<Path>) -> Result<TextEmbeddingSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TextEmbeddingSet::parse(&text)
}
