//! Newline-delimited JSON segments files, one detection per line:
//! `{"video_id": str, "start": f, "end": f, "score": f, "label": str|null}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::types::{Segment, SegmentDetection, VideoDetections};

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    video_id: std::borrow::Cow<'a, str>,
    start: f64,
    end: f64,
    score: f64,
    label: Option<std::borrow::Cow<'a, str>>,
}

pub fn parse_segments(text: &str) -> Result<VideoDetections> {
    let mut out = VideoDetections::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(line).map_err(|e| Error::Parse {
            what: "segments file",
            message: format!("line {}: {e}", no + 1),
        })?;
        let segment = Segment::new(rec.start, rec.end).map_err(|e| Error::Parse {
            what: "segments file",
            message: format!("line {}: {e}", no + 1),
        })?;
        let det = SegmentDetection::new(segment, rec.score, rec.label.map(|l| l.into_owned()))
            .map_err(|e| Error::Parse { what: "segments file", message: format!("line {}: {e}", no + 1) })?;
        out.entry(rec.video_id.into_owned()).or_default().push(det);
    }
    Ok(out)
}

/// Serializes detections, videos in id order and detections in stored order.
pub fn segments_to_string(dets: &VideoDetections) -> String {
    let mut out = String::new();
    for (video, ds) in dets {
        for d in ds {
            let line = Line {
                video_id: video.into(),
                start: d.segment.start(),
                end: d.segment.end(),
                score: d.score,
                label: d.label.as_deref().map(Into::into),
            };
            out.push_str(&serde_json::to_string(&line).expect("serialization cannot fail"));
            out.push('\n');
        }
    }
    out
}

pub fn read_segments(path: impl AsRef<Path>) -> Result<VideoDetections> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_segments(&text)
}

pub fn write_segments(dets: &VideoDetections, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, segments_to_string(dets).as_bytes())
}
