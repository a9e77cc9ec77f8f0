use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{at, check_schema_version, jsonl_string, read_jsonl, write_atomic};
use crate::error::{Error, Result};
use crate::model::{assign_ordinals, SegmentId, SegmentRecord, TimeInterval, WordToken};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWord {
    w: String,
    start_s: f64,
    end_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema_version: Option<u32>,
    id: String,
    episode: String,
    start_s: f64,
    end_s: f64,
    text: String,
    #[serde(default)]
    words: Vec<RawWord>,
}

/// Loads `segments.jsonl`, validates word timing, and assigns per-episode ordinals.
pub fn load_segments(path: &Path) -> Result<Vec<SegmentRecord>> {
    let rows: Vec<(usize, RawSegment)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut segments = Vec::with_capacity(rows.len());
    for (line, raw) in rows {
        check_schema_version(raw.schema_version, path, line)?;
        let ctx = || format!("{} (segment {})", at(path, line), raw.id);
        if !seen.insert(raw.id.clone()) {
            return Err(Error::validation(ctx(), "duplicate segment id"));
        }
        let interval = TimeInterval::new(raw.start_s, raw.end_s)
            .map_err(|e| Error::validation(ctx(), e.to_string()))?;
        let words = raw
            .words
            .iter()
            .map(|w| {
                Ok(WordToken {
                    text: w.w.clone(),
                    interval: TimeInterval::new(w.start_s, w.end_s)
                        .map_err(|e| Error::validation(ctx(), format!("word {:?}: {e}", w.w)))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let seg = SegmentRecord {
            id: SegmentId(raw.id.clone()),
            episode: raw.episode,
            interval,
            text: raw.text,
            words,
            ordinal: 0,
        };
        seg.validate_words().map_err(|e| match e {
            Error::Validation { message, .. } => Error::validation(ctx(), message),
            other => other,
        })?;
        segments.push(seg);
    }
    assign_ordinals(&mut segments);
    Ok(segments)
}

pub fn write_segments(path: &Path, segments: &[SegmentRecord]) -> Result<()> {
    let rows = segments.iter().map(|s| RawSegment {
        schema_version: None,
        id: s.id.0.clone(),
        episode: s.episode.clone(),
        start_s: s.interval.start(),
        end_s: s.interval.end(),
        text: s.text.clone(),
        words: s
            .words
            .iter()
            .map(|w| RawWord {
                w: w.text.clone(),
                start_s: w.interval.start(),
                end_s: w.interval.end(),
            })
            .collect(),
    });
    write_atomic(path, jsonl_string(rows).as_bytes())
}
