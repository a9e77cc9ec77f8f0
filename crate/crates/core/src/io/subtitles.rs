use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_schema_version, jsonl_string, read_jsonl, write_atomic};
use crate::error::{Error, Result};
use crate::model::{Assignment, CharacterId, Provenance, SegmentId, SegmentRecord, TimeInterval};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubtitleFormat {
    Srt,
    Json,
}

/// One line of `assignments.jsonl`. Carries the segment timing so the file can
/// be scored without the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentRecord {
    pub segment_id: SegmentId,
    pub episode: String,
    pub start_s: f64,
    pub end_s: f64,
    /// `null` for UNKNOWN.
    pub label: Option<CharacterId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_label: Option<CharacterId>,
    pub provenance: Provenance,
    pub score: f64,
}

impl AssignmentRecord {
    pub fn new(segment: &SegmentRecord, assignment: &Assignment) -> Self {
        Self {
            segment_id: segment.id.clone(),
            episode: segment.episode.clone(),
            start_s: segment.interval.start(),
            end_s: segment.interval.end(),
            label: assignment.label.clone(),
            secondary_label: assignment.secondary_label.clone(),
            provenance: assignment.provenance,
            score: assignment.score,
        }
    }

    pub fn interval(&self) -> Result<TimeInterval> {
        TimeInterval::new(self.start_s, self.end_s)
    }

    pub fn to_assignment(&self) -> Assignment {
        Assignment {
            segment_id: self.segment_id.clone(),
            label: self.label.clone(),
            secondary_label: self.secondary_label.clone(),
            provenance: self.provenance,
            score: self.score,
        }
    }
}

/// `HH:MM:SS,mmm`, rounded to the nearest millisecond.
pub fn format_srt_timestamp(seconds: f64) -> String {
    let total_ms = (seconds * 1000.0).round().max(0.0) as u64;
    let ms = total_ms % 1000;
    let s = (total_ms / 1000) % 60;
    let m = (total_ms / 60_000) % 60;
    let h = total_ms / 3_600_000;
    format!("{h:02}:{m:02}:{s:02},{ms:03}")
}

fn speaker_prefix(a: &Assignment) -> String {
    match (&a.label, &a.secondary_label) {
        (Some(p), Some(s)) => format!("{}/{}", p.as_str().to_uppercase(), s.as_str().to_uppercase()),
        (Some(p), None) => p.as_str().to_uppercase(),
        (None, _) => "UNKNOWN".to_string(),
    }
}

fn pair_up<'a>(
    assignments: &'a [Assignment],
    segments: &'a [SegmentRecord],
) -> Result<Vec<(&'a SegmentRecord, &'a Assignment)>> {
    let by_id: HashMap<&SegmentId, &Assignment> =
        assignments.iter().map(|a| (&a.segment_id, a)).collect();
    let mut ordered: Vec<&SegmentRecord> = segments.iter().collect();
    ordered.sort_by(|a, b| a.episode.cmp(&b.episode).then(a.ordinal.cmp(&b.ordinal)));
    ordered
        .into_iter()
        .map(|s| {
            by_id
                .get(&s.id)
                .map(|a| (s, *a))
                .ok_or_else(|| Error::Contract(format!("segment {} has no assignment", s.id)))
        })
        .collect()
}

/// Renders SRT cues `NAME: text` in dialogue order.
pub fn render_srt(assignments: &[Assignment], segments: &[SegmentRecord]) -> Result<String> {
    let mut out = String::new();
    for (i, (seg, a)) in pair_up(assignments, segments)?.into_iter().enumerate() {
        let _ = write!(
            out,
            "{}\n{} --> {}\n{}: {}\n\n",
            i + 1,
            format_srt_timestamp(seg.interval.start()),
            format_srt_timestamp(seg.interval.end()),
            speaker_prefix(a),
            seg.text
        );
    }
    Ok(out)
}

pub fn write_subtitles(
    assignments: &[Assignment],
    segments: &[SegmentRecord],
    path: &Path,
    format: SubtitleFormat,
) -> Result<()> {
    let text = match format {
        SubtitleFormat::Srt => render_srt(assignments, segments)?,
        SubtitleFormat::Json => {
            let records: Vec<_> = pair_up(assignments, segments)?
                .into_iter()
                .map(|(s, a)| AssignmentRecord::new(s, a))
                .collect();
            jsonl_string(records)
        }
    };
    write_atomic(path, text.as_bytes())
}

pub fn write_assignments(path: &Path, records: &[AssignmentRecord]) -> Result<()> {
    write_atomic(path, jsonl_string(records).as_bytes())
}

pub fn load_assignments(path: &Path) -> Result<Vec<AssignmentRecord>> {
    let rows: Vec<(usize, AssignmentRecord)> = read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, r)| {
            r.interval()
                .map_err(|e| Error::validation(super::at(path, line), e.to_string()))?;
            Ok(r)
        })
        .collect()
}

/// One line of `exemplars.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    pub segment_id: SegmentId,
    pub character: CharacterId,
}

pub fn write_exemplars(path: &Path, records: &[ExemplarRecord]) -> Result<()> {
    write_atomic(path, jsonl_string(records).as_bytes())
}

pub fn load_exemplars(path: &Path) -> Result<Vec<ExemplarRecord>> {
    let rows: Vec<(usize, ExemplarRecord)> = read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, r)| {
            check_schema_version(r.schema_version, path, line)?;
            Ok(r)
        })
        .collect()
}
