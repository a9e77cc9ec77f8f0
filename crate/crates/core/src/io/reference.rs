use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{at, check_schema_version, jsonl_string, parse_err, read_jsonl, write_atomic};
use crate::error::{Error, Result};
use crate::model::{CastList, CharacterId, TimeInterval};

/// One ground-truth speech turn. `episode` is `None` for single-episode files.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSegment {
    pub episode: Option<String>,
    pub interval: TimeInterval,
    pub speaker: CharacterId,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceAnnotation {
    pub segments: Vec<ReferenceSegment>,
}

impl ReferenceAnnotation {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Rewrites aliases to canonical cast names; names not in the cast stay verbatim.
    pub fn resolve_aliases(mut self, cast: &CastList) -> Self {
        for seg in &mut self.segments {
            if let Some(canonical) = cast.resolve(seg.speaker.as_str()) {
                seg.speaker = canonical.clone();
            }
        }
        self
    }

    /// Segments belonging to `episode`, including episode-less ones.
    pub fn for_episode(&self, episode: &str) -> Vec<ReferenceSegment> {
        self.segments
            .iter()
            .filter(|s| s.episode.as_deref().is_none_or(|e| e == episode))
            .cloned()
            .collect()
    }

    pub fn episodes(&self) -> Vec<Option<String>> {
        let mut eps: Vec<_> = self.segments.iter().map(|s| s.episode.clone()).collect();
        eps.sort();
        eps.dedup();
        eps
    }
}

/// Parses `SPEAKER` records of an RTTM file; other record types are skipped.
///
/// Fields: `SPEAKER <file> <chnl> <onset> <dur> <ortho> <stype> <name> <conf> <slat>`.
pub fn load_reference_rttm(path: &Path) -> Result<ReferenceAnnotation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut segments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(';') || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() < 8 {
            return Err(parse_err(
                path,
                line_no,
                format!("SPEAKER record needs at least 8 fields, found {}", fields.len()),
            ));
        }
        let number = |idx: usize, what: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line_no, format!("{what} {:?} is not a number", fields[idx])))
        };
        let onset = number(3, "onset")?;
        let duration = number(4, "duration")?;
        if onset < 0.0 {
            return Err(parse_err(path, line_no, format!("negative onset {onset}")));
        }
        if duration <= 0.0 {
            return Err(parse_err(path, line_no, format!("non-positive duration {duration}")));
        }
        let interval = TimeInterval::new(onset, onset + duration)
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        segments.push(ReferenceSegment {
            episode: Some(fields[1].to_string()),
            interval,
            speaker: CharacterId(fields[7].to_string()),
            text: None,
        });
    }
    Ok(ReferenceAnnotation { segments })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReference {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    episode: Option<String>,
    start_s: f64,
    end_s: f64,
    speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

pub fn load_reference_jsonl(path: &Path) -> Result<ReferenceAnnotation> {
    let rows: Vec<(usize, RawReference)> = read_jsonl(path)?;
    let mut segments = Vec::with_capacity(rows.len());
    for (line, raw) in rows {
        check_schema_version(raw.schema_version, path, line)?;
        let interval = TimeInterval::new(raw.start_s, raw.end_s)
            .map_err(|e| Error::validation(at(path, line), e.to_string()))?;
        segments.push(ReferenceSegment {
            episode: raw.episode,
            interval,
            speaker: CharacterId(raw.speaker),
            text: raw.text,
        });
    }
    Ok(ReferenceAnnotation { segments })
}

/// Dispatches on extension: `.rttm` is RTTM, anything else reference JSONL.
pub fn load_reference(path: &Path) -> Result<ReferenceAnnotation> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("rttm") => load_reference_rttm(path),
        _ => load_reference_jsonl(path),
    }
}

pub fn write_reference_jsonl(path: &Path, reference: &ReferenceAnnotation) -> Result<()> {
    let rows = reference.segments.iter().map(|s| RawReference {
        schema_version: None,
        episode: s.episode.clone(),
        start_s: s.interval.start(),
        end_s: s.interval.end(),
        speaker: s.speaker.0.clone(),
        text: s.text.clone(),
    });
    write_atomic(path, jsonl_string(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CastMember;

    fn rttm(s: &str) -> Result<ReferenceAnnotation> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.rttm");
        std::fs::write(&p, s).unwrap();
        load_reference_rttm(&p)
    }

    #[test]
    fn single_speaker_line() {
        let r = rttm("SPEAKER ep1 1 0.00 2.00 <NA> <NA> Frasier <NA> <NA>\n").unwrap();
        assert_eq!(r.segments.len(), 1);
        let s = &r.segments[0];
        assert_eq!((s.interval.start(), s.interval.end()), (0.0, 2.0));
        assert_eq!(s.speaker.as_str(), "Frasier");
        assert_eq!(s.episode.as_deref(), Some("ep1"));
    }

    #[test]
    fn empty_file() {
        assert!(rttm("").unwrap().is_empty());
    }

    #[test]
    fn negative_duration_is_parse_error() {
        let err = rttm("SPEAKER ep1 1 0.00 -1 <NA> <NA> Frasier <NA> <NA>\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn non_numeric_onset_is_parse_error() {
        let err = rttm("\nSPEAKER ep1 1 abc 1.0 <NA> <NA> Niles <NA> <NA>\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn other_record_types_skipped() {
        let r = rttm("SPKR-INFO ep1 1 <NA> <NA> <NA> unknown Roz <NA> <NA>\nSPEAKER ep1 1 1 1 <NA> <NA> Roz <NA> <NA>\n").unwrap();
        assert_eq!(r.segments.len(), 1);
    }

    #[test]
    fn aliases_resolve_only_with_cast() {
        let r = rttm("SPEAKER ep1 1 0 1 <NA> <NA> Dr.Crane <NA> <NA>\nSPEAKER ep1 1 1 1 <NA> <NA> Guest <NA> <NA>\n").unwrap();
        assert_eq!(r.segments[0].speaker.as_str(), "Dr.Crane");
        let cast = CastList::new(vec![CastMember {
            name: "Frasier".into(),
            is_main: true,
            aliases: vec!["Dr.Crane".into()],
        }])
        .unwrap();
        let r = r.resolve_aliases(&cast);
        assert_eq!(r.segments[0].speaker.as_str(), "Frasier");
        assert_eq!(r.segments[1].speaker.as_str(), "Guest");
    }
}
