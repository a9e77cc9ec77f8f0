use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{at, check_schema_version, jsonl_string, read_jsonl, write_atomic};
use crate::error::{Error, Result};
use crate::model::{normalize_intervals, TimeInterval};

/// Detected overlapped-speech regions keyed by episode, sorted and merged.
pub type OverlapDetections = BTreeMap<String, Vec<TimeInterval>>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverlap {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema_version: Option<u32>,
    episode: String,
    start_s: f64,
    end_s: f64,
}

pub fn load_overlap(path: &Path) -> Result<OverlapDetections> {
    let rows: Vec<(usize, RawOverlap)> = read_jsonl(path)?;
    let mut by_episode: BTreeMap<String, Vec<TimeInterval>> = BTreeMap::new();
    for (line, raw) in rows {
        check_schema_version(raw.schema_version, path, line)?;
        let iv = TimeInterval::new(raw.start_s, raw.end_s)
            .map_err(|e| Error::validation(at(path, line), e.to_string()))?;
        by_episode.entry(raw.episode).or_default().push(iv);
    }
    Ok(by_episode
        .into_iter()
        .map(|(ep, ivs)| (ep, normalize_intervals(ivs)))
        .collect())
}

pub fn write_overlap(path: &Path, detections: &OverlapDetections) -> Result<()> {
    let rows = detections.iter().flat_map(|(ep, ivs)| {
        ivs.iter().map(move |iv| RawOverlap {
            schema_version: None,
            episode: ep.clone(),
            start_s: iv.start(),
            end_s: iv.end(),
        })
    });
    write_atomic(path, jsonl_string(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merged_and_ordered_after_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("overlap.jsonl");
        std::fs::write(
            &p,
            concat!(
                r#"{"episode":"e","start_s":4.0,"end_s":5.0}"#,
                "\n",
                r#"{"episode":"e","start_s":1.0,"end_s":2.5}"#,
                "\n",
                r#"{"episode":"e","start_s":2.0,"end_s":3.0}"#,
                "\n"
            ),
        )
        .unwrap();
        let d = load_overlap(&p).unwrap();
        let e = &d["e"];
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].start(), e[0].end()), (1.0, 3.0));
        assert_eq!((e[1].start(), e[1].end()), (4.0, 5.0));
    }
}
