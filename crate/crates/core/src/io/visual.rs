use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{at, check_schema_version, jsonl_string, read_jsonl, write_atomic};
use crate::error::{Error, Result};
use crate::model::{CharacterId, SegmentId, VisualPeak, VisualSpeakerObservation};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPeak {
    peak_index: u32,
    distances: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObservation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema_version: Option<u32>,
    segment_id: String,
    #[serde(default)]
    peaks: Vec<RawPeak>,
}

/// Loads `visual.jsonl`. Cast coverage is checked later, by the gating step.
pub fn load_visual(path: &Path) -> Result<Vec<VisualSpeakerObservation>> {
    let rows: Vec<(usize, RawObservation)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, raw) in rows {
        check_schema_version(raw.schema_version, path, line)?;
        let ctx = || format!("{} (segment {})", at(path, line), raw.segment_id);
        if !seen.insert(raw.segment_id.clone()) {
            return Err(Error::validation(ctx(), "duplicate segment_id"));
        }
        let mut peaks = Vec::with_capacity(raw.peaks.len());
        for p in &raw.peaks {
            if let Some((name, d)) = p.distances.iter().find(|(_, d)| !(d.is_finite() && **d >= 0.0)) {
                return Err(Error::validation(
                    ctx(),
                    format!("peak {}: distance to {name} must be non-negative, got {d}", p.peak_index),
                ));
            }
            peaks.push(VisualPeak {
                peak_index: p.peak_index,
                distances: p
                    .distances
                    .iter()
                    .map(|(k, v)| (CharacterId(k.clone()), *v))
                    .collect(),
            });
        }
        out.push(VisualSpeakerObservation {
            segment_id: SegmentId(raw.segment_id.clone()),
            peaks,
        });
    }
    out.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    Ok(out)
}

pub fn write_visual(path: &Path, observations: &[VisualSpeakerObservation]) -> Result<()> {
    let rows = observations.iter().map(|o| RawObservation {
        schema_version: None,
        segment_id: o.segment_id.0.clone(),
        peaks: o
            .peaks
            .iter()
            .map(|p| RawPeak {
                peak_index: p.peak_index,
                distances: p.distances.iter().map(|(k, v)| (k.0.clone(), *v)).collect(),
            })
            .collect(),
    });
    write_atomic(path, jsonl_string(rows).as_bytes())
}
