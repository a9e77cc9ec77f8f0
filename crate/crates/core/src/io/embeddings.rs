use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{at, check_schema_version, jsonl_string, read_jsonl, write_atomic};
use crate::error::{Error, Result};
use crate::model::{SegmentId, SpeakerEmbedding};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEmbedding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema_version: Option<u32>,
    segment_id: String,
    vector: Vec<f64>,
}

/// Loads `embeddings.jsonl`. With `expected_dim == None` the first row fixes
/// the dimension for the rest of the file.
pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<Vec<SpeakerEmbedding>> {
    let rows: Vec<(usize, RawEmbedding)> = read_jsonl(path)?;
    let mut dim = expected_dim;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, raw) in rows {
        check_schema_version(raw.schema_version, path, line)?;
        let ctx = || format!("{} (segment {})", at(path, line), raw.segment_id);
        let expected = *dim.get_or_insert(raw.vector.len());
        if raw.vector.len() != expected {
            return Err(Error::validation(
                ctx(),
                format!("dimension {} does not match expected {expected}", raw.vector.len()),
            ));
        }
        if !seen.insert(raw.segment_id.clone()) {
            return Err(Error::validation(ctx(), "duplicate segment_id"));
        }
        let emb = SpeakerEmbedding::new(SegmentId(raw.segment_id.clone()), raw.vector)
            .map_err(|e| Error::validation(ctx(), e.to_string()))?;
        out.push(emb);
    }
    out.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    Ok(out)
}

pub fn write_embeddings(path: &Path, embeddings: &[SpeakerEmbedding]) -> Result<()> {
    let rows = embeddings.iter().map(|e| RawEmbedding {
        schema_version: None,
        segment_id: e.segment_id.0.clone(),
        vector: e.vector().to_vec(),
    });
    write_atomic(path, jsonl_string(rows).as_bytes())
}
