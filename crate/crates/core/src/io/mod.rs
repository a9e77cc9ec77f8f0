//! Readers and writers for every on-disk artifact.
//!
//! Record files are line-delimited JSON. Blank lines are skipped; each record
//! may carry an optional `"schema_version"` which must equal
//! [`SCHEMA_VERSION`] when present.

mod bundle;
mod cast;
mod embeddings;
mod overlap;
mod reference;
mod segments;
mod subtitles;
mod visual;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use bundle::{load_corpus, BundlePaths, EpisodeBundle};
pub use cast::{load_cast, write_cast};
pub use embeddings::{load_embeddings, write_embeddings};
pub use overlap::{load_overlap, write_overlap, OverlapDetections};
pub use reference::{
    load_reference, load_reference_jsonl, load_reference_rttm, write_reference_jsonl,
    ReferenceAnnotation, ReferenceSegment,
};
pub use segments::{load_segments, write_segments};
pub use subtitles::{
    format_srt_timestamp, load_assignments, load_exemplars, render_srt, write_assignments,
    write_exemplars, write_subtitles, AssignmentRecord, ExemplarRecord, SubtitleFormat,
};
pub use visual::{load_visual, write_visual};

pub const SCHEMA_VERSION: u32 = 1;

pub(crate) fn check_schema_version(
    version: Option<u32>,
    path: &Path,
    line: usize,
) -> Result<()> {
    match version {
        None | Some(SCHEMA_VERSION) => Ok(()),
        Some(v) => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})"),
        }),
    }
}

/// Parses every non-blank line of a JSONL file, returning 1-based line numbers.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

pub(crate) fn jsonl_string<T: Serialize>(records: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    // Temporary files are created owner-only; outputs get ordinary permissions.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub(crate) fn at(path: &Path, line: usize) -> String {
    format!("{}:{line}", path.display())
}
