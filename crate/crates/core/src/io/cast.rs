use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::model::CastList;

/// Loads `cast.json`: `{"characters":[{"name","is_main","aliases":[...]}]}`.
pub fn load_cast(path: &Path) -> Result<CastList> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_cast(path: &Path, cast: &CastList) -> Result<()> {
    let mut text = serde_json::to_string_pretty(cast).expect("cast serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
