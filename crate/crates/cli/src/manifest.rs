//! Run manifest: what went in, what came out, and how long each stage took.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use charsub::model::Provenance;
use charsub::{Error, PipelineConfig, Result};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Per-episode yield. `exemplars <= av_recognised <= segments` always holds for
/// counts produced by exemplar building.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    pub segments: usize,
    pub av_recognised: usize,
    pub exemplars: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub assignments: BTreeMap<String, usize>,
}

impl StageCounts {
    pub fn add(&mut self, other: &StageCounts) {
        self.segments += other.segments;
        self.av_recognised += other.av_recognised;
        self.exemplars += other.exemplars;
        for (k, v) in &other.assignments {
            *self.assignments.entry(k.clone()).or_insert(0) += v;
        }
    }

    pub fn set_provenance(&mut self, counts: &BTreeMap<Provenance, usize>) {
        self.assignments = counts.iter().map(|(p, n)| (p.as_str().to_string(), *n)).collect();
    }

    pub fn yield_ordered(&self) -> bool {
        self.exemplars <= self.av_recognised && self.av_recognised <= self.segments
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OracleStats {
    pub mode: String,
    pub calls: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub status: RunStatus,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: PipelineConfig,
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
    pub episodes: BTreeMap<String, StageCounts>,
    pub totals: StageCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleStats>,
    pub outputs: Vec<String>,
    pub timings: Vec<StageTiming>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        let canonical = serde_json::to_vec(config).expect("config serializes");
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            status: RunStatus::Running,
            exit_code: 0,
            error: None,
            config: config.clone(),
            config_sha256: sha256_hex(&canonical),
            inputs: Vec::new(),
            episodes: BTreeMap::new(),
            totals: StageCounts::default(),
            oracle: None,
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// Hashes every file before any of them is parsed.
    pub fn digest_inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
        for p in paths {
            let bytes = std::fs::read(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })?;
            self.inputs.push(InputDigest {
                path: p.display().to_string(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(())
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming { stage: stage.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    pub fn record_episode(&mut self, episode: &str, counts: StageCounts) {
        self.totals.add(&counts);
        self.episodes.insert(episode.to_string(), counts);
    }

    pub fn finish(&mut self, exit_code: i32, error: Option<String>) {
        self.exit_code = exit_code;
        self.status = if exit_code == 0 { RunStatus::Ok } else { RunStatus::Failed };
        self.error = error;
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        charsub::io::write_atomic(path, text.as_bytes())
    }
}
