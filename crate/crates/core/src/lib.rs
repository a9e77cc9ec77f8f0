//! Engine for character-aware subtitles: mines audio exemplars from lip-sync
//! observations, labels every transcript segment with a character name and
//! scores the result.

pub mod assign;
pub mod config;
pub mod error;
pub mod exemplar;
pub mod io;
pub mod metrics;
pub mod model;
pub mod par;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
