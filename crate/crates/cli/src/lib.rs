//! Command-line front end. `run` parses arguments, dispatches a subcommand and
//! maps the outcome to a process exit status:
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | metric undefined or internal contract     |
//! | 2    | usage or input validation                 |
//! | 3    | oracle retries exhausted (`--strict-oracle`) |

pub mod args;
mod commands;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::Parser;
use log::info;
use serde_json::Value;

use charsub::assign::{HttpOracle, HttpOracleConfig, LlmPrompt, LlmQuery, LlmVerdict, Oracle, OracleError, ScriptedOracle};
use charsub::io::{load_corpus, BundlePaths, EpisodeBundle};
use charsub::{Error, PipelineConfig};

use args::{BundleArgs, Cli, Command, ConfigArgs, OracleArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_METRIC: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;

pub const ENV_ORACLE_URL: &str = "CHARSUB_ORACLE_URL";
pub const ENV_ORACLE_TOKEN: &str = "CHARSUB_ORACLE_TOKEN";
pub const ENV_ORACLE_MODEL: &str = "CHARSUB_ORACLE_MODEL";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Engine(#[from] Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Oracle(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Engine(e) if e.is_input_error() => EXIT_INPUT,
            CliError::Engine(_) => EXIT_METRIC,
            CliError::Usage(_) => EXIT_INPUT,
            CliError::Oracle(_) => EXIT_ORACLE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::BuildExemplars(a) => commands::build_exemplars(&a),
        Command::Assign(a) => commands::assign(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Tune(a) => commands::tune(&a),
        Command::Curve(a) => commands::curve(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Config file, then `--set` overrides, then validation.
pub fn load_config(args: &ConfigArgs) -> CliResult<PipelineConfig> {
    let bad = |m: String| CliError::Engine(Error::Validation { context: "config".into(), message: m });
    let mut value = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.clone(), source })?;
            serde_json::from_str::<Value>(&text).map_err(|e| bad(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    let obj = value.as_object_mut().ok_or_else(|| bad("config must be a JSON object".into()))?;
    for o in &args.overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        obj.insert(key.trim().to_string(), v);
    }
    let config: PipelineConfig = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Resolves file locations from `--bundle` and the per-file overrides.
pub fn bundle_paths(args: &BundleArgs) -> CliResult<BundlePaths> {
    let base = args.bundle.as_deref().map(BundlePaths::in_dir);
    let need = |flag: &Option<PathBuf>, from_dir: Option<&PathBuf>, name: &str| {
        flag.clone()
            .or_else(|| from_dir.cloned())
            .ok_or_else(|| CliError::Usage(format!("--{name} or --bundle is required")))
    };
    Ok(BundlePaths {
        segments: need(&args.segments, base.as_ref().map(|b| &b.segments), "segments")?,
        embeddings: need(&args.embeddings, base.as_ref().map(|b| &b.embeddings), "embeddings")?,
        cast: need(&args.cast, base.as_ref().map(|b| &b.cast), "cast")?,
        visual: args.visual.clone().or_else(|| base.as_ref().and_then(|b| b.visual.clone())),
        overlap: args.overlap.clone().or_else(|| base.as_ref().and_then(|b| b.overlap.clone())),
        reference: args.reference.clone().or_else(|| base.as_ref().and_then(|b| b.reference.clone())),
    })
}

/// Every bundle, loaded in full so cross-file references are checked, and the
/// subset selected by `--episode`.
pub fn load_bundles(paths: &BundlePaths, args: &BundleArgs) -> CliResult<(Vec<EpisodeBundle>, Vec<usize>)> {
    let all = load_corpus(paths, args.expected_dim)?;
    let selected = select_episodes(all.iter().map(|b| b.episode.as_str()), &args.episodes)?;
    Ok((all, selected))
}

/// Indices of the requested episodes, or all of them when none is requested.
pub fn select_episodes<'a>(available: impl Iterator<Item = &'a str>, wanted: &[String]) -> CliResult<Vec<usize>> {
    let available: Vec<&str> = available.collect();
    if wanted.is_empty() {
        return Ok((0..available.len()).collect());
    }
    for w in wanted {
        if !available.contains(&w.as_str()) {
            return Err(Error::InvalidInput(format!("episode {w} is not in the corpus")).into());
        }
    }
    Ok((0..available.len()).filter(|&i| wanted.iter().any(|w| w == available[i])).collect())
}

/// Maps `f` over the items, on a dedicated pool of `jobs` threads when
/// `jobs > 1`. Output order follows input order either way.
pub fn for_each_job<T, R, F>(jobs: u16, items: &[T], f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> CliResult<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs as usize)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
        return pool.install(|| items.par_iter().map(&f).collect());
    }
    #[cfg(not(feature = "parallel"))]
    if jobs > 1 {
        log::warn!("built without the parallel feature; --jobs {jobs} runs sequentially");
    }
    items.iter().map(f).collect()
}

/// The oracle selected by the flags and environment, with failure counting.
pub struct OracleChoice {
    pub mode: &'static str,
    inner: Option<Box<dyn Oracle>>,
    failures: AtomicUsize,
}

impl OracleChoice {
    /// `--stub` wins, then `--no-llm`, then the endpoint in the environment.
    /// With none of them the language-model rung is disabled.
    pub fn from_args(args: &OracleArgs) -> CliResult<Self> {
        let (mode, inner): (&'static str, Option<Box<dyn Oracle>>) = if let Some(p) = &args.stub {
            ("stub", Some(Box::new(ScriptedOracle::load(p)?)))
        } else if args.no_llm {
            ("off", None)
        } else if let Ok(url) = std::env::var(ENV_ORACLE_URL) {
            let mut cfg = HttpOracleConfig::new(url);
            cfg.api_key = std::env::var(ENV_ORACLE_TOKEN).ok();
            if let Ok(m) = std::env::var(ENV_ORACLE_MODEL) {
                cfg.model = m;
            }
            ("http", Some(Box::new(HttpOracle::new(cfg)?)))
        } else {
            info!("no --stub and {ENV_ORACLE_URL} unset; language-model rung disabled");
            ("off", None)
        };
        Ok(Self { mode, inner, failures: AtomicUsize::new(0) })
    }

    pub fn oracle(&self) -> Option<&dyn Oracle> {
        self.inner.as_ref().map(|_| self as &dyn Oracle)
    }

    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> manifest::OracleStats {
        manifest::OracleStats { mode: self.mode.to_string(), calls: self.calls(), failures: self.failures() }
    }
}

impl Oracle for OracleChoice {
    fn complete(&self, query: &LlmQuery, prompt: &LlmPrompt) -> Result<LlmVerdict, OracleError> {
        let inner = self.inner.as_ref().ok_or_else(|| OracleError::NoScript(query.target_segment_id.clone()))?;
        let r = inner.complete(query, prompt);
        if matches!(r, Err(OracleError::Transport { .. })) {
            self.failures.fetch_add(1, Ordering::SeqCst);
        }
        r
    }

    fn calls(&self) -> usize {
        self.inner.as_ref().map_or(0, |o| o.calls())
    }
}

fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("{command}.manifest.json"))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    Ok(())
}
