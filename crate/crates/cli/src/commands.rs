use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::warn;
use serde::Serialize;
use serde_json::{json, Map, Value};

use charsub::assign::{run_stage2, ScriptedOracle, Stage2Output};
use charsub::exemplar::{
    categorize_clips, exemplars_from_records, run_stage1, select_exemplar_candidates, visible_candidates, Exemplar,
};
use charsub::io::{
    load_assignments, load_cast, load_exemplars, load_reference, write_assignments, write_atomic, write_exemplars,
    write_subtitles, AssignmentRecord, BundlePaths, EpisodeBundle, ExemplarRecord, SubtitleFormat,
};
use charsub::metrics::{
    evaluate_episode, precision_pocs_sweep, reference_turns, render_curve_csv, tune_thresholds, DerMode,
    EpisodeMetrics,
};
use charsub::model::{Assignment, Provenance, TimeInterval};
use charsub::synth::{synth_episode, write_corpus, EpisodeSpec, TruthOracle};
use charsub::{Error, PipelineConfig};

use crate::args::{
    AssignArgs, BuildArgs, ConfigArgs, CurveArgs, DerModeArg, EvalArgs, SubtitleKind, SynthArgs, TuneArgs,
    ValidateArgs,
};
use crate::manifest::{RunManifest, StageCounts};
use crate::{
    bundle_paths, ensure_dir, for_each_job, load_bundles, load_config, manifest_path, select_episodes, CliError,
    CliResult, OracleChoice,
};

/// Runs `body` and writes `<command>.manifest.json` into `out` whatever the outcome.
fn with_manifest(
    command: &str,
    out: &Path,
    config: &PipelineConfig,
    body: impl FnOnce(&mut RunManifest) -> CliResult<()>,
) -> CliResult<()> {
    ensure_dir(out)?;
    let mut m = RunManifest::new(command, config);
    let result = body(&mut m);
    match &result {
        Ok(()) => m.finish(0, None),
        Err(e) => m.finish(e.exit_code(), Some(e.to_string())),
    }
    if let Err(e) = m.write(&manifest_path(out, command)) {
        warn!("cannot write manifest: {e}");
        if result.is_ok() {
            return Err(e.into());
        }
    }
    result
}

fn output(m: &mut RunManifest, path: PathBuf) -> PathBuf {
    m.outputs.push(path.display().to_string());
    path
}

/// File-name-safe episode name.
fn file_stem(episode: &str) -> String {
    episode
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn check_exemplar_refs(bundles: &[EpisodeBundle], records: &[ExemplarRecord], path: &Path) -> CliResult<()> {
    let known: BTreeSet<_> = bundles.iter().flat_map(|b| b.segments.iter().map(|s| &s.id)).collect();
    if let Some(r) = records.iter().find(|r| !known.contains(&r.segment_id)) {
        return Err(Error::Validation {
            context: path.display().to_string(),
            message: format!("exemplar references unknown segment {}", r.segment_id),
        }
        .into());
    }
    Ok(())
}

/// Exemplars for one episode (from records, or rebuilt) and its count of
/// audio-visually recognised segments.
fn episode_exemplars(
    bundle: &EpisodeBundle,
    records: Option<&[ExemplarRecord]>,
    config: &PipelineConfig,
) -> CliResult<(Vec<Exemplar>, usize)> {
    match records {
        None => {
            let s1 = run_stage1(bundle, config)?;
            let av = s1.candidates.len();
            Ok((s1.exemplars, av))
        }
        Some(r) => {
            let categories = categorize_clips(&bundle.segments, &bundle.visual);
            let visible = visible_candidates(bundle, config)?;
            let av = select_exemplar_candidates(&bundle.segments, &categories, &visible).len();
            Ok((exemplars_from_records(bundle, r)?, av))
        }
    }
}

/// Shared front half of `assign`, `tune` and `curve`: digests, corpus, exemplars.
struct Prepared {
    bundles: Vec<EpisodeBundle>,
    selected: Vec<usize>,
    exemplars: Vec<(Vec<Exemplar>, usize)>,
}

fn prepare(
    m: &mut RunManifest,
    bundle: &crate::args::BundleArgs,
    config_args: &ConfigArgs,
    config: &PipelineConfig,
    exemplars: Option<&Path>,
    extra_inputs: &[&Path],
) -> CliResult<Prepared> {
    let paths = bundle_paths(bundle)?;
    let mut inputs: Vec<&Path> = paths.existing_files();
    inputs.extend(config_args.config.as_deref());
    inputs.extend(exemplars);
    inputs.extend(extra_inputs.iter().copied());
    m.digest_inputs(inputs)?;

    let (bundles, selected) = m.time("load", || load_bundles(&paths, bundle))?;
    let records = exemplars.map(load_exemplars).transpose()?;
    if let (Some(r), Some(p)) = (&records, exemplars) {
        check_exemplar_refs(&bundles, r, p)?;
    }
    let chosen: Vec<&EpisodeBundle> = selected.iter().map(|&i| &bundles[i]).collect();
    let exemplars = m.time("exemplars", || {
        for_each_job(config_args.jobs, &chosen, |b| episode_exemplars(b, records.as_deref(), config))
    })?;
    Ok(Prepared { bundles, selected, exemplars })
}

impl Prepared {
    fn pairs(&self) -> Vec<(EpisodeBundle, Vec<Exemplar>)> {
        self.selected.iter().zip(&self.exemplars).map(|(&i, (e, _))| (self.bundles[i].clone(), e.clone())).collect()
    }
}

pub fn build_exemplars(a: &BuildArgs) -> CliResult<()> {
    let config = load_config(&a.config)?;
    with_manifest("build-exemplars", &a.out, &config, |m| {
        let paths = bundle_paths(&a.bundle)?;
        let mut inputs = paths.existing_files();
        inputs.extend(a.config.config.as_deref());
        m.digest_inputs(inputs)?;
        if paths.visual.is_none() {
            warn!("no visual observations given; no exemplars can be selected");
        }
        let (bundles, selected) = m.time("load", || load_bundles(&paths, &a.bundle))?;
        let chosen: Vec<&EpisodeBundle> = selected.iter().map(|&i| &bundles[i]).collect();
        let outputs = m.time("exemplars", || for_each_job(a.config.jobs, &chosen, |b| Ok(run_stage1(b, &config)?)))?;

        let mut records = Vec::new();
        for (b, o) in chosen.iter().zip(&outputs) {
            let (segments, av_recognised, exemplars) = o.yield_counts();
            m.record_episode(&b.episode, StageCounts { segments, av_recognised, exemplars, ..Default::default() });
            records.extend(o.exemplars.iter().map(Exemplar::record));
        }
        let path = output(m, a.out.join("exemplars.jsonl"));
        m.time("write", || write_exemplars(&path, &records))?;
        let t = &m.totals;
        println!(
            "{} exemplars from {} segments ({} audio-visually recognised)",
            t.exemplars, t.segments, t.av_recognised
        );
        Ok(())
    })
}

pub fn assign(a: &AssignArgs) -> CliResult<()> {
    let config = load_config(&a.config)?;
    with_manifest("assign", &a.out, &config, |m| {
        let stub: Vec<&Path> = a.oracle.stub.as_deref().into_iter().collect();
        let p = prepare(m, &a.bundle, &a.config, &config, a.exemplars.as_deref(), &stub)?;
        let oracle = OracleChoice::from_args(&a.oracle)?;
        let work: Vec<(&EpisodeBundle, &[Exemplar])> =
            p.selected.iter().zip(&p.exemplars).map(|(&i, (e, _))| (&p.bundles[i], e.as_slice())).collect();
        let outs: Vec<Stage2Output> = m.time("assign", || {
            for_each_job(a.config.jobs, &work, |(b, ex)| Ok(run_stage2(b, ex, &config, oracle.oracle())?))
        })?;
        m.oracle = Some(oracle.stats());

        let mut records = Vec::new();
        let mut subtitle_files = Vec::new();
        for (((b, ex), (_, av)), out) in work.iter().zip(&p.exemplars).zip(&outs) {
            let mut counts =
                StageCounts { segments: b.segments.len(), av_recognised: *av, exemplars: ex.len(), ..Default::default() };
            counts.set_provenance(&out.provenance_counts());
            m.record_episode(&b.episode, counts);
            records.extend(out.segments.iter().zip(&out.assignments).map(|(s, a)| AssignmentRecord::new(s, a)));
            let (name, format) = match a.format {
                SubtitleKind::Srt => (format!("{}.srt", file_stem(&b.episode)), SubtitleFormat::Srt),
                SubtitleKind::Json => (format!("{}.subtitles.jsonl", file_stem(&b.episode)), SubtitleFormat::Json),
            };
            subtitle_files.push((output(m, a.out.join(name)), format));
        }
        let assignments_path = output(m, a.out.join("assignments.jsonl"));
        m.time("write", || -> CliResult<()> {
            for (out, (path, format)) in outs.iter().zip(&subtitle_files) {
                write_subtitles(&out.assignments, &out.segments, path, *format)?;
            }
            write_assignments(&assignments_path, &records)?;
            Ok(())
        })?;

        let t = &m.totals;
        let unknown = t.assignments.get(Provenance::Unresolved.as_str()).copied().unwrap_or(0);
        println!("{} segments labeled, {} unresolved", records.len() - unknown, unknown);
        let failures = oracle.failures();
        if failures > 0 {
            let msg = format!("{failures} oracle request(s) exhausted their retries; those segments stay unresolved");
            if a.oracle.strict_oracle {
                return Err(CliError::Oracle(msg));
            }
            warn!("{msg}");
        }
        Ok(())
    })
}

#[derive(Debug, Serialize)]
struct MetricsFile {
    collar_s: f64,
    der_mode: DerMode,
    episodes: BTreeMap<String, EpisodeMetrics>,
    overall: EpisodeMetrics,
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let config = load_config(&a.config)?;
    with_manifest("eval", &a.out, &config, |m| {
        let base = a.bundle.as_deref().map(BundlePaths::in_dir);
        let reference_path = a
            .reference
            .clone()
            .or_else(|| base.as_ref().and_then(|b| b.reference.clone()))
            .ok_or_else(|| CliError::Usage("--reference, or --bundle holding a reference file, is required".into()))?;
        let cast_path = a
            .cast
            .clone()
            .or_else(|| base.as_ref().map(|b| b.cast.clone()))
            .ok_or_else(|| CliError::Usage("--cast or --bundle is required".into()))?;
        let mut inputs = vec![reference_path.as_path(), cast_path.as_path(), a.assignments.as_path()];
        inputs.extend(a.config.config.as_deref());
        m.digest_inputs(inputs)?;

        let cast = load_cast(&cast_path)?;
        let reference = load_reference(&reference_path)?.resolve_aliases(&cast);
        let records = load_assignments(&a.assignments)?;
        let mut by_episode: BTreeMap<String, Vec<(TimeInterval, Assignment)>> = BTreeMap::new();
        for (line, r) in records.iter().enumerate() {
            let bad = |e: Error| Error::Validation {
                context: format!("{}:{}", a.assignments.display(), line + 1),
                message: e.to_string(),
            };
            let interval = r.interval().map_err(bad)?;
            let asg = r.to_assignment();
            asg.check_invariants().map_err(bad)?;
            by_episode.entry(r.episode.clone()).or_default().push((interval, asg));
        }
        let mut names: BTreeSet<String> = by_episode.keys().cloned().collect();
        names.extend(reference.episodes().into_iter().flatten());
        let names: Vec<String> = names.into_iter().collect();
        let keep = select_episodes(names.iter().map(String::as_str), &a.episodes)?;

        let mode = match a.der_mode {
            DerModeArg::Identification => DerMode::Identification,
            DerModeArg::Optimal => DerMode::Optimal,
        };
        let collar = config.der_collar_seconds;
        let mut episodes = BTreeMap::new();
        m.time("score", || -> CliResult<()> {
            for &i in &keep {
                let ep = &names[i];
                let ref_turns = reference_turns(&reference.for_episode(ep));
                let hyp = by_episode.get(ep).map(Vec::as_slice).unwrap_or_default();
                let hyp_refs: Vec<(TimeInterval, &Assignment)> = hyp.iter().map(|(t, a)| (*t, a)).collect();
                let metrics = evaluate_episode(&ref_turns, &hyp_refs, &cast, collar, mode)
                    .map_err(|e| Error::UndefinedMetric(format!("episode {ep}: {e}")))?;
                episodes.insert(ep.clone(), metrics);
            }
            Ok(())
        })?;
        for &i in &keep {
            let ep = &names[i];
            let hyp = by_episode.get(ep).map(Vec::as_slice).unwrap_or_default();
            let mut counts = StageCounts { segments: hyp.len(), ..Default::default() };
            let mut prov = BTreeMap::new();
            for (_, a) in hyp {
                *prov.entry(a.provenance).or_insert(0) += 1;
            }
            counts.set_provenance(&prov);
            m.record_episode(ep, counts);
        }
        let parts: Vec<EpisodeMetrics> = episodes.values().cloned().collect();
        let overall = EpisodeMetrics::pooled(&parts)?;
        println!(
            "DER {:.4}  CDER(op) {:.4}  accuracy {:.4}  precision {:.4}  recall {:.4}",
            overall.der.der,
            overall.cder.cder,
            overall.recognition.accuracy,
            overall.recognition.precision,
            overall.recognition.recall
        );
        let file = MetricsFile { collar_s: collar, der_mode: mode, episodes, overall };
        let mut text = serde_json::to_string_pretty(&file).expect("metrics serialize");
        text.push('\n');
        let path = output(m, a.out.join("metrics.json"));
        write_atomic(&path, text.as_bytes())?;
        Ok(())
    })
}

fn check_grid(grid: &[f64], flag: &str) -> CliResult<()> {
    if grid.is_empty() {
        return Err(CliError::Usage(format!("--{flag} needs at least one value")));
    }
    if let Some(d) = grid.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(CliError::Usage(format!("--{flag} value {d} is not a non-negative number")));
    }
    Ok(())
}

pub fn tune(a: &TuneArgs) -> CliResult<()> {
    let config = load_config(&a.config)?;
    with_manifest("tune", &a.out, &config, |m| {
        check_grid(&a.grid, "grid")?;
        let high = if a.high_grid.is_empty() { vec![config.high_confidence_threshold] } else { a.high_grid.clone() };
        check_grid(&high, "high-grid")?;
        let stub: Vec<&Path> = a.oracle.stub.as_deref().into_iter().collect();
        let p = prepare(m, &a.bundle, &a.config, &config, a.exemplars.as_deref(), &stub)?;
        let oracle = OracleChoice::from_args(&a.oracle)?;
        let pairs = p.pairs();
        let result = m.time("tune", || tune_thresholds(&pairs, &config, &a.grid, &high, oracle.oracle()))?;
        m.oracle = Some(oracle.stats());
        for (b, (ex, av)) in p.selected.iter().map(|&i| &p.bundles[i]).zip(&p.exemplars) {
            m.record_episode(
                &b.episode,
                StageCounts { segments: b.segments.len(), av_recognised: *av, exemplars: ex.len(), ..Default::default() },
            );
        }
        let mut text = serde_json::to_string_pretty(&result).expect("tune result serializes");
        text.push('\n');
        let path = output(m, a.out.join("tune.json"));
        write_atomic(&path, text.as_bytes())?;
        println!(
            "best assign_threshold={} high_confidence_threshold={} accuracy={:.4}",
            result.best.assign_threshold, result.best.high_confidence_threshold, result.best.accuracy
        );
        Ok(())
    })
}

pub fn default_curve_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 10.0).collect()
}

pub fn curve(a: &CurveArgs) -> CliResult<()> {
    let config = load_config(&a.config)?;
    with_manifest("curve", &a.out, &config, |m| {
        let grid = if a.grid.is_empty() { default_curve_grid() } else { a.grid.clone() };
        check_grid(&grid, "grid")?;
        let p = prepare(m, &a.bundle, &a.config, &config, a.exemplars.as_deref(), &[])?;
        for (b, (ex, av)) in p.selected.iter().map(|&i| &p.bundles[i]).zip(&p.exemplars) {
            m.record_episode(
                &b.episode,
                StageCounts { segments: b.segments.len(), av_recognised: *av, exemplars: ex.len(), ..Default::default() },
            );
        }
        let pairs = p.pairs();
        let points = m.time("sweep", || precision_pocs_sweep(&pairs, &config, &grid))?;
        let path = output(m, a.out.join("curve.csv"));
        write_atomic(&path, render_curve_csv(&points).as_bytes())?;
        println!("{} curve points written to {}", points.len(), path.display());
        Ok(())
    })
}

pub fn validate(a: &ValidateArgs) -> CliResult<()> {
    let config = match &a.config {
        Some(p) => load_config(&ConfigArgs { config: Some(p.clone()), overrides: vec![], jobs: 1 })?,
        None => PipelineConfig::default(),
    };
    let paths = bundle_paths(&a.bundle)?;
    let (bundles, selected) = load_bundles(&paths, &a.bundle)?;
    for &i in &selected {
        visible_candidates(&bundles[i], &config)?;
    }
    if let Some(p) = &a.exemplars {
        let records = load_exemplars(p)?;
        check_exemplar_refs(&bundles, &records, p)?;
        for b in &bundles {
            exemplars_from_records(b, &records)?;
        }
    }
    if let Some(p) = &a.assignments {
        let segments: BTreeMap<&str, &str> = bundles
            .iter()
            .flat_map(|b| b.segments.iter().map(|s| (s.id.as_str(), s.episode.as_str())))
            .collect();
        for (line, r) in load_assignments(p)?.iter().enumerate() {
            let bad = |message: String| Error::Validation { context: format!("{}:{}", p.display(), line + 1), message };
            r.interval().map_err(|e| bad(e.to_string()))?;
            r.to_assignment().check_invariants().map_err(|e| bad(e.to_string()))?;
            // Silence-split children carry a `#k` suffix on the parent id.
            let parent = r.segment_id.as_str().split('#').next().unwrap_or_default();
            match segments.get(parent) {
                Some(ep) if *ep == r.episode => {}
                Some(ep) => return Err(bad(format!("segment {parent} belongs to episode {ep}, not {}", r.episode)).into()),
                None => return Err(bad(format!("unknown segment {parent}")).into()),
            }
        }
    }
    if let Some(p) = &a.stub {
        ScriptedOracle::load(p)?;
    }
    let n_segments: usize = selected.iter().map(|&i| bundles[i].segments.len()).sum();
    println!("ok: {} episode(s), {} segment(s)", selected.len(), n_segments);
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    if a.episodes == 0 || a.segments == 0 || a.characters == 0 || a.dim < 2 {
        return Err(CliError::Usage("--episodes, --segments and --characters must be positive, --dim at least 2".into()));
    }
    let config = load_config(&a.config)?;
    ensure_dir(&a.out)?;
    let episodes: Vec<_> = (0..a.episodes)
        .map(|k| {
            let spec = EpisodeSpec {
                episode: format!("synth{:02}", k + 1),
                characters: a.characters,
                segments: a.segments,
                dim: a.dim,
                ..Default::default()
            };
            synth_episode(&spec, a.seed.wrapping_add(k as u64))
        })
        .collect();
    write_corpus(&a.out, &episodes)?;
    if a.with_stub {
        let mut rows = BTreeMap::new();
        for e in &episodes {
            let bundle = e.bundle()?;
            let exemplars = run_stage1(&bundle, &config)?.exemplars;
            let oracle = TruthOracle::new(e.truth.clone(), 0.9);
            run_stage2(&bundle, &exemplars, &config, Some(&oracle))?;
            rows.extend(oracle.recorded());
        }
        let mut text = String::new();
        for (id, dist) in rows {
            let d: Map<String, Value> = dist.into_iter().map(|(k, p)| (k.to_string(), json!(p))).collect();
            text.push_str(&json!({ "segment_id": id, "distribution": d }).to_string());
            text.push('\n');
        }
        write_atomic(&a.out.join("stub.jsonl"), text.as_bytes())?;
    }
    println!("{} episode(s) written to {}", episodes.len(), a.out.display());
    Ok(())
}
