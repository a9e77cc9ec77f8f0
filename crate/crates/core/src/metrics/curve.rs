use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::recognition::{best_reference, recognition_counts, RecognitionCounts, RecognitionReport};
use super::{reference_turns, SpeakerTurn};
use crate::assign::{nearest_exemplar, run_embedding_rungs, run_stage2, Oracle};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::exemplar::{visible_candidates, Exemplar};
use crate::io::EpisodeBundle;
use crate::model::{Assignment, Provenance, MAX_COSINE_DISTANCE};
use crate::par::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stratum {
    All,
    Long,
    Short,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::All, Stratum::Long, Stratum::Short];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stratum::All => "ALL",
            Stratum::Long => "LONG",
            Stratum::Short => "SHORT",
        }
    }

    fn admits(&self, duration: f64, long_threshold: f64) -> bool {
        match self {
            Stratum::All => true,
            Stratum::Long => duration > long_threshold,
            Stratum::Short => duration <= long_threshold,
        }
    }
}

/// `precision` is `None` when nothing in the stratum was both classified and
/// matched to a reference turn. `pocs` counts only non-exemplar segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub stratum: Stratum,
    pub threshold: f64,
    pub precision: Option<f64>,
    pub pocs: f64,
}

/// Embedding-only cascade at threshold `d`. At `d >= 2` every segment still
/// unlabeled is forced onto its nearest exemplar.
pub fn assignments_at_threshold(
    bundle: &EpisodeBundle,
    exemplars: &[Exemplar],
    config: &PipelineConfig,
    d: f64,
) -> Result<Vec<Assignment>> {
    let mut cfg = config.clone();
    cfg.assign_threshold = d;
    cfg.high_confidence_threshold = config.high_confidence_threshold.min(d);
    let mut out = run_embedding_rungs(bundle, exemplars, &cfg)?;
    if d >= MAX_COSINE_DISTANCE {
        let visible = visible_candidates(bundle, &cfg)?;
        for (seg, a) in bundle.segments.iter().zip(out.iter_mut()) {
            if !a.is_unknown() {
                continue;
            }
            if let Some((e, dist)) = nearest_exemplar(&bundle.embeddings[&seg.id], exemplars, visible.get(&seg.id)) {
                *a = Assignment::named(seg.id.clone(), e.character.clone(), Provenance::LongSegment, dist);
            }
        }
    }
    Ok(out)
}

/// Precision and proportion of classified segments per threshold and stratum,
/// with the language-model rung disabled.
pub fn precision_pocs_sweep(
    bundles: &[(EpisodeBundle, Vec<Exemplar>)],
    config: &PipelineConfig,
    grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(Error::validation("curve", "threshold grid is empty"));
    }
    if let Some(d) = grid.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(Error::validation("curve", format!("threshold {d} must be finite and non-negative")));
    }
    let refs: Vec<Option<Vec<SpeakerTurn>>> =
        bundles.iter().map(|(b, _)| b.reference.as_deref().map(reference_turns)).collect();

    let per_d: Vec<Vec<CurvePoint>> = grid
        .par_iter()
        .map(|&d| {
            // (classified, eligible, correct, judged) per stratum.
            let mut tally = [[0usize; 4]; 3];
            for ((bundle, exemplars), reference) in bundles.iter().zip(&refs) {
                let out = assignments_at_threshold(bundle, exemplars, config, d)?;
                for (seg, a) in bundle.segments.iter().zip(&out) {
                    if a.provenance == Provenance::Exemplar {
                        continue;
                    }
                    let truth = reference
                        .as_ref()
                        .and_then(|r| best_reference(r, &seg.interval).map(|k| &r[k].speaker));
                    for (s, t) in Stratum::ALL.iter().zip(tally.iter_mut()) {
                        if !s.admits(seg.duration(), config.long_segment_seconds) {
                            continue;
                        }
                        t[1] += 1;
                        if let Some(label) = &a.label {
                            t[0] += 1;
                            if let Some(truth) = truth {
                                t[3] += 1;
                                if label == truth {
                                    t[2] += 1;
                                }
                            }
                        }
                    }
                }
            }
            Ok(Stratum::ALL
                .iter()
                .zip(tally)
                .map(|(&stratum, [classified, eligible, correct, judged])| CurvePoint {
                    stratum,
                    threshold: d,
                    precision: (judged > 0).then(|| correct as f64 / judged as f64),
                    pocs: if eligible == 0 { 0.0 } else { classified as f64 / eligible as f64 },
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut points: Vec<CurvePoint> = per_d.into_iter().flatten().collect();
    points.sort_by(|a, b| a.stratum.cmp(&b.stratum).then(a.threshold.total_cmp(&b.threshold)));
    Ok(points)
}

/// `stratum,D,precision,pocs` with an empty precision field when undefined.
pub fn render_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("stratum,D,precision,pocs\n");
    for p in points {
        let precision = p.precision.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", p.stratum.as_str(), p.threshold, precision, p.pocs);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub assign_threshold: f64,
    pub high_confidence_threshold: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: TunePoint,
    pub table: Vec<TunePoint>,
}

/// Grid search over `(D, D_high)` by pooled validation accuracy. `D_high` is
/// capped at `D`. Ties go to the smaller `D`, then the smaller `D_high`.
pub fn tune_thresholds(
    bundles: &[(EpisodeBundle, Vec<Exemplar>)],
    config: &PipelineConfig,
    d_grid: &[f64],
    d_high_grid: &[f64],
    oracle: Option<&dyn Oracle>,
) -> Result<TuneResult> {
    if d_grid.is_empty() || d_high_grid.is_empty() {
        return Err(Error::InvalidInput("tune: threshold grid is empty".into()));
    }
    if let Some((b, _)) = bundles.iter().find(|(b, _)| b.reference.is_none()) {
        return Err(Error::validation(format!("episode {}", b.episode), "tuning needs a reference annotation"));
    }
    let mut pairs: Vec<(f64, f64)> = d_grid
        .iter()
        .flat_map(|&d| d_high_grid.iter().map(move |&h| (d, h.min(d))))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pairs.dedup();

    let table: Vec<TunePoint> = pairs
        .par_iter()
        .map(|&(d, h)| {
            let mut cfg = config.clone();
            cfg.assign_threshold = d;
            cfg.high_confidence_threshold = h;
            let mut counts = RecognitionCounts::default();
            for (bundle, exemplars) in bundles {
                let out = run_stage2(bundle, exemplars, &cfg, oracle)?;
                let reference = reference_turns(bundle.reference.as_deref().unwrap_or_default());
                let hyp: Vec<_> = out.segments.iter().map(|s| s.interval).zip(&out.assignments).collect();
                counts.merge(&recognition_counts(&reference, &hyp, &bundle.cast));
            }
            Ok(TunePoint {
                assign_threshold: d,
                high_confidence_threshold: h,
                accuracy: RecognitionReport::from_counts(counts).accuracy,
            })
        })
        .collect::<Result<_>>()?;

    let best = table
        .iter()
        .fold(None::<&TunePoint>, |best, p| match best {
            Some(b) if b.accuracy >= p.accuracy => Some(b),
            _ => Some(p),
        })
        .cloned()
        .expect("grid is non-empty");
    Ok(TuneResult { best, table })
}
