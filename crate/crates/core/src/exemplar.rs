//! Stage 1: mining high-confidence audio exemplars from lip-sync observations.
//!
//! Clips are categorised by peak count, every peak's visual identity is gated
//! by a distance threshold, and single-peak clips with exactly one confident
//! identity become candidates. Candidates then survive only if their `N`
//! nearest candidate neighbours in speaker-embedding space all share their
//! label.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{EpisodeBundle, ExemplarRecord};
use crate::model::{CastList, CharacterId, SegmentId, SegmentRecord, SpeakerEmbedding, VisualSpeakerObservation};
use crate::par::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClipCategory {
    NoPeak,
    SinglePeak,
    MultiPeak,
}

impl ClipCategory {
    pub fn from_peak_count(n: usize) -> Self {
        match n {
            0 => ClipCategory::NoPeak,
            1 => ClipCategory::SinglePeak,
            _ => ClipCategory::MultiPeak,
        }
    }
}

/// Characters confidently seen speaking during a segment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VisibleCandidates {
    pub segment_id: SegmentId,
    pub candidates: BTreeSet<CharacterId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExemplarSource {
    Stage1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub segment_id: SegmentId,
    pub character: CharacterId,
    pub embedding: SpeakerEmbedding,
    pub source: ExemplarSource,
}

impl Exemplar {
    pub fn record(&self) -> ExemplarRecord {
        ExemplarRecord {
            schema_version: None,
            segment_id: self.segment_id.clone(),
            character: self.character.clone(),
        }
    }
}

/// A segment proposed as an exemplar, before the audio purity check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarCandidate {
    pub segment_id: SegmentId,
    pub character: CharacterId,
}

/// Segments without an observation row are `NoPeak`.
pub fn categorize_clips(
    segments: &[SegmentRecord],
    observations: &BTreeMap<SegmentId, VisualSpeakerObservation>,
) -> BTreeMap<SegmentId, ClipCategory> {
    segments
        .iter()
        .map(|s| {
            let n = observations.get(&s.id).map_or(0, |o| o.peaks.len());
            (s.id.clone(), ClipCategory::from_peak_count(n))
        })
        .collect()
}

/// Admits each peak's nearest character when its distance is below `threshold`.
/// Equal distances resolve to the earlier cast member.
pub fn gate_visual_identity(
    observation: &VisualSpeakerObservation,
    cast: &CastList,
    threshold: f64,
) -> Result<VisibleCandidates> {
    let mut candidates = BTreeSet::new();
    for peak in &observation.peaks {
        let mut best: Option<(&CharacterId, f64)> = None;
        for name in cast.names() {
            let d = *peak.distances.get(name).ok_or_else(|| {
                Error::validation(
                    format!("visual observation {}", observation.segment_id),
                    format!("peak {} has no distance for {name}", peak.peak_index),
                )
            })?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((name, d));
            }
        }
        if let Some((name, d)) = best {
            if d < threshold {
                candidates.insert(name.clone());
            }
        }
    }
    Ok(VisibleCandidates {
        segment_id: observation.segment_id.clone(),
        candidates,
    })
}

/// Single-peak segments whose gated identity set has exactly one member.
pub fn select_exemplar_candidates(
    segments: &[SegmentRecord],
    categories: &BTreeMap<SegmentId, ClipCategory>,
    visible: &BTreeMap<SegmentId, VisibleCandidates>,
) -> Vec<ExemplarCandidate> {
    segments
        .iter()
        .filter(|s| categories.get(&s.id) == Some(&ClipCategory::SinglePeak))
        .filter_map(|s| {
            let v = visible.get(&s.id)?;
            if v.candidates.len() == 1 {
                Some(ExemplarCandidate {
                    segment_id: s.id.clone(),
                    character: v.candidates.iter().next().unwrap().clone(),
                })
            } else {
                None
            }
        })
        .collect()
}

/// Keeps candidates whose `n` nearest neighbours within the candidate pool all
/// carry the same label. Neighbours tied with the n-th distance are included.
pub fn audio_purity_filter(
    candidates: &[ExemplarCandidate],
    embeddings: &BTreeMap<SegmentId, SpeakerEmbedding>,
    n: usize,
) -> Result<Vec<Exemplar>> {
    purity_filter_in_pool(candidates, candidates, embeddings, n)
}

/// [`audio_purity_filter`] with the neighbour pool given separately from the
/// candidates being judged.
pub fn purity_filter_in_pool(
    subjects: &[ExemplarCandidate],
    pool: &[ExemplarCandidate],
    embeddings: &BTreeMap<SegmentId, SpeakerEmbedding>,
    n: usize,
) -> Result<Vec<Exemplar>> {
    if n == 0 {
        return Err(Error::InvalidInput("purity neighbour count must be at least 1".into()));
    }
    let lookup = |id: &SegmentId| {
        embeddings.get(id).ok_or_else(|| {
            Error::validation(format!("exemplar candidate {id}"), "candidate has no embedding")
        })
    };
    let pool_emb: Vec<(&ExemplarCandidate, &SpeakerEmbedding)> = pool
        .iter()
        .map(|c| Ok((c, lookup(&c.segment_id)?)))
        .collect::<Result<_>>()?;

    let verdicts: Vec<Option<Exemplar>> = subjects
        .par_iter()
        .map(|cand| -> Result<Option<Exemplar>> {
            let emb = lookup(&cand.segment_id)?;
            let mut neighbours: Vec<(f64, &SegmentId, &CharacterId)> = pool_emb
                .iter()
                .filter(|(c, _)| c.segment_id != cand.segment_id)
                .map(|(c, e)| (emb.distance(e), &c.segment_id, &c.character))
                .collect();
            if neighbours.len() < n {
                return Ok(None);
            }
            neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            let cutoff = neighbours[n - 1].0;
            let pure = neighbours
                .iter()
                .take_while(|(d, _, _)| *d <= cutoff)
                .all(|(_, _, label)| *label == &cand.character);
            Ok(pure.then(|| Exemplar {
                segment_id: cand.segment_id.clone(),
                character: cand.character.clone(),
                embedding: emb.clone(),
                source: ExemplarSource::Stage1,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(verdicts.into_iter().flatten().collect())
}

/// Intermediate and final products of Stage 1 for one episode.
#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub categories: BTreeMap<SegmentId, ClipCategory>,
    pub visible: BTreeMap<SegmentId, VisibleCandidates>,
    pub candidates: Vec<ExemplarCandidate>,
    pub exemplars: Vec<Exemplar>,
}

impl Stage1Output {
    /// (segments, audio-visually recognised candidates, exemplars).
    pub fn yield_counts(&self) -> (usize, usize, usize) {
        (self.categories.len(), self.candidates.len(), self.exemplars.len())
    }
}

pub fn run_stage1(bundle: &EpisodeBundle, config: &PipelineConfig) -> Result<Stage1Output> {
    let categories = categorize_clips(&bundle.segments, &bundle.visual);
    let visible = visible_candidates(bundle, config)?;
    let candidates = select_exemplar_candidates(&bundle.segments, &categories, &visible);
    let exemplars = audio_purity_filter(&candidates, &bundle.embeddings, config.purity_neighbors)?;
    Ok(Stage1Output {
        categories,
        visible,
        candidates,
        exemplars,
    })
}

/// Gated identities for every segment that has an observation row.
pub fn visible_candidates(
    bundle: &EpisodeBundle,
    config: &PipelineConfig,
) -> Result<BTreeMap<SegmentId, VisibleCandidates>> {
    bundle
        .visual
        .values()
        .map(|o| {
            let v = gate_visual_identity(o, &bundle.cast, config.visual_confidence_threshold)?;
            Ok((o.segment_id.clone(), v))
        })
        .collect()
}

/// Rebuilds exemplars from `exemplars.jsonl` records against a bundle.
pub fn exemplars_from_records(bundle: &EpisodeBundle, records: &[ExemplarRecord]) -> Result<Vec<Exemplar>> {
    records
        .iter()
        .filter(|r| bundle.segment(&r.segment_id).is_some())
        .map(|r| {
            if !bundle.cast.contains(&r.character) {
                return Err(Error::validation(
                    format!("exemplar {}", r.segment_id),
                    format!("character {} is not in the cast list", r.character),
                ));
            }
            Ok(Exemplar {
                segment_id: r.segment_id.clone(),
                character: r.character.clone(),
                embedding: bundle.embeddings[&r.segment_id].clone(),
                source: ExemplarSource::Stage1,
            })
        })
        .collect()
}
