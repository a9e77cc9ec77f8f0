//! Diarisation and recognition scores, threshold sweeps and tuning.

mod cder;
mod curve;
mod der;
mod recognition;

pub use cder::{compute_cder, CderScore};
pub use curve::{
    assignments_at_threshold, precision_pocs_sweep, render_curve_csv, tune_thresholds, CurvePoint, Stratum,
    TunePoint, TuneResult,
};
pub use der::{compute_der, DerMode, DiarisationScore, SpeakerTurn};
pub use recognition::{
    best_reference, recognition_counts, recognition_report, RecognitionCounts, RecognitionReport, UNKNOWN_LABEL,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::ReferenceSegment;
use crate::model::{Assignment, CastList, CharacterId, TimeInterval};

pub fn reference_turns(reference: &[ReferenceSegment]) -> Vec<SpeakerTurn> {
    reference.iter().map(|r| SpeakerTurn::new(r.interval, r.speaker.clone())).collect()
}

/// Hypothesis timeline: one turn per label, so dual-labeled segments give two
/// turns and UNKNOWN segments a turn for the `UNKNOWN` pseudo-speaker.
pub fn hypothesis_turns(hypothesis: &[(TimeInterval, &Assignment)]) -> Vec<SpeakerTurn> {
    let mut turns = Vec::with_capacity(hypothesis.len());
    for (interval, a) in hypothesis {
        match &a.label {
            Some(l) => turns.push(SpeakerTurn::new(*interval, l.clone())),
            None => turns.push(SpeakerTurn::new(*interval, CharacterId::from(UNKNOWN_LABEL))),
        }
        if let Some(s) = &a.secondary_label {
            turns.push(SpeakerTurn::new(*interval, s.clone()));
        }
    }
    turns
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub der: DiarisationScore,
    #[serde(rename = "cder_op")]
    pub cder: CderScore,
    pub recognition: RecognitionReport,
}

impl EpisodeMetrics {
    /// Pools component counts across episodes.
    pub fn pooled(parts: &[EpisodeMetrics]) -> Result<Self> {
        let mut counts = RecognitionCounts::default();
        for p in parts {
            counts.merge(&p.recognition.counts);
        }
        Ok(Self {
            der: DiarisationScore::pooled(parts.iter().map(|p| &p.der))?,
            cder: CderScore::pooled(parts.iter().map(|p| &p.cder))?,
            recognition: RecognitionReport::from_counts(counts),
        })
    }
}

pub fn evaluate_episode(
    reference: &[SpeakerTurn],
    hypothesis: &[(TimeInterval, &Assignment)],
    cast: &CastList,
    collar: f64,
    mode: DerMode,
) -> Result<EpisodeMetrics> {
    let turns = hypothesis_turns(hypothesis);
    Ok(EpisodeMetrics {
        der: compute_der(reference, &turns, collar, mode)?,
        cder: compute_cder(reference, &turns)?,
        recognition: recognition_report(reference, hypothesis, cast),
    })
}
