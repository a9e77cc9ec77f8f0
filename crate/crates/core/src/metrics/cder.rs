use serde::{Deserialize, Serialize};

use super::SpeakerTurn;
use crate::error::{Error, Result};
use crate::model::normalize_intervals;

/// Utterance-level error under the operational rule: a reference utterance is
/// correct when hypothesis turns of the same speaker cover more than half of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CderScore {
    pub cder: f64,
    pub correct: usize,
    pub total: usize,
}

impl CderScore {
    fn from_counts(correct: usize, total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::UndefinedMetric("CDER(op): empty reference".into()));
        }
        Ok(Self { cder: 1.0 - correct as f64 / total as f64, correct, total })
    }

    pub fn pooled<'a>(scores: impl IntoIterator<Item = &'a CderScore>) -> Result<Self> {
        let (c, t) = scores.into_iter().fold((0, 0), |(c, t), s| (c + s.correct, t + s.total));
        Self::from_counts(c, t)
    }
}

/// Coverage is the union of same-speaker turns, so splitting a hypothesis turn
/// into contiguous pieces never changes the result.
pub fn compute_cder(reference: &[SpeakerTurn], hypothesis: &[SpeakerTurn]) -> Result<CderScore> {
    let correct = reference
        .iter()
        .filter(|u| {
            let pieces = hypothesis
                .iter()
                .filter(|h| h.speaker == u.speaker && h.interval.overlap(&u.interval) > 0.0)
                .map(|h| h.interval)
                .collect();
            let covered: f64 = normalize_intervals(pieces).iter().map(|p| p.overlap(&u.interval)).sum();
            covered > 0.5 * u.interval.duration()
        })
        .count();
    CderScore::from_counts(correct, reference.len())
}
