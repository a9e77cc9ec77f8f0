use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SpeakerTurn;
use crate::model::{Assignment, CastList, TimeInterval};

pub const UNKNOWN_LABEL: &str = "UNKNOWN";

/// Raw counts behind a [`RecognitionReport`]; these add across episodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecognitionCounts {
    pub segments: usize,
    pub unknown: usize,
    /// Segments overlapping at least one reference turn.
    pub matched: usize,
    /// Matched segments with a name.
    pub named: usize,
    pub correct: usize,
    /// Matched segments whose primary label is a main character.
    pub named_main: usize,
    pub correct_named_main: usize,
    /// Matched segments whose reference speaker is a main character.
    pub matched_main: usize,
    pub correct_matched_main: usize,
    /// reference speaker → predicted label (or `UNKNOWN`) → count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

impl RecognitionCounts {
    pub fn merge(&mut self, other: &RecognitionCounts) {
        self.segments += other.segments;
        self.unknown += other.unknown;
        self.matched += other.matched;
        self.named += other.named;
        self.correct += other.correct;
        self.named_main += other.named_main;
        self.correct_named_main += other.correct_named_main;
        self.matched_main += other.matched_main;
        self.correct_matched_main += other.correct_matched_main;
        for (r, row) in &other.confusion {
            let mine = self.confusion.entry(r.clone()).or_default();
            for (h, n) in row {
                *mine.entry(h.clone()).or_default() += n;
            }
        }
    }
}

/// Rates with an empty denominator are reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_main: f64,
    pub recall_main: f64,
    pub unknown_rate: f64,
    pub counts: RecognitionCounts,
}

fn rate(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl RecognitionReport {
    pub fn from_counts(counts: RecognitionCounts) -> Self {
        Self {
            accuracy: rate(counts.correct, counts.matched),
            precision: rate(counts.correct, counts.named),
            recall: rate(counts.correct, counts.matched),
            precision_main: rate(counts.correct_named_main, counts.named_main),
            recall_main: rate(counts.correct_matched_main, counts.matched_main),
            unknown_rate: rate(counts.unknown, counts.segments),
            counts,
        }
    }
}

/// Index of the reference turn overlapping `interval` the most; ties go to
/// the earlier turn in `reference`.
pub fn best_reference(reference: &[SpeakerTurn], interval: &TimeInterval) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, r) in reference.iter().enumerate() {
        let o = r.interval.overlap(interval);
        if o > 0.0 && best.is_none_or(|(_, b)| o > b) {
            best = Some((k, o));
        }
    }
    best.map(|(k, _)| k)
}

/// Counts for one episode. A segment is correct when either of its labels
/// names the speaker of its best-overlapping reference turn.
pub fn recognition_counts(
    reference: &[SpeakerTurn],
    hypothesis: &[(TimeInterval, &Assignment)],
    cast: &CastList,
) -> RecognitionCounts {
    let mut c = RecognitionCounts { segments: hypothesis.len(), ..Default::default() };
    for (interval, a) in hypothesis {
        if a.is_unknown() {
            c.unknown += 1;
        }
        let Some(k) = best_reference(reference, interval) else { continue };
        let truth = &reference[k].speaker;
        let correct = a.label.as_ref() == Some(truth) || a.secondary_label.as_ref() == Some(truth);
        c.matched += 1;
        if correct {
            c.correct += 1;
        }
        if cast.is_main(truth) {
            c.matched_main += 1;
            if correct {
                c.correct_matched_main += 1;
            }
        }
        if let Some(label) = &a.label {
            c.named += 1;
            if cast.is_main(label) {
                c.named_main += 1;
                if correct {
                    c.correct_named_main += 1;
                }
            }
        }
        let predicted = a.label.as_ref().map_or(UNKNOWN_LABEL, |l| l.as_str());
        *c.confusion.entry(truth.to_string()).or_default().entry(predicted.to_string()).or_default() += 1;
    }
    c
}

pub fn recognition_report(
    reference: &[SpeakerTurn],
    hypothesis: &[(TimeInterval, &Assignment)],
    cast: &CastList,
) -> RecognitionReport {
    RecognitionReport::from_counts(recognition_counts(reference, hypothesis, cast))
}
