//! Shared domain types and elementary interval / embedding arithmetic.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest value [`cosine_distance`] can return (antipodal vectors).
pub const MAX_COSINE_DISTANCE: f64 = 2.0;

/// A half-open span of time in seconds with `0 <= start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeInterval {
    start: f64,
    end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidInput(format!(
                "interval bounds must be finite, got [{start}, {end}]"
            )));
        }
        if start < 0.0 {
            return Err(Error::InvalidInput(format!(
                "interval start must be non-negative, got {start}"
            )));
        }
        if end <= start {
            return Err(Error::InvalidInput(format!(
                "interval end must exceed start, got [{start}, {end}]"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn overlap(&self, other: &TimeInterval) -> f64 {
        interval_overlap(self, other)
    }

    pub fn contains(&self, other: &TimeInterval) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl<'de> Deserialize<'de> for TimeInterval {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            start: f64,
            end: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        TimeInterval::new(raw.start, raw.end).map_err(serde::de::Error::custom)
    }
}

/// Length of the shared interior of two intervals; zero when they only touch.
pub fn interval_overlap(a: &TimeInterval, b: &TimeInterval) -> f64 {
    (a.end.min(b.end) - a.start.max(b.start)).max(0.0)
}

/// Cosine distance `1 - u.v / (|u||v|)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidInput("zero vector has no direction".into()));
    }
    if !nu.is_finite() || !nv.is_finite() {
        return Err(Error::InvalidInput("vector contains non-finite values".into()));
    }
    Ok(cosine_from_parts(dot(u, v), nu, nv))
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn l2_norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

#[inline]
pub(crate) fn cosine_from_parts(dot: f64, nu: f64, nv: f64) -> f64 {
    (1.0 - dot / (nu * nv)).clamp(0.0, MAX_COSINE_DISTANCE)
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque segment identifier, unique across a corpus.
    SegmentId
);
string_id!(
    /// Canonical character name from a cast list.
    CharacterId
);

#[derive(Debug, Clone, PartialEq)]
pub struct WordToken {
    pub text: String,
    pub interval: TimeInterval,
}

/// One ASR sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub id: SegmentId,
    pub episode: String,
    pub interval: TimeInterval,
    pub text: String,
    pub words: Vec<WordToken>,
    /// Position in the episode's dialogue order.
    pub ordinal: usize,
}

impl SegmentRecord {
    pub fn duration(&self) -> f64 {
        self.interval.duration()
    }

    /// Checks word ordering and containment.
    pub fn validate_words(&self) -> Result<()> {
        for (i, w) in self.words.iter().enumerate() {
            if !self.interval.contains(&w.interval) {
                return Err(Error::validation(
                    format!("segment {}", self.id),
                    format!("word {i} ({:?}) lies outside the segment interval", w.text),
                ));
            }
            if i > 0 && w.interval.start() < self.words[i - 1].interval.end() {
                return Err(Error::validation(
                    format!("segment {}", self.id),
                    format!("word {i} ({:?}) overlaps or precedes the previous word", w.text),
                ));
            }
        }
        Ok(())
    }
}

/// Sorts segments by `(episode, start, id)` and numbers them per episode.
pub fn assign_ordinals(segments: &mut [SegmentRecord]) {
    segments.sort_by(|a, b| {
        a.episode
            .cmp(&b.episode)
            .then(a.interval.start().total_cmp(&b.interval.start()))
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut ordinal = 0;
    for i in 0..segments.len() {
        if i > 0 && segments[i].episode != segments[i - 1].episode {
            ordinal = 0;
        }
        segments[i].ordinal = ordinal;
        ordinal += 1;
    }
}

/// Fixed-dimension speaker embedding of a segment's audio.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub segment_id: SegmentId,
    vector: Vec<f64>,
    norm: f64,
}

impl SpeakerEmbedding {
    pub fn new(segment_id: SegmentId, vector: Vec<f64>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::InvalidInput(format!(
                "embedding for {segment_id} is empty"
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "embedding for {segment_id} contains non-finite values"
            )));
        }
        let norm = l2_norm(&vector);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidInput(format!(
                "embedding for {segment_id} is a zero vector"
            )));
        }
        Ok(Self {
            segment_id,
            vector,
            norm,
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Cosine distance to another embedding of the same dimension.
    pub fn distance(&self, other: &SpeakerEmbedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        cosine_from_parts(dot(&self.vector, &other.vector), self.norm, other.norm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CastMember {
    pub name: CharacterId,
    #[serde(default)]
    pub is_main: bool,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// The characters of a show, in a fixed order used for tie-breaking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CastList {
    characters: Vec<CastMember>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl CastList {
    pub fn new(characters: Vec<CastMember>) -> Result<Self> {
        let mut lookup = HashMap::new();
        for (i, member) in characters.iter().enumerate() {
            if member.name.as_str().is_empty() {
                return Err(Error::validation("cast", "empty character name"));
            }
            if lookup.insert(member.name.0.clone(), i).is_some() {
                return Err(Error::validation(
                    "cast",
                    format!("duplicate character name {:?}", member.name.0),
                ));
            }
        }
        for (i, member) in characters.iter().enumerate() {
            for alias in &member.aliases {
                match lookup.get(alias) {
                    Some(&j) if j == i => {}
                    Some(&j) => {
                        return Err(Error::validation(
                            "cast",
                            format!(
                                "alias {:?} of {:?} already names {:?}",
                                alias, member.name.0, characters[j].name.0
                            ),
                        ))
                    }
                    None => {
                        lookup.insert(alias.clone(), i);
                    }
                }
            }
        }
        Ok(Self { characters, lookup })
    }

    pub fn members(&self) -> &[CastMember] {
        &self.characters
    }

    pub fn len(&self) -> usize {
        self.characters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.characters.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &CharacterId> {
        self.characters.iter().map(|c| &c.name)
    }

    pub fn position(&self, name: &CharacterId) -> Option<usize> {
        self.characters.iter().position(|c| &c.name == name)
    }

    pub fn contains(&self, name: &CharacterId) -> bool {
        self.position(name).is_some()
    }

    pub fn is_main(&self, name: &CharacterId) -> bool {
        self.position(name)
            .map(|i| self.characters[i].is_main)
            .unwrap_or(false)
    }

    /// Maps a canonical name or alias to the canonical name.
    pub fn resolve(&self, name: &str) -> Option<&CharacterId> {
        self.lookup.get(name).map(|&i| &self.characters[i].name)
    }
}

impl<'de> Deserialize<'de> for CastList {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            characters: Vec<CastMember>,
        }
        let raw = Raw::deserialize(deserializer)?;
        CastList::new(raw.characters).map_err(serde::de::Error::custom)
    }
}

/// One lip-sync peak with visual distances to every cast member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualPeak {
    pub peak_index: u32,
    pub distances: BTreeMap<CharacterId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualSpeakerObservation {
    pub segment_id: SegmentId,
    #[serde(default)]
    pub peaks: Vec<VisualPeak>,
}

/// Sorts intervals and merges any that overlap or touch.
pub fn normalize_intervals(mut intervals: Vec<TimeInterval>) -> Vec<TimeInterval> {
    intervals.sort_by(|a, b| a.start().total_cmp(&b.start()).then(a.end().total_cmp(&b.end())));
    let mut merged: Vec<TimeInterval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.start() <= last.end() => {
                if iv.end() > last.end {
                    last.end = iv.end();
                }
            }
            _ => merged.push(iv),
        }
    }
    merged
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Exemplar,
    LongSegment,
    HighConfidence,
    LocalContext,
    Llm,
    OverlapNeighbor,
    Unresolved,
}

impl Provenance {
    pub const ALL: [Provenance; 7] = [
        Provenance::Exemplar,
        Provenance::LongSegment,
        Provenance::HighConfidence,
        Provenance::LocalContext,
        Provenance::Llm,
        Provenance::OverlapNeighbor,
        Provenance::Unresolved,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Exemplar => "EXEMPLAR",
            Provenance::LongSegment => "LONG_SEGMENT",
            Provenance::HighConfidence => "HIGH_CONFIDENCE",
            Provenance::LocalContext => "LOCAL_CONTEXT",
            Provenance::Llm => "LLM",
            Provenance::OverlapNeighbor => "OVERLAP_NEIGHBOR",
            Provenance::Unresolved => "UNRESOLVED",
        }
    }
}

/// Final labeling of one segment. `label == None` means UNKNOWN.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub segment_id: SegmentId,
    pub label: Option<CharacterId>,
    /// Only set for overlapped segments.
    pub secondary_label: Option<CharacterId>,
    pub provenance: Provenance,
    /// Distance (embedding rungs), probability (LLM) or 0 when nothing was measured.
    pub score: f64,
}

impl Assignment {
    pub fn named(
        segment_id: SegmentId,
        label: CharacterId,
        provenance: Provenance,
        score: f64,
    ) -> Self {
        Self {
            segment_id,
            label: Some(label),
            secondary_label: None,
            provenance,
            score,
        }
    }

    pub fn unresolved(segment_id: SegmentId, score: f64) -> Self {
        Self {
            segment_id,
            label: None,
            secondary_label: None,
            provenance: Provenance::Unresolved,
            score,
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.label.is_none()
    }

    /// Checks the label/provenance consistency rules.
    pub fn check_invariants(&self) -> Result<()> {
        if let Some(secondary) = &self.secondary_label {
            if self.provenance != Provenance::OverlapNeighbor {
                return Err(Error::Contract(format!(
                    "{} has a secondary label but provenance {}",
                    self.segment_id,
                    self.provenance.as_str()
                )));
            }
            if self.label.as_ref() == Some(secondary) {
                return Err(Error::Contract(format!(
                    "{} has identical primary and secondary labels",
                    self.segment_id
                )));
            }
        }
        if (self.provenance == Provenance::Unresolved) != self.label.is_none() {
            return Err(Error::Contract(format!(
                "{}: UNRESOLVED provenance must coincide with an UNKNOWN label",
                self.segment_id
            )));
        }
        Ok(())
    }
}
