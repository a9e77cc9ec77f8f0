//! Seeded generators for synthetic corpora: clustered speaker embeddings,
//! whole episodes with visual observations and reference turns, and random
//! diarisation timelines.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assign::{LlmPrompt, LlmQuery, LlmVerdict, Oracle, OracleError};
use crate::error::Result;
use crate::io::{
    write_cast, write_embeddings, write_overlap, write_reference_jsonl, write_segments, write_visual, EpisodeBundle,
    OverlapDetections, ReferenceAnnotation, ReferenceSegment,
};
use crate::metrics::SpeakerTurn;
use crate::model::{
    cosine_distance, CastList, CastMember, CharacterId, SegmentId, SegmentRecord, SpeakerEmbedding, TimeInterval,
    VisualPeak, VisualSpeakerObservation, WordToken,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalise(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Per-character centroids with every pairwise cosine distance at least
/// `min_distance`, and samples whose pairwise distance stays within
/// `max_spread`.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// Largest angle between a sample and its centroid.
    max_angle: f64,
}

impl ClusterModel {
    pub fn new(rng: &mut impl Rng, n: usize, dim: usize, min_distance: f64, max_spread: f64) -> Self {
        let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(n);
        while centroids.len() < n {
            let c = normalise(gaussian(rng, dim));
            if centroids.iter().all(|o| cosine_distance(o, &c).unwrap() >= min_distance) {
                centroids.push(c);
            }
        }
        // Two samples within angle a of one centroid are within 2a of each other.
        let max_angle = 0.5 * (1.0 - max_spread).clamp(-1.0, 1.0).acos();
        Self { centroids, max_angle }
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    /// A sample of cluster `k` with angle to the centroid around `scale` times
    /// the maximum, never beyond it.
    pub fn sample(&self, rng: &mut impl Rng, k: usize, scale: f64) -> Vec<f64> {
        let c = &self.centroids[k];
        loop {
            let g = gaussian(rng, c.len());
            let dot: f64 = g.iter().zip(c).map(|(a, b)| a * b).sum();
            let perp = normalise(g.iter().zip(c).map(|(a, b)| a - dot * b).collect());
            let angle = (self.max_angle * scale * rng.gen_range(0.0..1.0f64).sqrt()).abs();
            if angle <= self.max_angle {
                return c.iter().zip(&perp).map(|(a, b)| a * angle.cos() + b * angle.sin()).collect();
            }
        }
    }

    /// A copy whose centroids are nudged by up to `drift` of the sample angle,
    /// keeping the same spread bound.
    pub fn drifted(&self, rng: &mut impl Rng, drift: f64) -> Self {
        let centroids = (0..self.centroids.len())
            .map(|k| {
                let mut probe = self.clone();
                probe.max_angle = self.max_angle * drift;
                probe.sample(rng, k, 1.0)
            })
            .collect();
        Self { centroids, max_angle: self.max_angle * (1.0 - drift) }
    }
}

/// A purity-filter test set: candidates labeled with a character, some of
/// them planted inside a foreign cluster.
#[derive(Debug, Clone)]
pub struct PurityScenario {
    pub candidates: Vec<(SegmentId, CharacterId)>,
    pub embeddings: BTreeMap<SegmentId, SpeakerEmbedding>,
    pub planted: Vec<SegmentId>,
}

pub fn purity_scenario(
    seed: u64,
    characters: usize,
    per_character: usize,
    planted_fraction: f64,
    dim: usize,
) -> PurityScenario {
    let mut rng = rng(seed);
    let model = ClusterModel::new(&mut rng, characters, dim, 0.6, 0.2);
    let total = characters * per_character;
    let n_planted = (planted_fraction * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let planted_idx: Vec<usize> = order[..n_planted].to_vec();

    let mut s = PurityScenario { candidates: Vec::new(), embeddings: BTreeMap::new(), planted: Vec::new() };
    for i in 0..total {
        let label = i / per_character;
        let id = SegmentId(format!("c{i:05}"));
        let source = if planted_idx.contains(&i) {
            s.planted.push(id.clone());
            (label + rng.gen_range(1..characters)) % characters
        } else {
            label
        };
        let v = model.sample(&mut rng, source, 1.0);
        s.embeddings.insert(id.clone(), SpeakerEmbedding::new(id.clone(), v).expect("unit vector"));
        s.candidates.push((id, CharacterId(format!("char{label}"))));
    }
    s
}

/// Knobs for [`synth_episode`].
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub episode: String,
    pub characters: usize,
    pub segments: usize,
    pub dim: usize,
    pub long_fraction: f64,
    pub visible_fraction: f64,
    pub multi_peak_fraction: f64,
    /// Probability that the confident visual identity is the wrong character.
    pub visual_error: f64,
    pub overlap_fraction: f64,
    pub silence_fraction: f64,
    /// Sample spread of short segments relative to long ones.
    pub short_noise: f64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            episode: "synth01".into(),
            characters: 4,
            segments: 120,
            dim: 16,
            long_fraction: 0.4,
            visible_fraction: 0.6,
            multi_peak_fraction: 0.15,
            visual_error: 0.03,
            overlap_fraction: 0.05,
            silence_fraction: 0.05,
            short_noise: 1.6,
        }
    }
}

const NAMES: [&str; 8] = ["Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace", "Heidi"];

fn character_name(k: usize) -> CharacterId {
    match NAMES.get(k) {
        Some(n) => CharacterId::from(*n),
        None => CharacterId(format!("Char{k}")),
    }
}

/// A generated episode and its ground truth.
#[derive(Debug, Clone)]
pub struct SynthEpisode {
    pub segments: Vec<SegmentRecord>,
    pub embeddings: Vec<SpeakerEmbedding>,
    pub visual: Vec<VisualSpeakerObservation>,
    pub overlap: Vec<TimeInterval>,
    pub cast: CastList,
    pub reference: Vec<ReferenceSegment>,
    pub truth: BTreeMap<SegmentId, CharacterId>,
}

impl SynthEpisode {
    pub fn bundle(&self) -> Result<EpisodeBundle> {
        EpisodeBundle::new(
            self.segments[0].episode.clone(),
            self.segments.clone(),
            self.embeddings.clone(),
            self.visual.clone(),
            self.overlap.clone(),
            self.cast.clone(),
            Some(self.reference.clone()),
        )
    }
}

/// Writes episodes as one corpus in the standard file layout of `dir`.
/// The cast of the first episode is used.
pub fn write_corpus(dir: &Path, episodes: &[SynthEpisode]) -> Result<()> {
    let segments: Vec<SegmentRecord> = episodes.iter().flat_map(|e| e.segments.clone()).collect();
    let embeddings: Vec<SpeakerEmbedding> = episodes.iter().flat_map(|e| e.embeddings.clone()).collect();
    let visual: Vec<VisualSpeakerObservation> = episodes.iter().flat_map(|e| e.visual.clone()).collect();
    let overlap: OverlapDetections = episodes
        .iter()
        .filter(|e| !e.overlap.is_empty())
        .map(|e| (e.segments[0].episode.clone(), e.overlap.clone()))
        .collect();
    let reference = ReferenceAnnotation { segments: episodes.iter().flat_map(|e| e.reference.clone()).collect() };
    write_segments(&dir.join("segments.jsonl"), &segments)?;
    write_embeddings(&dir.join("embeddings.jsonl"), &embeddings)?;
    write_visual(&dir.join("visual.jsonl"), &visual)?;
    write_overlap(&dir.join("overlap.jsonl"), &overlap)?;
    if let Some(e) = episodes.first() {
        write_cast(&dir.join("cast.json"), &e.cast)?;
    }
    write_reference_jsonl(&dir.join("reference.jsonl"), &reference)
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub fn synth_episode(spec: &EpisodeSpec, seed: u64) -> SynthEpisode {
    let mut rng = rng(seed);
    let n = spec.characters.max(1);
    let model = ClusterModel::new(&mut rng, n, spec.dim, 0.6, 0.2);
    let cast = CastList::new(
        (0..n)
            .map(|k| CastMember { name: character_name(k), is_main: k < 2, aliases: vec![] })
            .collect(),
    )
    .expect("generated names are unique");

    let mut ep = SynthEpisode {
        segments: Vec::new(),
        embeddings: Vec::new(),
        visual: Vec::new(),
        overlap: Vec::new(),
        cast,
        reference: Vec::new(),
        truth: BTreeMap::new(),
    };
    let mut t = 0.0;
    let mut speaker = 0;
    for i in 0..spec.segments {
        if rng.gen_bool(0.6) || n == 1 {
            speaker = (speaker + rng.gen_range(1..n.max(2))) % n;
        }
        let long = rng.gen_bool(spec.long_fraction);
        let split = long && rng.gen_bool(spec.silence_fraction);
        let id = SegmentId(format!("{}_{i:04}", spec.episode));
        let start = round_ms(t + rng.gen_range(0.1..0.6));

        // Words of 0.3 s separated by 0.1 s, plus one long pause when splitting.
        let n_words = if long { rng.gen_range(6..12) } else { rng.gen_range(1..5) };
        let pause_after = split.then(|| rng.gen_range(1..n_words));
        let mut words = Vec::with_capacity(n_words);
        let mut w = start;
        for k in 0..n_words {
            let iv = TimeInterval::new(round_ms(w), round_ms(w + 0.3)).expect("positive word");
            words.push(WordToken { text: format!("w{k}"), interval: iv });
            w += 0.4;
            if pause_after == Some(k + 1) {
                w += 1.5;
            }
        }
        let end = words.last().map(|x| x.interval.end()).unwrap_or(start + 0.3);
        let interval = TimeInterval::new(start, end).expect("words span forward");
        let text = words.iter().map(|x| x.text.as_str()).collect::<Vec<_>>().join(" ");
        let who = character_name(speaker);

        let scale = if long { 1.0 } else { spec.short_noise };
        let v = model.sample(&mut rng, speaker, scale);
        ep.embeddings.push(SpeakerEmbedding::new(id.clone(), v).expect("unit vector"));

        if rng.gen_bool(spec.visible_fraction) {
            let multi = n > 1 && rng.gen_bool(spec.multi_peak_fraction);
            let mut identities = vec![if n > 1 && rng.gen_bool(spec.visual_error) {
                (speaker + rng.gen_range(1..n)) % n
            } else {
                speaker
            }];
            if multi {
                identities.push((speaker + rng.gen_range(1..n)) % n);
            }
            let peaks = identities
                .iter()
                .enumerate()
                .map(|(p, &k)| VisualPeak {
                    peak_index: p as u32,
                    distances: (0..n)
                        .map(|c| {
                            let d = if c == k { rng.gen_range(0.1..0.4) } else { rng.gen_range(0.6..1.0) };
                            (character_name(c), round_ms(d))
                        })
                        .collect(),
                })
                .collect();
            ep.visual.push(VisualSpeakerObservation { segment_id: id.clone(), peaks });
        }
        if !long && rng.gen_bool(spec.overlap_fraction) {
            ep.overlap.push(interval);
        }
        ep.reference.push(ReferenceSegment { episode: Some(spec.episode.clone()), interval, speaker: who.clone(), text: None });
        ep.truth.insert(id.clone(), who);
        ep.segments.push(SegmentRecord { id, episode: spec.episode.clone(), interval, text, words, ordinal: i });
        t = end;
    }
    ep
}

/// Answers with the true speaker's index when it is in the list, else the
/// `[UNKNOWN]` index. Every verdict is kept so it can be replayed as a stub.
#[derive(Debug, Default)]
pub struct TruthOracle {
    truth: BTreeMap<SegmentId, CharacterId>,
    confidence: f64,
    log: Mutex<BTreeMap<SegmentId, BTreeMap<usize, f64>>>,
}

impl TruthOracle {
    pub fn new(truth: BTreeMap<SegmentId, CharacterId>, confidence: f64) -> Self {
        Self { truth, confidence, log: Mutex::new(BTreeMap::new()) }
    }

    pub fn recorded(&self) -> BTreeMap<SegmentId, BTreeMap<usize, f64>> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl Oracle for TruthOracle {
    fn complete(&self, query: &LlmQuery, _prompt: &LlmPrompt) -> Result<LlmVerdict, OracleError> {
        let k = query.index_count();
        let winner = self
            .truth
            .get(&query.target_segment_id)
            .and_then(|t| query.speakers.iter().position(|s| s == t))
            .map_or(k, |p| p + 1);
        let rest = if k > 1 { (1.0 - self.confidence) / (k - 1) as f64 } else { 0.0 };
        let dist: BTreeMap<usize, f64> =
            (1..=k).map(|i| (i, if i == winner { if k > 1 { self.confidence } else { 1.0 } } else { rest })).collect();
        self.log
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(query.target_segment_id.clone(), dist.clone());
        Ok(LlmVerdict::from_distribution(dist, ""))
    }

    fn calls(&self) -> usize {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).len()
    }
}

/// Random reference and hypothesis timelines on a `grid`-second lattice.
pub fn random_timelines(
    rng: &mut impl Rng,
    speakers: usize,
    turns: usize,
    grid: f64,
) -> (Vec<SpeakerTurn>, Vec<SpeakerTurn>) {
    let name = |k: usize| CharacterId(format!("S{k}"));
    let make = |rng: &mut dyn rand::RngCore, perturb: bool, base: &[SpeakerTurn]| -> Vec<SpeakerTurn> {
        let mut out = Vec::new();
        if perturb {
            for t in base {
                if rng.gen_bool(0.1) {
                    continue;
                }
                let jitter = |x: f64, rng: &mut dyn rand::RngCore| {
                    (((x / grid).round() as i64 + rng.gen_range(-30..=30)).max(0)) as f64 * grid
                };
                let a = jitter(t.interval.start(), rng);
                let b = jitter(t.interval.end(), rng).max(a + grid);
                let who = if rng.gen_bool(0.2) { name(rng.gen_range(0..speakers)) } else { t.speaker.clone() };
                out.push(SpeakerTurn::new(TimeInterval::new(a, b).unwrap(), who));
            }
            for _ in 0..rng.gen_range(0..3) {
                let a = rng.gen_range(0..6000) as f64 * grid;
                let b = a + rng.gen_range(10..300) as f64 * grid;
                out.push(SpeakerTurn::new(TimeInterval::new(a, b).unwrap(), name(rng.gen_range(0..speakers))));
            }
        } else {
            let mut t = 0i64;
            for _ in 0..turns {
                t += rng.gen_range(-80..60);
                t = t.max(0);
                let len = rng.gen_range(20..400);
                let a = t as f64 * grid;
                let b = (t + len) as f64 * grid;
                out.push(SpeakerTurn::new(TimeInterval::new(a, b).unwrap(), name(rng.gen_range(0..speakers))));
                t += len;
            }
        }
        out
    };
    let reference = make(rng, false, &[]);
    let hypothesis = make(rng, true, &reference);
    (reference, hypothesis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_model_bounds() {
        let mut r = rng(7);
        let m = ClusterModel::new(&mut r, 4, 16, 0.6, 0.2);
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(cosine_distance(&m.centroids[i], &m.centroids[j]).unwrap() >= 0.6);
            }
            let pts: Vec<_> = (0..30).map(|_| m.sample(&mut r, i, 1.0)).collect();
            for a in &pts {
                for b in &pts {
                    assert!(cosine_distance(a, b).unwrap() <= 0.2 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn episodes_are_seed_deterministic_and_valid() {
        let spec = EpisodeSpec { segments: 40, ..Default::default() };
        let a = synth_episode(&spec, 3);
        let b = synth_episode(&spec, 3);
        assert_eq!(a.segments, b.segments);
        assert_eq!(a.visual, b.visual);
        for s in &a.segments {
            s.validate_words().unwrap();
        }
        a.bundle().unwrap();
    }

    #[test]
    fn purity_scenario_counts() {
        let s = purity_scenario(1, 3, 50, 0.05, 16);
        assert_eq!(s.candidates.len(), 150);
        assert_eq!(s.planted.len(), 8);
    }
}
