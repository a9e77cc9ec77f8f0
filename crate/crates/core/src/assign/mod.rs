//! Stage 2: labeling every segment of an episode.
//!
//! The cascade runs exemplar self-labels, then long/high-confidence matches
//! against exemplars, then local-context 1-NN in a single forward sweep, then
//! the language model over what is still unknown. Overlap dual labels and
//! silence splitting are post-processing steps.

mod classify;
mod llm;
mod oracle;
mod overlap;
mod split;

use std::collections::{BTreeMap, HashSet};

pub use classify::{classify_against_exemplars, local_context_classify, nearest_exemplar, ExemplarThresholds};
pub use llm::{
    build_llm_prompt, parse_answer, resolve_unknown_with_llm, verdict_to_assignment, ChatTurn, DialogueLine,
    LlmPrompt, LlmQuery, LlmVerdict, Role, ANSWER_INSTRUCTION, ANSWER_PREFIX, IDENTIFICATION_REQUEST,
    SUMMARY_REQUEST, SYSTEM_PROMPT, UNKNOWN_TOKEN,
};
pub use oracle::{parse_chat_response, HttpOracle, HttpOracleConfig, Oracle, OracleError, ScriptedOracle};
pub use overlap::{assign_overlap, covered_seconds};
pub use split::split_on_silence;

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::exemplar::{visible_candidates, Exemplar};
use crate::io::EpisodeBundle;
use crate::model::{assign_ordinals, Assignment, CharacterId, Provenance, SegmentRecord};
use crate::par::*;

/// Rungs 1 to 3. Returns one assignment per segment in ordinal order;
/// segments no embedding rung could label are UNRESOLVED.
pub fn run_embedding_rungs(
    bundle: &EpisodeBundle,
    exemplars: &[Exemplar],
    config: &PipelineConfig,
) -> Result<Vec<Assignment>> {
    let segments = &bundle.segments;
    let visible = visible_candidates(bundle, config)?;
    let thresholds = ExemplarThresholds {
        assign: config.assign_threshold,
        high_confidence: config.high_confidence_threshold,
        long_segment_seconds: config.long_segment_seconds,
    };
    let exemplar_of: BTreeMap<_, _> = exemplars.iter().map(|e| (&e.segment_id, e)).collect();

    let mut state: Vec<Option<Assignment>> = Vec::with_capacity(segments.len());
    for seg in segments {
        let a = match exemplar_of.get(&seg.id) {
            Some(e) => Some(Assignment::named(seg.id.clone(), e.character.clone(), Provenance::Exemplar, 0.0)),
            None => classify_against_exemplars(seg, &bundle.embeddings, exemplars, visible.get(&seg.id), thresholds)?,
        };
        state.push(a);
    }

    let mut labels: Vec<Option<CharacterId>> =
        state.iter().map(|a| a.as_ref().and_then(|a| a.label.clone())).collect();
    let mut out = Vec::with_capacity(segments.len());
    for (i, slot) in state.into_iter().enumerate() {
        let a = match slot {
            Some(a) => a,
            None => {
                let a = local_context_classify(
                    i,
                    segments,
                    &labels,
                    &bundle.embeddings,
                    config.n_local,
                    config.assign_threshold,
                )?;
                labels[i] = a.label.clone();
                a
            }
        };
        out.push(a);
    }
    Ok(out)
}

/// Rung 4 over every UNRESOLVED entry of `assignments`, in ordinal order.
///
/// Unknowns with no other unknown inside their window are independent of the
/// rest of the pass and are resolved concurrently; the others run one at a
/// time so earlier answers appear in later dialogues.
pub fn run_llm_pass(
    segments: &[SegmentRecord],
    assignments: &mut [Assignment],
    n_llm: usize,
    oracle: &dyn Oracle,
) {
    let pending: Vec<usize> = (0..assignments.len()).filter(|&i| assignments[i].is_unknown()).collect();
    if pending.is_empty() {
        return;
    }
    let isolated: HashSet<usize> = pending
        .iter()
        .enumerate()
        .filter(|&(k, &i)| {
            let prev_far = k == 0 || i - pending[k - 1] > n_llm;
            let next_far = pending.get(k + 1).is_none_or(|&j| j - i > n_llm);
            prev_far && next_far
        })
        .map(|(_, &i)| i)
        .collect();

    let labels: Vec<Option<CharacterId>> = assignments.iter().map(|a| a.label.clone()).collect();
    let mut isolated_sorted: Vec<usize> = isolated.iter().copied().collect();
    isolated_sorted.sort_unstable();
    let resolved: Vec<(usize, Assignment)> = isolated_sorted
        .par_iter()
        .map(|&i| {
            let q = LlmQuery::build(i, segments, &labels, n_llm);
            (i, resolve_unknown_with_llm(&q, oracle))
        })
        .collect();
    for (i, a) in resolved {
        assignments[i] = a;
    }

    let mut labels = labels;
    for &i in pending.iter().filter(|i| !isolated.contains(i)) {
        let q = LlmQuery::build(i, segments, &labels, n_llm);
        let a = resolve_unknown_with_llm(&q, oracle);
        labels[i] = a.label.clone();
        assignments[i] = a;
    }
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    /// Segments after silence splitting, in ordinal order.
    pub segments: Vec<SegmentRecord>,
    /// One per entry of `segments`, same order.
    pub assignments: Vec<Assignment>,
}

impl Stage2Output {
    pub fn provenance_counts(&self) -> BTreeMap<Provenance, usize> {
        let mut counts = BTreeMap::new();
        for a in &self.assignments {
            *counts.entry(a.provenance).or_insert(0) += 1;
        }
        counts
    }

    pub fn unknown_count(&self) -> usize {
        self.assignments.iter().filter(|a| a.is_unknown()).count()
    }
}

/// Full Stage 2 for one episode. With `oracle == None` the language-model
/// rung is skipped and its segments stay UNRESOLVED.
pub fn run_stage2(
    bundle: &EpisodeBundle,
    exemplars: &[Exemplar],
    config: &PipelineConfig,
    oracle: Option<&dyn Oracle>,
) -> Result<Stage2Output> {
    let mut assignments = run_embedding_rungs(bundle, exemplars, config)?;
    if let Some(oracle) = oracle {
        run_llm_pass(&bundle.segments, &mut assignments, config.n_llm, oracle);
    }
    let assignments = assign_overlap(&assignments, &bundle.segments, &bundle.overlap, config.overlap_min_fraction);

    let mut segments = Vec::with_capacity(bundle.segments.len());
    let mut split_assignments = Vec::with_capacity(assignments.len());
    for (seg, a) in bundle.segments.iter().zip(&assignments) {
        for (s, a) in split_on_silence(seg, a, config.silence_split_seconds) {
            segments.push(s);
            split_assignments.push(a);
        }
    }
    assign_ordinals(&mut segments);
    let mut paired: Vec<(SegmentRecord, Assignment)> = segments.into_iter().zip(split_assignments).collect();
    paired.sort_by_key(|(s, _)| s.ordinal);
    let (segments, assignments): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
    for a in &assignments {
        a.check_invariants()?;
    }
    Ok(Stage2Output { segments, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exemplar::ExemplarSource;
    use crate::model::{CastList, CastMember, SpeakerEmbedding, TimeInterval};

    fn bundle(durations: &[f64], vectors: &[Vec<f64>]) -> EpisodeBundle {
        let mut t = 0.0;
        let segments: Vec<SegmentRecord> = durations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let s = SegmentRecord {
                    id: format!("s{i:02}").into(),
                    episode: "e".into(),
                    interval: TimeInterval::new(t, t + d).unwrap(),
                    text: format!("line {i}"),
                    words: vec![],
                    ordinal: i,
                };
                t += d + 0.5;
                s
            })
            .collect();
        let embeddings = segments
            .iter()
            .zip(vectors)
            .map(|(s, v)| SpeakerEmbedding::new(s.id.clone(), v.clone()).unwrap())
            .collect();
        let cast = CastList::new(vec![
            CastMember { name: "A".into(), is_main: true, aliases: vec![] },
            CastMember { name: "B".into(), is_main: true, aliases: vec![] },
        ])
        .unwrap();
        EpisodeBundle::new("e", segments, embeddings, vec![], vec![], cast, None).unwrap()
    }

    fn exemplar(b: &EpisodeBundle, i: usize, who: &str) -> Exemplar {
        let id = b.segments[i].id.clone();
        Exemplar { embedding: b.embeddings[&id].clone(), segment_id: id, character: who.into(), source: ExemplarSource::Stage1 }
    }

    #[test]
    fn long_segments_never_reach_the_oracle() {
        let b = bundle(&[3.0, 3.0, 3.0, 3.0], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.1], vec![0.1, 1.0]]);
        let ex = [exemplar(&b, 0, "A"), exemplar(&b, 1, "B")];
        let oracle = ScriptedOracle::default();
        let out = run_stage2(&b, &ex, &PipelineConfig::default(), Some(&oracle)).unwrap();
        assert_eq!(oracle.calls(), 0);
        let labels: Vec<_> = out.assignments.iter().map(|a| a.label.clone().unwrap().0).collect();
        assert_eq!(labels, ["A", "B", "A", "B"]);
    }

    #[test]
    fn empty_exemplar_set_fabricates_nothing() {
        let b = bundle(&[3.0, 1.0, 1.0], &[vec![1.0, 0.0], vec![1.0, 0.01], vec![0.0, 1.0]]);
        let out = run_stage2(&b, &[], &PipelineConfig::default(), None).unwrap();
        assert!(out.assignments.iter().all(|a| a.provenance == Provenance::Unresolved));
    }

    #[test]
    fn local_sweep_labels_are_visible_downstream() {
        // s01 is close to s00 (an exemplar) and s02 is close to s01 but not to s00.
        let v = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
        let b = bundle(&[1.0, 1.0, 1.0], &[v(0.0), v(50.0), v(100.0)]);
        let ex = [exemplar(&b, 0, "A")];
        // 1 - cos 50deg = 0.357, 1 - cos 100deg = 1.17
        let cfg = PipelineConfig { assign_threshold: 0.4, ..Default::default() };
        let a = run_embedding_rungs(&b, &ex, &cfg).unwrap();
        assert_eq!(a[1].provenance, Provenance::LocalContext);
        assert_eq!(a[2].provenance, Provenance::LocalContext);
        assert_eq!(a[2].label.as_ref().unwrap().as_str(), "A");
    }

    #[test]
    fn llm_answers_feed_later_queries() {
        let b = bundle(&[1.0; 4], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![-1.0, 0.2]]);
        let ex = [exemplar(&b, 0, "A")];
        let cfg = PipelineConfig { n_llm: 2, ..Default::default() };
        // s01: list [A, UNK] -> pick index 1 = A. s02 then sees A twice: still [A, UNK].
        let oracle = ScriptedOracle::from_distributions([
            ("s01".into(), [(1, 0.9), (2, 0.1)].into()),
            ("s02".into(), [(1, 0.2), (2, 0.8)].into()),
            ("s03".into(), [(1, 1.0)].into()),
        ]);
        let out = run_stage2(&b, &ex, &cfg, Some(&oracle)).unwrap();
        assert_eq!(oracle.calls(), 3);
        assert_eq!(out.assignments[1].provenance, Provenance::Llm);
        assert!(out.assignments[2].is_unknown());
        assert_eq!(out.assignments[3].label.as_ref().unwrap().as_str(), "A");
    }

    #[test]
    fn llm_disabled_changes_only_llm_rows() {
        let b = bundle(&[3.0, 1.0, 1.0, 3.0], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.05], vec![1.0, 0.1]]);
        let ex = [exemplar(&b, 0, "A")];
        let cfg = PipelineConfig::default();
        let oracle = ScriptedOracle::from_distributions([("s01".into(), [(1, 1.0)].into())]);
        let with = run_stage2(&b, &ex, &cfg, Some(&oracle)).unwrap();
        let without = run_stage2(&b, &ex, &cfg, None).unwrap();
        for (x, y) in with.assignments.iter().zip(&without.assignments) {
            if x != y {
                assert_eq!(x.provenance, Provenance::Llm);
                assert_eq!(y.provenance, Provenance::Unresolved);
            }
        }
        assert_ne!(with.assignments, without.assignments);
    }
}
