use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exemplar::{Exemplar, VisibleCandidates};
use crate::model::{Assignment, CharacterId, Provenance, SegmentId, SegmentRecord, SpeakerEmbedding};

/// Thresholds for [`classify_against_exemplars`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExemplarThresholds {
    pub assign: f64,
    pub high_confidence: f64,
    pub long_segment_seconds: f64,
}

fn embedding_of<'a>(
    embeddings: &'a BTreeMap<SegmentId, SpeakerEmbedding>,
    id: &SegmentId,
) -> Result<&'a SpeakerEmbedding> {
    embeddings
        .get(id)
        .ok_or_else(|| Error::validation(format!("segment {id}"), "segment has no embedding"))
}

/// Nearest exemplar among those of the visible characters (or all exemplars
/// when none of the visible characters has one). Ties go to the smaller id.
pub fn nearest_exemplar<'a>(
    embedding: &SpeakerEmbedding,
    exemplars: &'a [Exemplar],
    visible: Option<&VisibleCandidates>,
) -> Option<(&'a Exemplar, f64)> {
    let restricted: Vec<&Exemplar> = match visible {
        Some(v) if !v.candidates.is_empty() => exemplars
            .iter()
            .filter(|e| v.candidates.contains(&e.character))
            .collect(),
        _ => Vec::new(),
    };
    let pool: Vec<&Exemplar> = if restricted.is_empty() {
        exemplars.iter().collect()
    } else {
        restricted
    };
    pool.into_iter()
        .map(|e| (e, embedding.distance(&e.embedding)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.segment_id.cmp(&b.0.segment_id)))
}

/// First cascade rung: accepts long segments within `D` of an exemplar and any
/// segment within `D_high`. Returns `None` to defer to later rungs.
pub fn classify_against_exemplars(
    segment: &SegmentRecord,
    embeddings: &BTreeMap<SegmentId, SpeakerEmbedding>,
    exemplars: &[Exemplar],
    visible: Option<&VisibleCandidates>,
    thresholds: ExemplarThresholds,
) -> Result<Option<Assignment>> {
    let embedding = embedding_of(embeddings, &segment.id)?;
    let Some((nearest, distance)) = nearest_exemplar(embedding, exemplars, visible) else {
        return Ok(None);
    };
    let provenance = if segment.duration() > thresholds.long_segment_seconds && distance < thresholds.assign {
        Provenance::LongSegment
    } else if distance < thresholds.high_confidence {
        Provenance::HighConfidence
    } else {
        return Ok(None);
    };
    Ok(Some(Assignment::named(
        segment.id.clone(),
        nearest.character.clone(),
        provenance,
        distance,
    )))
}

/// 1-NN over the labeled segments among the `n_local` sentences on either
/// side of `target`. `labels` is indexed by ordinal.
pub fn local_context_classify(
    target: usize,
    segments: &[SegmentRecord],
    labels: &[Option<CharacterId>],
    embeddings: &BTreeMap<SegmentId, SpeakerEmbedding>,
    n_local: usize,
    threshold: f64,
) -> Result<Assignment> {
    let seg = &segments[target];
    let embedding = embedding_of(embeddings, &seg.id)?;
    let lo = target.saturating_sub(n_local);
    let hi = (target + n_local).min(segments.len() - 1);
    let mut best: Option<(f64, &SegmentId, &CharacterId)> = None;
    for j in lo..=hi {
        if j == target {
            continue;
        }
        let Some(label) = &labels[j] else { continue };
        let other = &segments[j];
        let d = embedding.distance(embedding_of(embeddings, &other.id)?);
        let better = match best {
            None => true,
            Some((bd, bid, _)) => d < bd || (d == bd && &other.id < bid),
        };
        if better {
            best = Some((d, &other.id, label));
        }
    }
    Ok(match best {
        Some((d, _, label)) if d < threshold => {
            Assignment::named(seg.id.clone(), label.clone(), Provenance::LocalContext, d)
        }
        Some((d, _, _)) => Assignment::unresolved(seg.id.clone(), d),
        None => Assignment::unresolved(seg.id.clone(), 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exemplar::ExemplarSource;
    use crate::model::TimeInterval;

    fn seg(id: &str, ordinal: usize, dur: f64) -> SegmentRecord {
        let start = ordinal as f64 * 5.0;
        SegmentRecord {
            id: id.into(),
            episode: "e".into(),
            interval: TimeInterval::new(start, start + dur).unwrap(),
            text: String::new(),
            words: vec![],
            ordinal,
        }
    }

    /// Unit vector at angle `theta` so cosine distance to (1, 0) is `1 - cos(theta)`.
    fn at_distance(d: f64) -> Vec<f64> {
        let c = 1.0 - d;
        vec![c, (1.0 - c * c).max(0.0).sqrt()]
    }

    fn exemplar(id: &str, who: &str, v: Vec<f64>) -> Exemplar {
        Exemplar {
            segment_id: id.into(),
            character: who.into(),
            embedding: SpeakerEmbedding::new(id.into(), v).unwrap(),
            source: ExemplarSource::Stage1,
        }
    }

    fn thresholds() -> ExemplarThresholds {
        ExemplarThresholds { assign: 0.5, high_confidence: 0.1, long_segment_seconds: 2.0 }
    }

    fn setup(target_vec: Vec<f64>) -> (BTreeMap<SegmentId, SpeakerEmbedding>, Vec<Exemplar>) {
        let embs = BTreeMap::from([("t".into(), SpeakerEmbedding::new("t".into(), target_vec).unwrap())]);
        // Frasier sits along (1, 0); Niles is antipodal.
        let ex = vec![exemplar("x1", "Frasier", vec![1.0, 0.0]), exemplar("x2", "Niles", vec![-1.0, 0.0])];
        (embs, ex)
    }

    #[test]
    fn long_segment_within_d() {
        let (embs, ex) = setup(at_distance(0.3));
        let a = classify_against_exemplars(&seg("t", 0, 3.0), &embs, &ex, None, thresholds()).unwrap().unwrap();
        assert_eq!(a.label.unwrap().as_str(), "Frasier");
        assert_eq!(a.provenance, Provenance::LongSegment);
        assert!((a.score - 0.3).abs() < 1e-12);
    }

    #[test]
    fn short_segment_high_confidence() {
        let (embs, ex) = setup(at_distance(0.05));
        let a = classify_against_exemplars(&seg("t", 0, 0.8), &embs, &ex, None, thresholds()).unwrap().unwrap();
        assert_eq!(a.provenance, Provenance::HighConfidence);
        assert_eq!(a.label.unwrap().as_str(), "Frasier");
    }

    #[test]
    fn long_segment_too_far_is_deferred() {
        let (embs, ex) = setup(at_distance(0.7));
        // Niles is at 1 + cos(theta), far above D.
        assert!(classify_against_exemplars(&seg("t", 0, 3.0), &embs, &ex, None, thresholds()).unwrap().is_none());
    }

    #[test]
    fn short_segment_within_d_but_not_high_is_deferred() {
        let (embs, ex) = setup(at_distance(0.3));
        assert!(classify_against_exemplars(&seg("t", 0, 1.0), &embs, &ex, None, thresholds()).unwrap().is_none());
    }

    #[test]
    fn visible_candidates_restrict_pool() {
        let (embs, ex) = setup(at_distance(0.3));
        let vis = VisibleCandidates { segment_id: "t".into(), candidates: [CharacterId::from("Niles")].into() };
        let a = classify_against_exemplars(&seg("t", 0, 3.0), &embs, &ex, Some(&vis), thresholds()).unwrap();
        // Niles is the only allowed class and is too far.
        assert!(a.is_none());
        let vis = VisibleCandidates { segment_id: "t".into(), candidates: [CharacterId::from("Nobody")].into() };
        let a = classify_against_exemplars(&seg("t", 0, 3.0), &embs, &ex, Some(&vis), thresholds()).unwrap();
        assert_eq!(a.unwrap().label.unwrap().as_str(), "Frasier");
    }

    #[test]
    fn missing_embedding_errors() {
        let (_, ex) = setup(at_distance(0.3));
        assert!(classify_against_exemplars(&seg("t", 0, 3.0), &BTreeMap::new(), &ex, None, thresholds()).is_err());
    }

    fn local_fixture(dist_a: f64, dist_b: f64) -> (Vec<SegmentRecord>, BTreeMap<SegmentId, SpeakerEmbedding>) {
        let segs = vec![seg("a", 0, 3.0), seg("t", 1, 0.5), seg("b", 2, 3.0)];
        let mut embs = BTreeMap::new();
        embs.insert("t".into(), SpeakerEmbedding::new("t".into(), vec![1.0, 0.0]).unwrap());
        embs.insert("a".into(), SpeakerEmbedding::new("a".into(), at_distance(dist_a)).unwrap());
        let mut vb = at_distance(dist_b);
        vb[1] = -vb[1];
        embs.insert("b".into(), SpeakerEmbedding::new("b".into(), vb).unwrap());
        (segs, embs)
    }

    #[test]
    fn local_context_picks_nearest_labeled() {
        let (segs, embs) = local_fixture(0.2, 0.6);
        let labels = vec![Some("A".into()), None, Some("B".into())];
        let a = local_context_classify(1, &segs, &labels, &embs, 15, 0.5).unwrap();
        assert_eq!(a.label.unwrap().as_str(), "A");
        assert_eq!(a.provenance, Provenance::LocalContext);
    }

    #[test]
    fn local_context_without_labels_is_unknown() {
        let (segs, embs) = local_fixture(0.2, 0.6);
        let a = local_context_classify(1, &segs, &[None, None, None], &embs, 15, 0.5).unwrap();
        assert!(a.is_unknown());
        assert_eq!(a.provenance, Provenance::Unresolved);
    }

    #[test]
    fn local_context_boundary_is_strict() {
        let (segs, embs) = local_fixture(0.25, 0.9);
        let labels = vec![Some("A".into()), None, Some("B".into())];
        let d = embs[&SegmentId::from("t")].distance(&embs[&SegmentId::from("a")]);
        let a = local_context_classify(1, &segs, &labels, &embs, 15, d).unwrap();
        assert!(a.is_unknown());
    }

    #[test]
    fn local_window_is_counted_in_sentences() {
        let (segs, embs) = local_fixture(0.2, 0.6);
        let labels = vec![Some("A".into()), None, Some("B".into())];
        // With a window of one sentence both neighbours are visible; this checks
        // that a zero-size window (not allowed by config) sees nothing.
        let a = local_context_classify(1, &segs, &labels, &embs, 0, 0.5).unwrap();
        assert!(a.is_unknown());
    }
}
