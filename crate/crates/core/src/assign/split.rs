use crate::model::{Assignment, SegmentId, SegmentRecord, TimeInterval};

/// Cuts a segment wherever consecutive words are separated by more than
/// `threshold` seconds. Children are `{id}#{k}` (k from 0), span their words
/// and inherit the assignment. A segment without words, or with no long gap,
/// comes back unchanged. Ordinals of children are left equal to the parent's
/// and must be renumbered by the caller.
pub fn split_on_silence(
    segment: &SegmentRecord,
    assignment: &Assignment,
    threshold: f64,
) -> Vec<(SegmentRecord, Assignment)> {
    let words = &segment.words;
    let mut groups: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0;
    for k in 1..words.len() {
        if words[k].interval.start() - words[k - 1].interval.end() > threshold {
            groups.push(start..k);
            start = k;
        }
    }
    if groups.is_empty() {
        return vec![(segment.clone(), assignment.clone())];
    }
    groups.push(start..words.len());
    groups
        .into_iter()
        .enumerate()
        .map(|(k, range)| {
            let ws = words[range].to_vec();
            let id = SegmentId(format!("{}#{k}", segment.id));
            let interval = TimeInterval::new(ws[0].interval.start(), ws[ws.len() - 1].interval.end())
                .expect("word intervals are valid and ordered");
            let text = ws.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
            let child = SegmentRecord {
                id: id.clone(),
                episode: segment.episode.clone(),
                interval,
                text,
                words: ws,
                ordinal: segment.ordinal,
            };
            let mut a = assignment.clone();
            a.segment_id = id;
            (child, a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Provenance, WordToken};

    fn segment(words: &[(f64, f64)]) -> SegmentRecord {
        let words: Vec<WordToken> = words
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| WordToken { text: format!("w{i}"), interval: TimeInterval::new(a, b).unwrap() })
            .collect();
        SegmentRecord {
            id: "s".into(),
            episode: "e".into(),
            interval: TimeInterval::new(words[0].interval.start(), words[words.len() - 1].interval.end()).unwrap(),
            text: "original".into(),
            words,
            ordinal: 3,
        }
    }

    fn asg() -> Assignment {
        let mut a = Assignment::named("s".into(), "Leonard".into(), Provenance::OverlapNeighbor, 0.2);
        a.secondary_label = Some("Penny".into());
        a
    }

    #[test]
    fn two_way_split() {
        let out = split_on_silence(&segment(&[(0.0, 0.5), (0.6, 1.0), (2.5, 3.0)]), &asg(), 1.0);
        assert_eq!(out.len(), 2);
        let spans: Vec<(f64, f64)> = out.iter().map(|(s, _)| (s.interval.start(), s.interval.end())).collect();
        assert_eq!(spans, vec![(0.0, 1.0), (2.5, 3.0)]);
        assert_eq!(out[0].0.id.as_str(), "s#0");
        assert_eq!(out[1].1.segment_id.as_str(), "s#1");
        assert_eq!(out[1].1.secondary_label.as_ref().unwrap().as_str(), "Penny");
        assert_eq!(out[0].0.text, "w0 w1");
        assert_eq!(out.iter().map(|(s, _)| s.words.len()).sum::<usize>(), 3);
    }

    #[test]
    fn short_gaps_unchanged() {
        let s = segment(&[(0.0, 0.5), (0.6, 1.0), (1.9, 3.0)]);
        let out = split_on_silence(&s, &asg(), 1.0);
        assert_eq!(out, vec![(s, asg())]);
    }

    #[test]
    fn gap_equal_to_threshold_does_not_split() {
        let s = segment(&[(0.0, 0.5), (1.5, 2.0)]);
        assert_eq!(split_on_silence(&s, &asg(), 1.0).len(), 1);
    }

    #[test]
    fn no_words_unchanged() {
        let mut s = segment(&[(0.0, 0.5)]);
        s.words.clear();
        assert_eq!(split_on_silence(&s, &asg(), 1.0), vec![(s, asg())]);
    }
}
