use crate::model::{Assignment, CharacterId, Provenance, SegmentRecord, TimeInterval};

/// Seconds of `interval` covered by `overlaps`, which must be normalised.
pub fn covered_seconds(interval: &TimeInterval, overlaps: &[TimeInterval]) -> f64 {
    overlaps.iter().map(|o| interval.overlap(o)).sum()
}

/// Gives two labels to segments lying mostly inside detected overlapped
/// speech. `assignments[i]` belongs to `segments[i]`, both in ordinal order.
///
/// Neighbours are taken from the labels as they stood before this pass, so the
/// result does not depend on processing order. Exemplar segments are kept.
pub fn assign_overlap(
    assignments: &[Assignment],
    segments: &[SegmentRecord],
    overlaps: &[TimeInterval],
    min_fraction: f64,
) -> Vec<Assignment> {
    let mut out = assignments.to_vec();
    for (i, seg) in segments.iter().enumerate() {
        if assignments[i].provenance == Provenance::Exemplar {
            continue;
        }
        if covered_seconds(&seg.interval, overlaps) <= min_fraction * seg.duration() {
            continue;
        }
        if let Some((first, second)) = neighbour_pair(i, assignments, segments) {
            let a = &mut out[i];
            a.label = Some(first);
            a.secondary_label = Some(second);
            a.provenance = Provenance::OverlapNeighbor;
        }
    }
    out
}

/// The two temporally nearest distinct labels around segment `i`, earlier first.
fn neighbour_pair(
    i: usize,
    assignments: &[Assignment],
    segments: &[SegmentRecord],
) -> Option<(CharacterId, CharacterId)> {
    let mid = segments[i].interval.midpoint();
    // (distance, ordinal, label) of every other labeled segment.
    let labeled: Vec<(f64, usize, &CharacterId)> = assignments
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .filter_map(|(j, a)| a.label.as_ref().map(|l| ((segments[j].interval.midpoint() - mid).abs(), j, l)))
        .collect();
    let nearest = |pred: &dyn Fn(&(f64, usize, &CharacterId)) -> bool| {
        labeled
            .iter()
            .filter(|c| pred(c))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.abs_diff(i).cmp(&b.1.abs_diff(i))).then(a.1.cmp(&b.1)))
            .copied()
    };
    let back = nearest(&|c| c.1 < i);
    let fwd = nearest(&|c| c.1 > i);
    let (x, y) = match (back, fwd) {
        (Some(b), Some(f)) if b.2 != f.2 => (b, f),
        (b, f) => {
            let anchor = match (b, f) {
                (Some(b), Some(f)) => {
                    if b.0 <= f.0 {
                        b
                    } else {
                        f
                    }
                }
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => return None,
            };
            let other = nearest(&|c| c.2 != anchor.2)?;
            (anchor, other)
        }
    };
    let (first, second) = if x.1 < y.1 { (x, y) } else { (y, x) };
    Some((first.2.clone(), second.2.clone()))
}
