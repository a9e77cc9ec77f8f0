use std::collections::BTreeMap;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CharacterId, TimeInterval};

/// One speaker turn on a timeline, reference or hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTurn {
    pub interval: TimeInterval,
    pub speaker: CharacterId,
}

impl SpeakerTurn {
    pub fn new(interval: TimeInterval, speaker: impl Into<CharacterId>) -> Self {
        Self { interval, speaker: speaker.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerMode {
    /// Hypothesis labels are names and are compared verbatim.
    #[default]
    Identification,
    /// Labels are matched one-to-one to maximise overlap before scoring.
    Optimal,
}

/// Error components in seconds. `der = (miss + false_alarm + speaker_error) / scored_speech`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiarisationScore {
    pub der: f64,
    pub miss: f64,
    pub false_alarm: f64,
    pub speaker_error: f64,
    pub scored_speech: f64,
}

impl DiarisationScore {
    fn from_parts(miss: f64, false_alarm: f64, speaker_error: f64, scored_speech: f64) -> Result<Self> {
        if scored_speech <= 0.0 {
            return Err(Error::UndefinedMetric("DER: no scored reference speech".into()));
        }
        Ok(Self {
            der: (miss + false_alarm + speaker_error) / scored_speech,
            miss,
            false_alarm,
            speaker_error,
            scored_speech,
        })
    }

    /// Pools several scores by summing their components.
    pub fn pooled<'a>(scores: impl IntoIterator<Item = &'a DiarisationScore>) -> Result<Self> {
        let (mut m, mut f, mut e, mut s) = (0.0, 0.0, 0.0, 0.0);
        for x in scores {
            m += x.miss;
            f += x.false_alarm;
            e += x.speaker_error;
            s += x.scored_speech;
        }
        Self::from_parts(m, f, e, s)
    }
}

/// Reference-boundary collar zones, merged and sorted.
fn collar_zones(reference: &[SpeakerTurn], collar: f64) -> Vec<(f64, f64)> {
    if collar <= 0.0 {
        return Vec::new();
    }
    let mut zones: Vec<(f64, f64)> = reference
        .iter()
        .flat_map(|t| [t.interval.start(), t.interval.end()])
        .map(|b| (b - collar, b + collar))
        .collect();
    zones.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(zones.len());
    for z in zones {
        match merged.last_mut() {
            Some(last) if z.0 <= last.1 => last.1 = last.1.max(z.1),
            _ => merged.push(z),
        }
    }
    merged
}

fn in_zones(zones: &[(f64, f64)], t: f64) -> bool {
    let idx = zones.partition_point(|z| z.1 <= t);
    zones.get(idx).is_some_and(|z| z.0 < t)
}

/// Speaker indices active at `t`. `turns` is sorted by start.
fn active(turns: &[(f64, f64, usize)], t: f64, out: &mut Vec<usize>) {
    out.clear();
    for &(s, e, k) in turns {
        if s > t {
            break;
        }
        if t < e {
            out.push(k);
        }
    }
    out.sort_unstable();
    out.dedup();
}

fn index_speakers(turns: &[SpeakerTurn], names: &mut BTreeMap<CharacterId, usize>) -> Vec<(f64, f64, usize)> {
    let mut v: Vec<(f64, f64, usize)> = turns
        .iter()
        .map(|t| {
            let n = names.len();
            let k = *names.entry(t.speaker.clone()).or_insert(n);
            (t.interval.start(), t.interval.end(), k)
        })
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

struct Region {
    dur: f64,
    refs: Vec<usize>,
    hyps: Vec<usize>,
}

/// Diarisation error rate with a collar around every reference boundary.
///
/// The timeline is cut at every boundary of either side and of the collar
/// zones. Each elementary region with `r` reference and `h` hypothesis speakers
/// (counted as sets) contributes `max(0, r - h)` miss, `max(0, h - r)` false
/// alarm and `min(r, h) - correct` speaker error, each times its duration.
pub fn compute_der(
    reference: &[SpeakerTurn],
    hypothesis: &[SpeakerTurn],
    collar: f64,
    mode: DerMode,
) -> Result<DiarisationScore> {
    if !collar.is_finite() || collar < 0.0 {
        return Err(Error::validation("DER", format!("collar {collar} must be finite and non-negative")));
    }
    let mut ref_names = BTreeMap::new();
    let mut hyp_names = BTreeMap::new();
    let refs = index_speakers(reference, &mut ref_names);
    let hyps = index_speakers(hypothesis, &mut hyp_names);
    let zones = collar_zones(reference, collar);

    let mut cuts: Vec<f64> = refs
        .iter()
        .chain(&hyps)
        .flat_map(|&(s, e, _)| [s, e])
        .chain(zones.iter().flat_map(|&(a, b)| [a, b]))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut regions = Vec::new();
    let (mut r, mut h) = (Vec::new(), Vec::new());
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        if in_zones(&zones, mid) {
            continue;
        }
        active(&refs, mid, &mut r);
        active(&hyps, mid, &mut h);
        if r.is_empty() && h.is_empty() {
            continue;
        }
        regions.push(Region { dur: b - a, refs: r.clone(), hyps: h.clone() });
    }

    // Which reference index each hypothesis index counts as.
    let mapping: Vec<Option<usize>> = match mode {
        DerMode::Identification => {
            let mut by_name = vec![None; hyp_names.len()];
            for (name, &k) in &hyp_names {
                by_name[k] = ref_names.get(name).copied();
            }
            by_name
        }
        DerMode::Optimal => optimal_mapping(&regions, ref_names.len(), hyp_names.len()),
    };

    let (mut miss, mut fa, mut err, mut scored) = (0.0, 0.0, 0.0, 0.0);
    for reg in &regions {
        let (nr, nh) = (reg.refs.len(), reg.hyps.len());
        let correct = reg
            .hyps
            .iter()
            .filter(|&&k| mapping[k].is_some_and(|m| reg.refs.binary_search(&m).is_ok()))
            .count();
        scored += reg.dur * nr as f64;
        miss += reg.dur * nr.saturating_sub(nh) as f64;
        fa += reg.dur * nh.saturating_sub(nr) as f64;
        err += reg.dur * (nr.min(nh) - correct) as f64;
    }
    DiarisationScore::from_parts(miss, fa, err, scored)
}

/// One-to-one hypothesis → reference mapping maximising co-occurring time.
fn optimal_mapping(regions: &[Region], n_ref: usize, n_hyp: usize) -> Vec<Option<usize>> {
    if n_ref == 0 || n_hyp == 0 {
        return vec![None; n_hyp];
    }
    let mut w = vec![vec![0.0f64; n_ref]; n_hyp];
    for reg in regions {
        for &h in &reg.hyps {
            for &r in &reg.refs {
                w[h][r] += reg.dur;
            }
        }
    }
    // Integer weights in microseconds.
    let micros = |x: f64| (x * 1e6).round() as i64;
    let mut mapping = vec![None; n_hyp];
    if n_hyp <= n_ref {
        let m = Matrix::from_fn(n_hyp, n_ref, |(h, r)| micros(w[h][r]));
        let (_, cols) = kuhn_munkres(&m);
        for (h, r) in cols.into_iter().enumerate() {
            mapping[h] = Some(r);
        }
    } else {
        let m = Matrix::from_fn(n_ref, n_hyp, |(r, h)| micros(w[h][r]));
        let (_, cols) = kuhn_munkres(&m);
        for (r, h) in cols.into_iter().enumerate() {
            mapping[h] = Some(r);
        }
    }
    mapping
}
