use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use super::{
    load_cast, load_embeddings, load_overlap, load_reference, load_segments, load_visual,
    ReferenceAnnotation, ReferenceSegment,
};
use crate::error::{Error, Result};
use crate::model::{
    CastList, SegmentId, SegmentRecord, SpeakerEmbedding, TimeInterval, VisualSpeakerObservation,
};

/// Everything known about one episode, cross-linked by segment id.
#[derive(Debug, Clone)]
pub struct EpisodeBundle {
    pub episode: String,
    /// In ordinal order.
    pub segments: Vec<SegmentRecord>,
    pub embeddings: BTreeMap<SegmentId, SpeakerEmbedding>,
    pub visual: BTreeMap<SegmentId, VisualSpeakerObservation>,
    pub overlap: Vec<TimeInterval>,
    pub cast: CastList,
    pub reference: Option<Vec<ReferenceSegment>>,
}

impl EpisodeBundle {
    pub fn new(
        episode: impl Into<String>,
        mut segments: Vec<SegmentRecord>,
        embeddings: Vec<SpeakerEmbedding>,
        visual: Vec<VisualSpeakerObservation>,
        overlap: Vec<TimeInterval>,
        cast: CastList,
        reference: Option<Vec<ReferenceSegment>>,
    ) -> Result<Self> {
        let episode = episode.into();
        let ctx = || format!("episode {episode}");
        if let Some(s) = segments.iter().find(|s| s.episode != episode) {
            return Err(Error::validation(ctx(), format!("segment {} belongs to episode {}", s.id, s.episode)));
        }
        segments.sort_by_key(|s| s.ordinal);
        if segments.iter().enumerate().any(|(i, s)| s.ordinal != i) {
            return Err(Error::validation(ctx(), "segment ordinals are not a permutation of 0..n"));
        }
        let ids: HashMap<&SegmentId, ()> = segments.iter().map(|s| (&s.id, ())).collect();

        let mut emb_map = BTreeMap::new();
        let mut dim = None;
        for e in embeddings {
            if !ids.contains_key(&e.segment_id) {
                return Err(Error::validation(ctx(), format!("embedding references unknown segment {}", e.segment_id)));
            }
            if *dim.get_or_insert(e.dim()) != e.dim() {
                return Err(Error::validation(ctx(), format!("embedding {} has inconsistent dimension", e.segment_id)));
            }
            if emb_map.insert(e.segment_id.clone(), e).is_some() {
                return Err(Error::validation(ctx(), "duplicate embedding"));
            }
        }
        if let Some(s) = segments.iter().find(|s| !emb_map.contains_key(&s.id)) {
            return Err(Error::validation(ctx(), format!("segment {} has no embedding", s.id)));
        }

        let mut vis_map = BTreeMap::new();
        for o in visual {
            if !ids.contains_key(&o.segment_id) {
                return Err(Error::validation(ctx(), format!("visual observation references unknown segment {}", o.segment_id)));
            }
            vis_map.insert(o.segment_id.clone(), o);
        }
        drop(ids);

        Ok(Self {
            episode,
            segments,
            embeddings: emb_map,
            visual: vis_map,
            overlap: crate::model::normalize_intervals(overlap),
            cast,
            reference,
        })
    }

    pub fn embedding(&self, id: &SegmentId) -> Option<&SpeakerEmbedding> {
        self.embeddings.get(id)
    }

    pub fn segment(&self, id: &SegmentId) -> Option<&SegmentRecord> {
        self.segments.iter().find(|s| &s.id == id)
    }
}

/// File locations making up a corpus.
#[derive(Debug, Clone)]
pub struct BundlePaths {
    pub segments: PathBuf,
    pub embeddings: PathBuf,
    pub visual: Option<PathBuf>,
    pub overlap: Option<PathBuf>,
    pub cast: PathBuf,
    pub reference: Option<PathBuf>,
}

impl BundlePaths {
    /// Standard file names inside `dir`; optional files are used when present.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        Self {
            segments: dir.join("segments.jsonl"),
            embeddings: dir.join("embeddings.jsonl"),
            visual: opt("visual.jsonl"),
            overlap: opt("overlap.jsonl"),
            cast: dir.join("cast.json"),
            reference: opt("reference.rttm").or_else(|| opt("reference.jsonl")),
        }
    }

    /// Every file that exists, in a fixed order.
    pub fn existing_files(&self) -> Vec<&Path> {
        let mut v = vec![self.segments.as_path(), self.embeddings.as_path(), self.cast.as_path()];
        for p in [&self.visual, &self.overlap, &self.reference].into_iter().flatten() {
            v.push(p.as_path());
        }
        v.into_iter().filter(|p| p.exists()).collect()
    }
}

/// Loads all files and splits them into per-episode bundles, sorted by episode.
pub fn load_corpus(paths: &BundlePaths, expected_dim: Option<usize>) -> Result<Vec<EpisodeBundle>> {
    let segments = load_segments(&paths.segments)?;
    let embeddings = load_embeddings(&paths.embeddings, expected_dim)?;
    let visual = match &paths.visual {
        Some(p) => load_visual(p)?,
        None => Vec::new(),
    };
    let mut overlap = match &paths.overlap {
        Some(p) => load_overlap(p)?,
        None => BTreeMap::new(),
    };
    let cast = load_cast(&paths.cast)?;
    let reference: Option<ReferenceAnnotation> = match &paths.reference {
        Some(p) => Some(load_reference(p)?.resolve_aliases(&cast)),
        None => None,
    };

    let episode_of: HashMap<SegmentId, String> =
        segments.iter().map(|s| (s.id.clone(), s.episode.clone())).collect();
    let mut seg_by_ep: BTreeMap<String, Vec<SegmentRecord>> = BTreeMap::new();
    for s in segments {
        seg_by_ep.entry(s.episode.clone()).or_default().push(s);
    }
    let mut emb_by_ep: HashMap<String, Vec<SpeakerEmbedding>> = HashMap::new();
    for e in embeddings {
        let ep = episode_of.get(&e.segment_id).ok_or_else(|| {
            Error::validation(
                paths.embeddings.display().to_string(),
                format!("embedding references unknown segment {}", e.segment_id),
            )
        })?;
        emb_by_ep.entry(ep.clone()).or_default().push(e);
    }
    let mut vis_by_ep: HashMap<String, Vec<VisualSpeakerObservation>> = HashMap::new();
    for o in visual {
        let ep = episode_of.get(&o.segment_id).ok_or_else(|| {
            Error::validation(
                paths.visual.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                format!("observation references unknown segment {}", o.segment_id),
            )
        })?;
        vis_by_ep.entry(ep.clone()).or_default().push(o);
    }

    seg_by_ep
        .into_iter()
        .map(|(ep, segs)| {
            let reference = reference.as_ref().map(|r| r.for_episode(&ep));
            EpisodeBundle::new(
                ep.clone(),
                segs,
                emb_by_ep.remove(&ep).unwrap_or_default(),
                vis_by_ep.remove(&ep).unwrap_or_default(),
                overlap.remove(&ep).unwrap_or_default(),
                cast.clone(),
                reference,
            )
        })
        .collect()
}
