use std::path::Path;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use charsub::io::{
    load_corpus, load_embeddings, load_segments, load_visual, write_embeddings, write_segments, write_visual,
    BundlePaths,
};
use charsub::model::SpeakerEmbedding;
use charsub::synth::{rng, synth_episode, write_corpus, EpisodeSpec};

fn shuffle_lines(path: &Path, seed: u64) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.shuffle(&mut rng(seed));
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn embedding_floats_round_trip_bit_exact(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite() && x.abs() < 1e150), 4), 1..20)) {
        let embs: Vec<SpeakerEmbedding> = rows
            .into_iter()
            .enumerate()
            .filter_map(|(i, v)| SpeakerEmbedding::new(format!("s{i:03}").into(), v).ok())
            .collect();
        prop_assume!(!embs.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("embeddings.jsonl");
        write_embeddings(&p, &embs).unwrap();
        let back = load_embeddings(&p, Some(4)).unwrap();
        prop_assert_eq!(back.len(), embs.len());
        for (a, b) in embs.iter().zip(&back) {
            prop_assert_eq!(&a.segment_id, &b.segment_id);
            for (x, y) in a.vector().iter().zip(b.vector()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn generated_components_round_trip(seed in 0u64..1000) {
        let ep = synth_episode(&EpisodeSpec { segments: 25, ..Default::default() }, seed);
        let dir = tempfile::tempdir().unwrap();
        let (s, v) = (dir.path().join("s.jsonl"), dir.path().join("v.jsonl"));
        write_segments(&s, &ep.segments).unwrap();
        write_visual(&v, &ep.visual).unwrap();
        prop_assert_eq!(load_segments(&s).unwrap(), ep.segments.clone());
        let mut visual = ep.visual.clone();
        visual.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
        let mut back = load_visual(&v).unwrap();
        back.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
        prop_assert_eq!(back, visual);
    }

    #[test]
    fn corpus_loading_ignores_row_order(seed in 0u64..1000) {
        let eps: Vec<_> = (0..2)
            .map(|k| synth_episode(&EpisodeSpec { episode: format!("ep{k}"), segments: 15, ..Default::default() }, seed + k))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &eps).unwrap();
        let paths = BundlePaths::in_dir(dir.path());
        let before = load_corpus(&paths, None).unwrap();
        for (i, f) in ["segments.jsonl", "embeddings.jsonl", "visual.jsonl", "overlap.jsonl", "reference.jsonl"].iter().enumerate() {
            shuffle_lines(&dir.path().join(f), seed * 7 + i as u64);
        }
        let after = load_corpus(&paths, None).unwrap();
        prop_assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after) {
            prop_assert_eq!(&a.segments, &b.segments);
            prop_assert_eq!(&a.embeddings, &b.embeddings);
            prop_assert_eq!(&a.visual, &b.visual);
            prop_assert_eq!(&a.overlap, &b.overlap);
            let sort = |r: &Option<Vec<charsub::io::ReferenceSegment>>| {
                let mut r = r.clone().unwrap();
                r.sort_by(|x, y| x.interval.start().total_cmp(&y.interval.start()));
                r
            };
            prop_assert_eq!(sort(&a.reference), sort(&b.reference));
        }
    }
}

#[test]
fn synth_corpus_loads_per_episode() {
    let eps: Vec<_> = (0..3)
        .map(|k| synth_episode(&EpisodeSpec { episode: format!("ep{k}"), segments: 10, ..Default::default() }, k))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &eps).unwrap();
    let bundles = load_corpus(&BundlePaths::in_dir(dir.path()), Some(16)).unwrap();
    assert_eq!(bundles.iter().map(|b| b.episode.as_str()).collect::<Vec<_>>(), ["ep0", "ep1", "ep2"]);
    assert!(bundles.iter().all(|b| b.reference.as_ref().unwrap().len() == 10));
}
