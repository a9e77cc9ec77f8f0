//! Data-parallel against single-threaded execution of the hot loops.
//!
//! With the `parallel` feature each benchmark runs twice: on rayon's global
//! pool and inside a one-thread pool. Built with `--no-default-features` only
//! the sequential fallback is measured.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use charsub::exemplar::audio_purity_filter;
use charsub::exemplar::ExemplarCandidate;
use charsub::metrics::precision_pocs_sweep;
use charsub::synth::{purity_scenario, synth_episode, EpisodeSpec};
use charsub::PipelineConfig;

fn modes() -> Vec<(&'static str, Option<usize>)> {
    if cfg!(feature = "parallel") {
        vec![("pool", None), ("one_thread", Some(1))]
    } else {
        vec![("sequential", None)]
    }
}

fn run<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        return rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f);
    }
    let _ = threads;
    f()
}

fn purity(c: &mut Criterion) {
    let s = purity_scenario(11, 6, 200, 0.05, 64);
    let candidates: Vec<ExemplarCandidate> = s
        .candidates
        .iter()
        .map(|(id, who)| ExemplarCandidate { segment_id: id.clone(), character: who.clone() })
        .collect();
    let mut group = c.benchmark_group("purity_filter_1200");
    for (name, threads) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &threads, |b, &t| {
            b.iter(|| run(t, || black_box(audio_purity_filter(&candidates, &s.embeddings, 5).unwrap())))
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let spec = EpisodeSpec { segments: 300, ..Default::default() };
    let config = PipelineConfig::default();
    let inputs: Vec<_> = (0..4)
        .map(|seed| {
            let ep = synth_episode(&EpisodeSpec { episode: format!("ep{seed}"), ..spec.clone() }, seed);
            let bundle = ep.bundle().unwrap();
            let ex = charsub::exemplar::run_stage1(&bundle, &config).unwrap().exemplars;
            (bundle, ex)
        })
        .collect();
    let grid: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
    let mut group = c.benchmark_group("pocs_sweep_20pt");
    group.sample_size(10);
    for (name, threads) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &threads, |b, &t| {
            b.iter(|| run(t, || black_box(precision_pocs_sweep(&inputs, &config, &grid).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, purity, sweep);
criterion_main!(benches);
