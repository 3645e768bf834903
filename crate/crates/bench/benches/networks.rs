use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mlctx_bench::fixture;
use mlctx_core::nn::{backward, forward};
use mlctx_core::{ArchPreset, Mode};

fn passes(c: &mut Criterion) {
    let mut g = c.benchmark_group("network");
    g.sample_size(20);
    for key in ["alexnet-mini", "alexnet-mini++", "alexnet-mini-allconv", "inception-mini", "inception-mini++"] {
        let preset: ArchPreset = key.parse().unwrap();
        let f = fixture(&preset, 32).unwrap();
        g.bench_function(BenchmarkId::new("forward", key), |b| {
            b.iter(|| forward(&f.graph, &f.params, &f.batch, Mode::Train, Some(1)).unwrap())
        });
        g.bench_function(BenchmarkId::new("forward+backward", key), |b| {
            let mut params = f.params.clone();
            b.iter(|| {
                let acts = forward(&f.graph, &params, &f.batch, Mode::Train, Some(1)).unwrap();
                backward(&f.graph, &mut params, &acts, &f.labels, 0.3).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, passes);
criterion_main!(benches);
