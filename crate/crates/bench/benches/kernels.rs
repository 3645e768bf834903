use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mlctx_core::data::{tta_crops, CropPlan};
use mlctx_core::nn::lrn;
use mlctx_core::tensor::{conv2d_backward, conv2d_forward, maxpool2d, ConvSpec};
use mlctx_core::{Shape, Tensor};

fn ramp(shape: Shape) -> Tensor<f32> {
    let data = (0..shape.len()).map(|i| ((i * 17) % 101) as f32 / 101.0 - 0.5).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    // (in channels, out channels, side) of the mini stacked-conv stages
    for (ci, co, side) in [(3, 32, 32), (32, 64, 16), (64, 96, 8), (96, 64, 8)] {
        let spec = ConvSpec::new(co, 3, 1, 1);
        let x = ramp(Shape::new(32, ci, side, side).unwrap());
        let w = ramp(spec.weight_shape(ci).unwrap());
        let b = vec![0.1f32; co];
        let id = format!("{ci}x{side}x{side}->{co}");
        g.bench_function(BenchmarkId::new("forward", &id), |bch| {
            bch.iter(|| conv2d_forward(&x, &w, &b, &spec).unwrap())
        });
        let y = conv2d_forward(&x, &w, &b, &spec).unwrap();
        g.bench_function(BenchmarkId::new("backward", &id), |bch| {
            bch.iter(|| conv2d_backward(&x, &w, &y, &spec).unwrap())
        });
    }
    g.finish();
}

fn pool_and_norm(c: &mut Criterion) {
    let x = ramp(Shape::new(32, 64, 16, 16).unwrap());
    c.bench_function("maxpool 2/2 64x16x16", |b| b.iter(|| maxpool2d(&x, 2, 2).unwrap()));
    c.bench_function("lrn 5 64x16x16", |b| b.iter(|| lrn(&x, 5, 1e-4, 2.0, 0.75).unwrap()));
}

fn crops(c: &mut Criterion) {
    let img = ramp(Shape::new(1, 3, 32, 32).unwrap()).map(|v| (v + 0.5) * 255.0);
    let plan = CropPlan::mini_default();
    c.bench_function("tta 144 crops 32x32", |b| b.iter(|| tta_crops(&img, &plan).unwrap()));
}

criterion_group!(benches, conv, pool_and_norm, crops);
criterion_main!(benches);
