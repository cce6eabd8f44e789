use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use afqnet_core::autodiff::Graph;
use afqnet_core::feedback::{drconv_with_mask, DR_IN, DR_TAP};
use afqnet_core::harness::synth::{reference_cloud, Primitive};
use afqnet_core::harness::TrainConfig;
use afqnet_core::objective::soft_rank;
use afqnet_core::{canonicalize, project_views, Model, RenderSettings, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn drconv(c: &mut Criterion) {
    let mut group = c.benchmark_group("drconv");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (h, w) in [(64, 96), (128, 192)] {
        let n = 8;
        let image = random(&[h, w, DR_IN], &mut rng);
        let filters = random(&[3, 3, DR_TAP * n], &mut rng);
        let mask: Vec<usize> = (0..h * w).map(|_| rng.gen_range(0..n)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{h}x{w}")), &(), |b, _| {
            b.iter(|| drconv_with_mask(&image, &filters, &mask, 3, n).unwrap())
        });
    }
    group.finish();
}

fn ranks(c: &mut Criterion) {
    let mut group = c.benchmark_group("soft_rank");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [8, 64, 512] {
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &theta, |b, t| b.iter(|| soft_rank(t, 0.1)));
    }
    group.finish();
}

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_views");
    group.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pc = canonicalize(&reference_cloud(Primitive::Torus, 20_000, "bench", &mut rng).unwrap()).unwrap();
    for resolution in [64, 256] {
        let settings = RenderSettings {
            resolution,
            ..RenderSettings::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(resolution), &settings, |b, s| {
            b.iter(|| project_views(&pc, s).unwrap())
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("tiny_model");
    group.sample_size(10);
    let cfg = TrainConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pc = canonicalize(&reference_cloud(Primitive::Sphere, 4000, "bench", &mut rng).unwrap()).unwrap();
    let views = project_views(&pc, &cfg.render_settings()).unwrap();
    let model = Model::init(cfg.model_config(), 0, 3.0).unwrap();
    group.bench_function("predict", |b| b.iter(|| model.predict(&views).unwrap()));
    group.bench_function("loss_and_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let (loss, _, _) = model.batch_loss(&mut g, &bound, &[&views, &views], &[1.0, 4.0]).unwrap();
            g.backward(loss).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, drconv, ranks, projection, training_step);
criterion_main!(benches);
