use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pll_core::data::{generate_synthetic, SyntheticSpec};
use pll_core::label_codec::{EggCode, EncodedLabels};
use pll_core::loss::{loss_gradient, sample_loss, LossConfig};
use pll_core::metrics::{compute_metrics, confusion};
use pll_core::net::{default_spec, Mode, Network, Shape, Tensor};

fn batch(n: usize, p: usize) -> Tensor {
    let data = (0..n * 3 * p * p).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    Tensor::new(vec![n, 3, p, p], data).unwrap()
}

fn network(c: &mut Criterion) {
    let net = Network::build(Shape::new(3, 16, 16), &default_spec(), 0).unwrap();
    let x = batch(32, 16);
    c.bench_function("forward_32x16x16", |b| {
        b.iter(|| net.forward(black_box(&x), Mode::Inference).unwrap())
    });
    let (logits, cache) = net.forward(&x, Mode::Train { seed: 1 }).unwrap();
    let y = [0.0, 0.0, 0.25, 0.75, 0.0, 0.0];
    let cfg = LossConfig::focal(0.25, 1.0);
    let grads: Vec<f64> = logits.rows().flat_map(|z| loss_gradient(z, &y, &cfg)).collect();
    let grads = Tensor::new(vec![32, 6], grads).unwrap();
    c.bench_function("backward_32x16x16", |b| {
        b.iter(|| net.backward(black_box(&cache), black_box(&grads)).unwrap())
    });
}

fn losses(c: &mut Criterion) {
    let z = [0.4, -0.3, 1.1, 0.0, 0.2, -2.0];
    let y = [0.0, 0.0, 0.25, 0.75, 0.0, 0.0];
    let focal = LossConfig::focal(0.25, 2.0).with_weights(vec![1.5, 4.0, 2.0, 2.5, 0.7, 1.4]);
    c.bench_function("focal_loss_and_gradient", |b| {
        b.iter(|| {
            let l = sample_loss(black_box(&z), black_box(&y), &focal);
            (l, loss_gradient(black_box(&z), black_box(&y), &focal))
        })
    });
    let egg = EggCode::two_types(86, 79, 83, 24);
    c.bench_function("encode_all", |b| b.iter(|| EncodedLabels::from_egg(black_box(&egg)).unwrap()));
}

fn data_and_metrics(c: &mut Criterion) {
    let spec = SyntheticSpec {
        samples: 256,
        ..SyntheticSpec::desk()
    };
    c.bench_function("generate_256_patches", |b| b.iter(|| generate_synthetic(black_box(&spec), 0).unwrap()));
    let truths: Vec<usize> = (0..10_000).map(|i| (i * 31) % 6).collect();
    let preds: Vec<usize> = (0..10_000).map(|i| (i * 17) % 6).collect();
    c.bench_function("metrics_10k", |b| {
        b.iter_batched(
            || (preds.clone(), truths.clone()),
            |(p, t)| compute_metrics(&confusion(&p, &t).unwrap()).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, network, losses, data_and_metrics);
criterion_main!(benches);
