use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cropseg_core::imagery::{crop_resize, rasterize_polygon, CropWindow, PolygonAnnotation};
use cropseg_core::nn::{Conv2d, Tensor};
use cropseg_core::predictor::predict_averaged;
use cropseg_core::{build_network, NetworkConfig, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RasterImage {
    RasterImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("conv3x3");
    for (ch, side) in [(16, 64), (64, 32), (128, 16)] {
        let mut layer = Conv2d::new(&mut rng, ch, ch, 3, 1, 1);
        let x = random_tensor(&mut rng, [4, ch, side, side]);
        let dy = random_tensor(&mut rng, [4, ch, side, side]);
        let id = format!("{ch}ch_{side}px");
        group.bench_with_input(BenchmarkId::new("forward", &id), &x, |b, x| {
            b.iter(|| layer.forward(black_box(x)).unwrap())
        });
        group.bench_function(BenchmarkId::new("backward", &id), |b| {
            b.iter(|| layer.backward(black_box(&x), black_box(&dy), true))
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    for side in [64, 128] {
        let net = build_network(NetworkConfig::new(4, 16, side), 0).unwrap();
        let batch = random_tensor(&mut rng, [1, 3, side, side]);
        group.bench_with_input(BenchmarkId::new("forward", side), &batch, |b, x| {
            b.iter(|| net.forward(black_box(x)).unwrap())
        });
        let img = random_image(&mut rng, side, side);
        group.bench_with_input(BenchmarkId::new("predict_d4", side), &img, |b, img| {
            b.iter(|| predict_averaged(&net, black_box(img), true).unwrap())
        });
    }
    group.finish();
}

fn imagery(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let photo = random_image(&mut rng, 1600, 1200);
    let window = CropWindow::new((800.3, 600.7), 900, 0.75).unwrap();
    c.bench_function("crop_resize_900_to_128", |b| {
        b.iter(|| crop_resize(black_box(&photo), &window, 128).unwrap())
    });

    let outline: Vec<(f64, f64)> = (0..96)
        .map(|i| {
            let t = i as f64 / 96.0 * std::f64::consts::TAU;
            (2600.0 + 700.0 * t.cos(), 1950.0 + 650.0 * t.sin())
        })
        .collect();
    let ann = PolygonAnnotation::new(outline, "fruit", 5200, 3900).unwrap();
    c.bench_function("rasterize_96gon_5200x3900", |b| b.iter(|| rasterize_polygon(black_box(&ann))));
}

criterion_group!(benches, conv, network, imagery);
criterion_main!(benches);
