use criterion::{criterion_group, criterion_main, Criterion};
use hullsight_core::detect::{evaluate, BBox, Detection, GroundTruth};
use hullsight_core::graph::Graph;
use hullsight_core::image::Image;
use hullsight_core::metrics::ssim_tensor;
use hullsight_core::model::{build, ModelConfig};
use hullsight_core::noise::NoiseParams;
use hullsight_core::ops::ConvSpec;
use hullsight_core::rng::SplitMix64;
use hullsight_core::tensor::Tensor;

fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut rng = SplitMix64::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.next_f64() as f32).collect()).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let spec = ConvSpec::same(8, 8, 3, 3);
    let mut g: Graph<f32> = Graph::new();
    let x = g.input("x", [1, 8, 64, 64]);
    let w = g.param("w", rand_tensor([8, 8, 3, 3], 1));
    let b = g.param("b", rand_tensor([1, 8, 1, 1], 2));
    let y = g.conv2d(x, w, Some(b), spec).unwrap();
    let loss = g.mean_all(y);
    g.mark_output("loss", loss);
    let input = rand_tensor([1, 8, 64, 64], 3);
    let ones = Tensor::new([1, 1, 1, 1], vec![1.0_f32]).unwrap();

    c.bench_function("conv2d_forward_8x64x64", |bench| {
        bench.iter(|| g.forward(&[("x", input.clone())]).unwrap())
    });
    c.bench_function("conv2d_forward_backward_8x64x64", |bench| {
        bench.iter(|| {
            g.forward(&[("x", input.clone())]).unwrap();
            g.backward("loss", &ones).unwrap()
        })
    });
}

fn bench_deform_conv(c: &mut Criterion) {
    let spec = ConvSpec::same(4, 8, 3, 3);
    let mut g: Graph<f32> = Graph::new();
    let x = g.input("x", [1, 4, 32, 32]);
    let off = g.input("off", [1, 18, 32, 32]);
    let w = g.param("w", rand_tensor([8, 4, 3, 3], 1));
    let y = g.deform_conv2d(x, w, off, None, spec).unwrap();
    g.mark_output("y", y);
    let input = rand_tensor([1, 4, 32, 32], 2);
    let mut offsets = rand_tensor([1, 18, 32, 32], 3);
    for v in offsets.data_mut() {
        *v = *v - 0.5;
    }

    c.bench_function("deform_conv2d_forward_4x32x32", |bench| {
        bench.iter(|| {
            g.forward(&[("x", input.clone()), ("off", offsets.clone())])
                .unwrap()
        })
    });
}

fn bench_model_forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let mut net = build::<f32>(&cfg, 1, 64, 64, 0).unwrap();
    let input = rand_tensor([1, 1, 64, 64], 9);
    c.bench_function("ddsrnet_forward_64x64", |bench| {
        bench.iter(|| net.graph.forward(&[("input", input.clone())]).unwrap())
    });
}

fn bench_ssim(c: &mut Criterion) {
    let a = rand_tensor([1, 1, 256, 256], 4);
    let b = rand_tensor([1, 1, 256, 256], 5);
    c.bench_function("ssim_256x256", |bench| {
        bench.iter(|| ssim_tensor(&a, &b).unwrap())
    });
}

fn bench_noise(c: &mut Criterion) {
    let img = Image::filled(512, 512, 1, 128).unwrap();
    let sp = NoiseParams::salt_pepper(0.05, 0.05, 42);
    let shot = NoiseParams::shot(0.5, 42);
    c.bench_function("salt_pepper_512x512", |bench| {
        bench.iter(|| sp.apply(&img).unwrap())
    });
    c.bench_function("shot_512x512", |bench| {
        bench.iter(|| shot.apply(&img).unwrap())
    });
}

fn bench_map(c: &mut Criterion) {
    let mut rng = SplitMix64::new(7);
    let rand_box = |rng: &mut SplitMix64| {
        let x = rng.next_f64() * 500.0;
        let y = rng.next_f64() * 500.0;
        let w = 10.0 + rng.next_f64() * 90.0;
        let h = 10.0 + rng.next_f64() * 90.0;
        BBox { x_min: x, y_min: y, x_max: x + w, y_max: y + h }
    };
    let gts: Vec<GroundTruth> = (0..100)
        .map(|i| GroundTruth {
            bbox: rand_box(&mut rng),
            class_id: (i % 3) as u32,
            image_id: format!("img{}", i % 10),
        })
        .collect();
    let dets: Vec<Detection> = (0..200)
        .map(|i| Detection {
            bbox: rand_box(&mut rng),
            class_id: (i % 3) as u32,
            confidence: rng.next_f64(),
            image_id: format!("img{}", i % 10),
        })
        .collect();
    c.bench_function("map_200dets_100gts", |bench| {
        bench.iter(|| evaluate(&dets, &gts))
    });
}

criterion_group!(
    benches,
    bench_conv,
    bench_deform_conv,
    bench_model_forward,
    bench_ssim,
    bench_noise,
    bench_map
);
criterion_main!(benches);
