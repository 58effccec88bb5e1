use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cunet::autodiff::{ConvSpec, Graph, Tensor};
use cunet::dsp::{istft, stft};
use cunet::metrics::{bss_eval, MetricConfig};
use cunet::wiener::{wiener_filter, WienerConfig};
use cunet::{MagSpec, Model, UNetConfig, Waveform, SAMPLE_RATE, SEGMENT_SAMPLES};

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Waveform {
    Waveform::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE).unwrap()
}

fn spectra(c: &mut Criterion) {
    let x = noise(&mut ChaCha8Rng::seed_from_u64(0), SEGMENT_SAMPLES);
    let spec = stft(&x).unwrap();
    c.bench_function("stft_segment", |b| b.iter(|| stft(black_box(&x)).unwrap()));
    c.bench_function("istft_segment", |b| b.iter(|| istft(black_box(&spec), SEGMENT_SAMPLES).unwrap()));
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rand = |shape: &[usize]| Tensor::<f32>::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let (x, w, bias) = (rand(&[1, 16, 256, 128]), rand(&[32, 16, 4, 4]), rand(&[32]));
    c.bench_function("conv2d_down_forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new(true, 0);
            let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(bias.clone()));
            let y = g.conv2d(xv, wv, bv, ConvSpec::DOWN).unwrap();
            let loss = g.sum(y);
            g.backward(loss).unwrap();
            black_box(g.grad(wv).is_some())
        })
    });
}

fn unet(c: &mut Criterion) {
    let model = Model::build(
        UNetConfig {
            base_channels: 4,
            ..UNetConfig::default()
        },
        0,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mag = MagSpec::linear(Array2::from_shape_fn((512, 256), |_| rng.gen_range(0.0..1.0)));
    let mut group = c.benchmark_group("unet");
    group.sample_size(10);
    group.bench_function("predict_base4", |b| b.iter(|| model.predict(black_box(&mag), None).unwrap()));
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let refs: Vec<Waveform> = (0..2).map(|_| noise(&mut rng, 8192)).collect();
    let est = Waveform::new(
        refs[0].samples().iter().zip(refs[1].samples()).map(|(a, b)| a + 0.2 * b).collect(),
        SAMPLE_RATE,
    )
    .unwrap();
    let cfg = MetricConfig::default();
    let mut group = c.benchmark_group("bss_eval");
    group.sample_size(10);
    group.bench_function("two_sources_8192_samples_512_taps", |b| {
        b.iter(|| bss_eval(black_box(&est), &refs, 0, &cfg).unwrap())
    });
    group.finish();
}

fn wiener(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mix = stft(&noise(&mut rng, SEGMENT_SAMPLES)).unwrap();
    let est: Vec<MagSpec> = (0..3)
        .map(|_| MagSpec::linear(Array2::from_shape_fn(mix.shape(), |_| rng.gen_range(0.0..1.0))))
        .collect();
    let cfg = WienerConfig::new(1);
    c.bench_function("wiener_three_sources_one_iteration", |b| {
        b.iter(|| wiener_filter(black_box(&est), &mix, &cfg).unwrap())
    });
}

criterion_group!(benches, spectra, conv, unet, metrics, wiener);
criterion_main!(benches);
