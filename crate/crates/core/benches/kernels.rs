//! Kernel timings for the active backend.
//!
//! Run once per backend and compare the reports:
//!
//! ```text
//! cargo bench -p cftnet --bench kernels
//! cargo bench -p cftnet --bench kernels --no-default-features
//! ```
//!
//! Benchmark ids carry the backend name, so both runs land side by side in
//! `target/criterion`.

use std::hint::black_box;

use cftnet::data::{augment_dataset, generate_synthetic_dataset, AugmentationSpec, Scheme, SynthParams};
use cftnet::eval::{evaluate, FAILURE_THRESHOLD};
use cftnet::loss::multi_head_loss;
use cftnet::network::{CftNet, NetworkConfig};
use cftnet::par::is_parallel;
use cftnet::tensor::{Mode, Tape, Tensor};
use cftnet::trainer::EncodedSet;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn backend() -> &'static str {
    if is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    for (cin, cout, hw) in [(3, 32, 50), (32, 64, 25), (64, 128, 12)] {
        let x = random(&[16, cin, hw, hw], 1);
        let w = random(&[cout, cin, 3, 3], 2);
        let b = random(&[cout], 3);
        let label = format!("{cin}x{hw}x{hw}->{cout}");
        g.bench_with_input(BenchmarkId::new(format!("forward/{}", backend()), &label), &(), |bench, _| {
            bench.iter(|| {
                let mut t = Tape::new();
                let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
                black_box(t.conv2d(xv, wv, bv, 1, 1).unwrap());
            })
        });
        g.bench_with_input(BenchmarkId::new(format!("backward/{}", backend()), &label), &(), |bench, _| {
            bench.iter(|| {
                let mut t = Tape::new();
                let xv = t.leaf(x.clone(), true);
                let wv = t.param(&w);
                let bv = t.param(&b);
                let y = t.conv2d(xv, wv, bv, 1, 1).unwrap();
                let s = t.sum(y).unwrap();
                t.backward(s).unwrap();
                black_box(t.grad(wv).is_some());
            })
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let scheme = Scheme::synthetic(8).unwrap();
    let cfg = NetworkConfig {
        n_landmarks: scheme.n_landmarks,
        principal_indices: scheme.principal,
        ..Default::default()
    };
    let faces = generate_synthetic_dataset(16, 1, &SynthParams::default()).unwrap();
    let set = EncodedSet::<f32>::new(&faces, &cfg).unwrap();
    let (x, targets) = set.batch(&(0..16).collect::<Vec<_>>());
    let mut net = CftNet::<f32>::build(cfg).unwrap();
    c.bench_function(&format!("train_step/batch16/{}", backend()), |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let input = t.constant(x.clone());
            let pass = net.forward(&mut t, input, Mode::Train).unwrap();
            let (loss, _) = multi_head_loss(&mut t, &pass.heads, &targets, 0.995, &[1.0; 4]).unwrap();
            t.backward(loss).unwrap();
            black_box(loss);
        })
    });
    c.bench_function(&format!("evaluate/16/{}", backend()), |bench| {
        bench.iter(|| black_box(evaluate(&net, &faces, FAILURE_THRESHOLD).unwrap()))
    });
}

fn augment(c: &mut Criterion) {
    let faces = generate_synthetic_dataset(4, 2, &SynthParams::default()).unwrap();
    let spec = AugmentationSpec::default();
    let mut g = c.benchmark_group("augment");
    g.sample_size(10);
    g.bench_function(backend(), |bench| bench.iter(|| black_box(augment_dataset(&faces, &spec).unwrap())));
    g.finish();
}

criterion_group!(benches, conv, train_step, augment);
criterion_main!(benches);
