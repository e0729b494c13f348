//! Sequential versus rayon paths on the hot loops.

use std::f64::consts::PI;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use emofuse_core::audio::{extract_lld, mfsc_map, AudioClip, DspConfig, LldConfig, MfscMap};
use emofuse_core::autograd::init::stream;
use emofuse_core::autograd::ops::Padding;
use emofuse_core::autograd::{Tape, Tensor};
use emofuse_core::model::{BranchSet, Model, ModelConfig, SampleInput};
use emofuse_core::parallel;
use rand::Rng;

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed, "bench");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let x = random(&[8, 64, 64, 3], 1).with_requires_grad(true);
    let k = random(&[3, 3, 3, 32], 2).with_requires_grad(true);
    let ones = vec![1.0; 8 * 64 * 64 * 32];
    let mut g = c.benchmark_group("conv2d_forward_backward");
    for (name, on) in MODES {
        parallel::set_enabled(on);
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut t = Tape::new();
                let xi = t.leaf(&x);
                let ki = t.leaf(&k);
                let y = t.conv2d(xi, ki, None, Padding::Same).unwrap();
                let s = t.weighted_sum(y, &ones).unwrap();
                t.backward(s).unwrap()
            })
        });
    }
    parallel::set_enabled(true);
    g.finish();
}

fn inputs(cfg: &ModelConfig, n: usize) -> Vec<SampleInput> {
    (0..n)
        .map(|i| SampleInput {
            word_ids: Vec::new(),
            pos_ids: (0..40).map(|j| (j < 9).then_some((i + j) % 12)).collect(),
            mfsc: Some(Arc::new(MfscMap::new(random(&[3, 64, 64, 3], i as u64)).unwrap())),
            lld: Some(random(&[cfg.lld_dim], 100 + i as u64).data().to_vec()),
        })
        .collect()
}

fn eval_logits(c: &mut Criterion) {
    let cfg = ModelConfig {
        branches: "pos+mfsc+lld".parse::<BranchSet>().unwrap(),
        scale: 1.0 / 8.0,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg.clone(), None, 3).unwrap();
    let data = inputs(&cfg, 64);
    let batch: Vec<&SampleInput> = data.iter().collect();
    let mut g = c.benchmark_group("eval_logits_64");
    g.sample_size(10);
    for (name, on) in MODES {
        parallel::set_enabled(on);
        g.bench_function(name, |b| b.iter(|| model.eval_logits(&batch).unwrap()));
    }
    parallel::set_enabled(true);
    g.finish();
}

fn features(c: &mut Criterion) {
    let dsp = DspConfig::default();
    let lld = LldConfig::default();
    let clips: Vec<AudioClip> = (0..8)
        .map(|i| {
            let f0 = 120.0 + 20.0 * i as f64;
            let s = (0..24_000)
                .map(|n| {
                    let t = n as f64 / 16_000.0;
                    0.5 * (2.0 * PI * f0 * t).sin() + 0.2 * (4.0 * PI * f0 * t).sin()
                })
                .collect();
            AudioClip::new(s, 16_000).unwrap()
        })
        .collect();
    let mut g = c.benchmark_group("features_8_clips");
    g.sample_size(10);
    for (name, on) in MODES {
        parallel::set_enabled(on);
        g.bench_with_input(BenchmarkId::new("mfsc", name), &clips, |b, clips| {
            b.iter(|| parallel::map(clips.len(), |i| mfsc_map(&clips[i], &dsp).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("lld", name), &clips, |b, clips| {
            b.iter(|| parallel::map(clips.len(), |i| extract_lld(&clips[i], &dsp, &lld).unwrap()))
        });
    }
    parallel::set_enabled(true);
    g.finish();
}

criterion_group!(benches, conv, eval_logits, features);
criterion_main!(benches);
