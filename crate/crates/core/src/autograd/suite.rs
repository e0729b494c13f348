//! The standard finite-difference suite over every differentiable operation.

use rand::seq::SliceRandom;
use rand::Rng;

use super::gradcheck::{grad_check, projection, GradCheckReport};
use super::init::{derive_seed, stream, RngStream};
use super::ops::Padding;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::Result;

/// Step for central differences.
pub const STEP: f64 = 1e-5;

/// Operations the suite covers, in report order. The first eight are the
/// model's building blocks; the rest are the glue around them.
pub const OPS: [&str; 14] = [
    "conv2d",
    "max_pool2d",
    "dense",
    "relu",
    "batch_norm",
    "lstm_step",
    "softmax_cross_entropy",
    "embedding",
    "max_over_time",
    "sigmoid",
    "tanh",
    "concat",
    "gather_select",
    "dropout",
];

#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub op: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data)
        .expect("sizes match")
        .with_requires_grad(true)
}

/// Values bounded away from zero, so ReLU is probed off its kink.
fn off_kink(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let mut t = uniform(shape, 0.1, 1.0, rng);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Distinct values at least 0.05 apart, so max selections are stable under
/// the finite-difference step.
fn well_separated(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals)
        .expect("sizes match")
        .with_requires_grad(true)
}

fn project(tape: &mut Tape, y: NodeId, seed: u64) -> Result<NodeId> {
    let w = projection(tape.value(y).len(), seed);
    tape.weighted_sum(y, &w)
}

/// Runs one operation's check at one seed.
pub fn check_op(op: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = stream(derive_seed(seed, &[op.len() as u64]), op);
    let h = STEP;
    match op {
        "conv2d" => {
            let padding = if seed.is_multiple_of(2) {
                Padding::Same
            } else {
                Padding::Valid
            };
            let inputs = [
                uniform(&[2, 5, 4, 2], -1.0, 1.0, &mut rng),
                uniform(&[3, 3, 2, 3], -1.0, 1.0, &mut rng),
                uniform(&[3], -1.0, 1.0, &mut rng),
            ];
            grad_check(
                |t, ids| {
                    let y = t.conv2d(ids[0], ids[1], Some(ids[2]), padding)?;
                    project(t, y, seed)
                },
                &inputs,
                h,
            )
        }
        "max_pool2d" => grad_check(
            |t, ids| {
                let y = t.max_pool2d(ids[0])?;
                project(t, y, seed)
            },
            &[well_separated(&[2, 4, 6, 2], &mut rng)],
            h,
        ),
        "dense" => {
            let inputs = [
                uniform(&[3, 4], -1.0, 1.0, &mut rng),
                uniform(&[4, 5], -1.0, 1.0, &mut rng),
                uniform(&[5], -1.0, 1.0, &mut rng),
            ];
            grad_check(
                |t, ids| {
                    let y = t.dense(ids[0], ids[1], Some(ids[2]))?;
                    project(t, y, seed)
                },
                &inputs,
                h,
            )
        }
        "relu" => grad_check(
            |t, ids| {
                let y = t.relu(ids[0])?;
                project(t, y, seed)
            },
            &[off_kink(&[4, 6], &mut rng)],
            h,
        ),
        "batch_norm" => {
            let inputs = [
                uniform(&[5, 3], -2.0, 2.0, &mut rng),
                uniform(&[3], 0.5, 1.5, &mut rng),
                uniform(&[3], -0.5, 0.5, &mut rng),
            ];
            grad_check(
                |t, ids| {
                    let (y, _) = t.batch_norm(ids[0], ids[1], ids[2], super::BatchNormMode::Train, 1e-5)?;
                    project(t, y, seed)
                },
                &inputs,
                h,
            )
        }
        "lstm_step" => {
            let (b, i, u) = (2, 3, 4);
            let inputs = [
                uniform(&[b, i], -1.0, 1.0, &mut rng),
                uniform(&[b, u], -1.0, 1.0, &mut rng),
                uniform(&[b, u], -1.0, 1.0, &mut rng),
                uniform(&[i, 4 * u], -0.5, 0.5, &mut rng),
                uniform(&[u, 4 * u], -0.5, 0.5, &mut rng),
                uniform(&[4 * u], -0.5, 0.5, &mut rng),
            ];
            grad_check(
                |t, ids| {
                    let (h1, c1) = t.lstm_step(ids[0], ids[1], ids[2], ids[3], ids[4], ids[5])?;
                    let both = t.concat(&[h1, c1])?;
                    project(t, both, seed)
                },
                &inputs,
                h,
            )
        }
        "softmax_cross_entropy" => {
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            let logits = uniform(&[4, 5], -2.0, 2.0, &mut rng);
            // Composed softmax then cross-entropy, and the fused form.
            let composed = grad_check(
                |t, ids| {
                    let p = t.softmax(ids[0])?;
                    t.cross_entropy(p, &labels, 1e-300)
                },
                std::slice::from_ref(&logits),
                h,
            )?;
            let fused = grad_check(|t, ids| t.softmax_cross_entropy(ids[0], &labels), &[logits], h)?;
            Ok(worst(composed, fused))
        }
        "embedding" => {
            let ids: Vec<Option<usize>> = (0..8)
                .map(|k| if k % 5 == 4 { None } else { Some(rng.random_range(0..6)) })
                .collect();
            grad_check(
                |t, n| {
                    let y = t.embedding(n[0], &ids, &[2, 4])?;
                    project(t, y, seed)
                },
                &[uniform(&[6, 3], -1.0, 1.0, &mut rng)],
                h,
            )
        }
        "max_over_time" => grad_check(
            |t, ids| {
                let y = t.max_over_time(ids[0])?;
                project(t, y, seed)
            },
            &[well_separated(&[2, 5, 3], &mut rng)],
            h,
        ),
        "sigmoid" | "tanh" => {
            let x = uniform(&[3, 4], -3.0, 3.0, &mut rng);
            grad_check(
                |t, ids| {
                    let y = if op == "sigmoid" {
                        t.sigmoid(ids[0])?
                    } else {
                        t.tanh(ids[0])?
                    };
                    project(t, y, seed)
                },
                &[x],
                h,
            )
        }
        "concat" => {
            let inputs = [
                uniform(&[2, 3], -1.0, 1.0, &mut rng),
                uniform(&[2, 2], -1.0, 1.0, &mut rng),
                uniform(&[2, 3], -1.0, 1.0, &mut rng),
            ];
            grad_check(
                |t, ids| {
                    let y = t.concat(&[ids[0], ids[1]])?;
                    let y = t.reshape(y, vec![2, 5])?;
                    let s = t.slice_last(y, 1, 3)?;
                    let z = t.mul(s, ids[2])?;
                    let z = t.add(z, s)?;
                    project(t, z, seed)
                },
                &inputs,
                h,
            )
        }
        "gather_select" => {
            let inputs = [
                uniform(&[4, 3], -1.0, 1.0, &mut rng),
                uniform(&[3, 3], -1.0, 1.0, &mut rng),
            ];
            grad_check(
                |t, ids| {
                    let g = t.gather_rows(ids[0], &[3, 0, 3])?;
                    let s = t.select_rows(&[true, false, true], g, ids[1])?;
                    project(t, s, seed)
                },
                &inputs,
                h,
            )
        }
        "dropout" => grad_check(
            |t, ids| {
                let mut mask_rng = stream(seed, "suite/dropout");
                let y = t.dropout(ids[0], 0.4, true, &mut mask_rng)?;
                project(t, y, seed)
            },
            &[uniform(&[3, 5], -1.0, 1.0, &mut rng)],
            h,
        ),
        other => Err(crate::Error::InvalidArgument(format!(
            "no gradient check for `{other}`"
        ))),
    }
}

fn worst(a: GradCheckReport, b: GradCheckReport) -> GradCheckReport {
    GradCheckReport {
        max_rel_error: a.max_rel_error.max(b.max_rel_error),
        max_abs_error: a.max_abs_error.max(b.max_abs_error),
        coordinates: a.coordinates + b.coordinates,
    }
}

/// Every operation in [`OPS`] at every seed.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::with_capacity(OPS.len() * seeds.len());
    for op in OPS {
        for &seed in seeds {
            rows.push(SuiteRow {
                op,
                seed,
                report: check_op(op, seed)?,
            });
        }
    }
    Ok(rows)
}
