use proptest::prelude::*;
use rand::Rng;

use super::gradcheck::{grad_check, projection};
use super::init::stream;
use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn var(shape: &[usize], data: &[f64]) -> Tensor {
    t(shape, data).with_requires_grad(true)
}

fn random(shape: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "test-data");
    (0..shape.iter().product())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

/// Sliding-window sum oracle for a single-channel valid convolution.
fn brute_conv(input: &[Vec<f64>], kernel: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (h, w) = (input.len(), input[0].len());
    let (kh, kw) = (kernel.len(), kernel[0].len());
    (0..=h - kh)
        .map(|y| {
            (0..=w - kw)
                .map(|x| {
                    let mut s = 0.0;
                    for i in 0..kh {
                        for j in 0..kw {
                            s += input[y + i][x + j] * kernel[i][j];
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

#[test]
fn conv2d_identity_kernel() {
    let mut tape = Tape::new();
    let data: Vec<f64> = (1..=9).map(f64::from).collect();
    let x = tape.leaf(&t(&[3, 3, 1], &data));
    let k = tape.leaf(&t(&[1, 1, 1, 1], &[1.0]));
    let b = tape.leaf(&t(&[1], &[0.0]));
    let y = tape.conv2d(x, k, Some(b), Padding::Valid).unwrap();
    assert_eq!(tape.shape(y), &[3, 3, 1]);
    assert_eq!(tape.value(y), &data[..]);
}

#[test]
fn conv2d_matches_sliding_window_sums() {
    let input = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
    let kernel = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
    let want = brute_conv(&input, &kernel);
    assert_eq!(want, vec![vec![12.0, 16.0], vec![24.0, 28.0]]);

    let mut tape = Tape::new();
    let flat: Vec<f64> = input.concat();
    let x = tape.leaf(&t(&[3, 3, 1], &flat));
    let k = tape.leaf(&t(&[2, 2, 1, 1], &[1.0; 4]));
    let y = tape.conv2d(x, k, None, Padding::Valid).unwrap();
    assert_eq!(tape.value(y), &want.concat()[..]);
}

#[test]
fn conv2d_zero_input_gives_zero_output() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(&[2, 5, 5, 3]));
    let k = tape.leaf(&t(&[3, 3, 3, 4], &random(&[3, 3, 3, 4], 1)));
    let y = tape.conv2d(x, k, None, Padding::Same).unwrap();
    assert_eq!(tape.shape(y), &[2, 5, 5, 4]);
    assert!(tape.value(y).iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(&[4, 4, 2]));
    let k = tape.leaf(&Tensor::zeros(&[3, 3, 3, 1]));
    assert!(matches!(
        tape.conv2d(x, k, None, Padding::Same),
        Err(crate::Error::Shape { .. })
    ));
}

#[test]
fn conv2d_same_padding_matches_zero_padded_valid() {
    // Same padding on 4x4 with a 3x3 kernel equals a valid conv over the
    // explicitly zero-padded 6x6 input.
    let data = random(&[4, 4], 3);
    let kern = random(&[3, 3], 4);
    let mut padded = vec![vec![0.0; 6]; 6];
    for y in 0..4 {
        for x in 0..4 {
            padded[y + 1][x + 1] = data[y * 4 + x];
        }
    }
    let kernel: Vec<Vec<f64>> = kern.chunks(3).map(<[f64]>::to_vec).collect();
    let want = brute_conv(&padded, &kernel).concat();

    let mut tape = Tape::new();
    let x = tape.leaf(&t(&[4, 4, 1], &data));
    let k = tape.leaf(&t(&[3, 3, 1, 1], &kern));
    let y = tape.conv2d(x, k, None, Padding::Same).unwrap();
    for (a, b) in tape.value(y).iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn max_pool_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(&t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.max_pool2d(x).unwrap();
    assert_eq!(tape.value(y), &[4.0]);

    let c = tape.leaf(&Tensor::filled(&[4, 6, 2], 2.5));
    let y = tape.max_pool2d(c).unwrap();
    assert_eq!(tape.shape(y), &[2, 3, 2]);
    assert!(tape.value(y).iter().all(|&v| v == 2.5));

    let big = tape.leaf(&Tensor::zeros(&[64, 64, 3]));
    let y = tape.max_pool2d(big).unwrap();
    assert_eq!(tape.shape(y), &[32, 32, 3]);

    let odd = tape.leaf(&Tensor::zeros(&[1, 5, 3, 1]));
    let y = tape.max_pool2d(odd).unwrap();
    assert_eq!(tape.shape(y), &[1, 3, 2, 1]);
}

#[test]
fn max_pool_tie_routes_gradient_to_first_element() {
    let mut tape = Tape::new();
    let x = tape.leaf(&var(&[2, 2, 1], &[5.0, 5.0, 5.0, 5.0]));
    let y = tape.max_pool2d(x).unwrap();
    let s = tape.weighted_sum(y, &[1.0]).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn dense_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
    // [N x M] = [2 x 3]: column j of the output is x·W[:, j].
    let w = tape.leaf(&t(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]));
    let b0 = tape.leaf(&Tensor::zeros(&[3]));
    let y = tape.dense(x, w, Some(b0)).unwrap();
    assert_eq!(tape.value(y), &[1.0, 2.0, 3.0]);

    let eye = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let y = tape.dense(x, eye, None).unwrap();
    assert_eq!(tape.value(y), &[1.0, 2.0]);

    let zero = tape.leaf(&Tensor::zeros(&[2]));
    let b = tape.leaf(&t(&[3], &[0.5, -1.0, 2.0]));
    let y = tape.dense(zero, w, Some(b)).unwrap();
    assert_eq!(tape.value(y), &[0.5, -1.0, 2.0]);

    let bad = tape.leaf(&Tensor::zeros(&[3]));
    assert!(tape.dense(bad, w, None).is_err());
}

#[test]
fn relu_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(&var(&[3], &[-1.0, 0.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);
    let s = tape.weighted_sum(y, &[1.0, 1.0, 1.0]).unwrap();
    let g = tape.backward(s).unwrap();
    // Subgradient at exactly 0 is 0.
    assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0]);

    let neg = tape.leaf(&t(&[4], &[-1.0, -2.0, -0.1, -9.0]));
    let y = tape.relu(neg).unwrap();
    assert!(tape.value(y).iter().all(|&v| v == 0.0));
}

#[test]
fn relu_gradient_at_three_matches_finite_difference() {
    let x = var(&[1], &[3.0]);
    let r = grad_check(
        |tp, ids| {
            let y = tp.relu(ids[0])?;
            tp.weighted_sum(y, &[1.0])
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-9);
    let mut tape = Tape::new();
    let x = tape.leaf(&var(&[1], &[3.0]));
    let y = tape.relu(x).unwrap();
    let s = tape.weighted_sum(y, &[1.0]).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &[1.0]);
}

fn column_stats(data: &[f64], f: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = data.len() / f;
    let mut mean = vec![0.0; f];
    let mut var = vec![0.0; f];
    for r in data.chunks(f) {
        for j in 0..f {
            mean[j] += r[j] / rows as f64;
        }
    }
    for r in data.chunks(f) {
        for j in 0..f {
            var[j] += (r[j] - mean[j]).powi(2) / rows as f64;
        }
    }
    (mean, var)
}

#[test]
fn batch_norm_train_standardizes() {
    let data = random(&[16, 3], 9);
    let mut tape = Tape::new();
    let x = tape.leaf(&t(&[16, 3], &data));
    let g = tape.leaf(&Tensor::filled(&[3], 1.0));
    let b = tape.leaf(&Tensor::zeros(&[3]));
    let (y, stats) = tape.batch_norm(x, g, b, BatchNormMode::Train, 1e-5).unwrap();
    let (mean, var) = column_stats(tape.value(y), 3);
    for j in 0..3 {
        assert!(mean[j].abs() < 1e-6);
        assert!((var[j] - 1.0).abs() < 1e-4);
    }
    let (m0, v0) = column_stats(&data, 3);
    let stats = stats.unwrap();
    assert_eq!(stats.mean.len(), 3);
    for j in 0..3 {
        assert!((stats.mean[j] - m0[j]).abs() < 1e-12);
        assert!((stats.var[j] - v0[j]).abs() < 1e-12);
    }
}

#[test]
fn batch_norm_constant_batch_outputs_beta() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::filled(&[4, 2], 7.0));
    let g = tape.leaf(&Tensor::filled(&[2], 2.0));
    let b = tape.leaf(&Tensor::filled(&[2], 3.0));
    let (y, _) = tape.batch_norm(x, g, b, BatchNormMode::Train, 1e-5).unwrap();
    assert!(tape.value(y).iter().all(|&v| (v - 3.0).abs() < 1e-12));
}

#[test]
fn batch_norm_eval_with_batch_stats_matches_train() {
    let data = random(&[8, 4], 11);
    let gamma = random(&[4], 12);
    let beta = random(&[4], 13);
    let mut tape = Tape::new();
    let x = tape.leaf(&t(&[8, 4], &data));
    let g = tape.leaf(&t(&[4], &gamma));
    let b = tape.leaf(&t(&[4], &beta));
    let (yt, stats) = tape.batch_norm(x, g, b, BatchNormMode::Train, 1e-5).unwrap();
    let stats = stats.unwrap();
    let (ye, none) = tape
        .batch_norm(
            x,
            g,
            b,
            BatchNormMode::Eval {
                mean: &stats.mean,
                var: &stats.var,
            },
            1e-5,
        )
        .unwrap();
    assert!(none.is_none());
    for (a, b) in tape.value(yt).iter().zip(tape.value(ye)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn batch_norm_single_row_train_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(&[1, 3]));
    let g = tape.leaf(&Tensor::filled(&[3], 1.0));
    let b = tape.leaf(&Tensor::zeros(&[3]));
    assert!(tape.batch_norm(x, g, b, BatchNormMode::Train, 1e-5).is_err());
}

#[test]
fn dropout_identity_cases() {
    let mut tape = Tape::new();
    let mut rng = stream(1, "dropout");
    let x = tape.leaf(&t(&[3], &[1.0, -2.0, 3.0]));
    assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.0, false, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.7, false, &mut rng).unwrap(), x);
    assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
}

#[test]
fn dropout_is_unbiased_in_expectation() {
    let mut tape = Tape::new();
    let mut rng = stream(42, "dropout");
    let x = tape.leaf(&Tensor::filled(&[10_000], 1.0));
    let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let mean = tape.value(y).iter().sum::<f64>() / 10_000.0;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    assert!(tape.value(y).iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn lstm_with_zero_weights_stays_at_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(&t(&[1, 2], &[0.3, -0.7]));
    let mut h = tape.leaf(&Tensor::zeros(&[1, 3]));
    let mut c = tape.leaf(&Tensor::zeros(&[1, 3]));
    let wih = tape.leaf(&Tensor::zeros(&[2, 12]));
    let whh = tape.leaf(&Tensor::zeros(&[3, 12]));
    let b = tape.leaf(&Tensor::zeros(&[12]));
    for _ in 0..3 {
        (h, c) = tape.lstm_step(x, h, c, wih, whh, b).unwrap();
        assert!(tape.value(h).iter().all(|&v| v == 0.0));
        assert!(tape.value(c).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn lstm_scalar_cell_matches_gate_equations() {
    // One input, one unit. Gate order: input, forget, candidate, output.
    let (x, h0, c0) = (0.5, -0.2, 0.3);
    let wi = [0.4, -0.6, 0.9, 0.1];
    let wh = [0.2, 0.3, -0.5, 0.7];
    let bias = [0.05, 1.0, -0.1, 0.2];
    let s = |v: f64| 1.0 / (1.0 + (-v).exp());
    let i = s(wi[0] * x + wh[0] * h0 + bias[0]);
    let f = s(wi[1] * x + wh[1] * h0 + bias[1]);
    let g = (wi[2] * x + wh[2] * h0 + bias[2]).tanh();
    let o = s(wi[3] * x + wh[3] * h0 + bias[3]);
    let c_want = f * c0 + i * g;
    let h_want = o * c_want.tanh();

    let mut tape = Tape::new();
    let xn = tape.leaf(&t(&[1, 1], &[x]));
    let hn = tape.leaf(&t(&[1, 1], &[h0]));
    let cn = tape.leaf(&t(&[1, 1], &[c0]));
    let wih = tape.leaf(&t(&[1, 4], &wi));
    let whh = tape.leaf(&t(&[1, 4], &wh));
    let b = tape.leaf(&t(&[4], &bias));
    let (h, c) = tape.lstm_step(xn, hn, cn, wih, whh, b).unwrap();
    assert!((tape.value(c)[0] - c_want).abs() < 1e-14);
    assert!((tape.value(h)[0] - h_want).abs() < 1e-14);
}

#[test]
fn lstm_output_depends_on_sequence_length() {
    let (i, u) = (3, 4);
    let run = |steps: usize| {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, i], &random(&[i], 20)));
        let wih = tape.leaf(&t(&[i, 4 * u], &random(&[i, 4 * u], 21)));
        let whh = tape.leaf(&t(&[u, 4 * u], &random(&[u, 4 * u], 22)));
        let b = tape.leaf(&t(&[4 * u], &random(&[4 * u], 23)));
        let mut h = tape.leaf(&Tensor::zeros(&[1, u]));
        let mut c = tape.leaf(&Tensor::zeros(&[1, u]));
        for _ in 0..steps {
            (h, c) = tape.lstm_step(x, h, c, wih, whh, b).unwrap();
        }
        tape.value(h).to_vec()
    };
    assert_ne!(run(1), run(3));
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let u = tape.leaf(&Tensor::filled(&[4], 0.3));
    let p = tape.softmax(u).unwrap();
    assert!(tape.value(p).iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let z = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
    let p = tape.softmax(z).unwrap();
    let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
    let sum: f64 = e.iter().sum();
    for (got, ei) in tape.value(p).iter().zip(&e) {
        assert!((got - ei / sum).abs() < 1e-15);
    }
    let rounded: Vec<f64> = tape.value(p).iter().map(|v| (v * 1e4).round() / 1e4).collect();
    assert_eq!(rounded, vec![0.0900, 0.2447, 0.6652]);

    let shifted = tape.leaf(&t(&[3], &[101.0, 102.0, 103.0]));
    let q = tape.softmax(shifted).unwrap();
    for (a, b) in tape.value(p).iter().zip(tape.value(q)) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn softmax_survives_huge_logits() {
    let mut tape = Tape::new();
    let z = tape.leaf(&t(&[3], &[1e4, 0.0, -1e4]));
    let p = tape.softmax(z).unwrap();
    assert!(tape.value(p).iter().all(|v| v.is_finite()));
    assert!((tape.value(p)[0] - 1.0).abs() < 1e-15);
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let one_hot = tape.leaf(&t(&[1, 5], &[0.0, 0.0, 1.0, 0.0, 0.0]));
    let l = tape.cross_entropy(one_hot, &[2], 1e-12).unwrap();
    assert!(tape.value(l)[0].abs() < 1e-12);

    let uniform = tape.leaf(&Tensor::filled(&[1, 5], 0.2));
    for label in 0..5 {
        let l = tape.cross_entropy(uniform, &[label], 1e-12).unwrap();
        assert!((tape.value(l)[0] - 5f64.ln()).abs() < 1e-12);
    }
    assert!((5f64.ln() - 1.60944).abs() < 1e-5);
    assert!(tape.cross_entropy(uniform, &[5], 1e-12).is_err());
}

#[test]
fn softmax_cross_entropy_gradient_is_p_minus_y() {
    let mut tape = Tape::new();
    let z = tape.leaf(&var(&[1, 2], &[0.0, 0.0]));
    let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
    assert!((tape.value(l)[0] - 2f64.ln()).abs() < 1e-15);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(z).unwrap(), &[-0.5, 0.5]);
}

#[test]
fn concat_examples() {
    let mut tape = Tape::new();
    let parts: Vec<NodeId> = (0..4)
        .map(|i| tape.leaf(&var(&[1024], &vec![i as f64; 1024])))
        .collect();
    let y = tape.concat(&parts).unwrap();
    assert_eq!(tape.shape(y), &[4096]);
    assert_eq!(tape.value(y)[1024], 1.0);
    let s = tape.weighted_sum(y, &vec![1.0; 4096]).unwrap();
    let g = tape.backward(s).unwrap();
    for p in &parts {
        assert_eq!(g.get(*p).unwrap(), &vec![1.0; 1024][..]);
    }

    let single = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
    let y = tape.concat(&[single]).unwrap();
    assert_eq!(tape.value(y), &[1.0, 2.0, 3.0]);
    assert!(tape.concat(&[]).is_err());
}

#[test]
fn backward_is_deterministic() {
    let build = || {
        let mut tape = Tape::new();
        let x = tape.leaf(&var(&[2, 4, 4, 2], &random(&[2, 4, 4, 2], 30)));
        let k = tape.leaf(&var(&[3, 3, 2, 3], &random(&[3, 3, 2, 3], 31)));
        let y = tape.conv2d(x, k, None, Padding::Same).unwrap();
        let y = tape.relu(y).unwrap();
        let s = tape.weighted_sum(y, &projection(96, 1)).unwrap();
        (tape, s, x, k)
    };
    let (tape, s, x, k) = build();
    let g1 = tape.backward(s).unwrap();
    let g2 = tape.backward(s).unwrap();
    assert_eq!(g1.get(x), g2.get(x));
    assert_eq!(g1.get(k), g2.get(k));
    let (tape2, s2, x2, _) = build();
    assert_eq!(g1.get(x), tape2.backward(s2).unwrap().get(x2));
}

#[test]
fn parallel_and_sequential_paths_agree_bitwise() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(&var(&[5, 6, 6, 2], &random(&[5, 6, 6, 2], 40)));
        let k = tape.leaf(&var(&[3, 3, 2, 4], &random(&[3, 3, 2, 4], 41)));
        let w = tape.leaf(&var(&[144, 3], &random(&[144, 3], 42)));
        let y = tape.conv2d(x, k, None, Padding::Same).unwrap();
        let y = tape.reshape(y, vec![5, 144]).unwrap();
        let z = tape.dense(y, w, None).unwrap();
        let s = tape.weighted_sum(z, &projection(15, 2)).unwrap();
        let g = tape.backward(s).unwrap();
        (
            g.get(x).unwrap().to_vec(),
            g.get(k).unwrap().to_vec(),
            g.get(w).unwrap().to_vec(),
        )
    };
    crate::parallel::set_enabled(false);
    let seq = run();
    crate::parallel::set_enabled(true);
    let par = run();
    assert_eq!(seq, par);
}

#[test]
fn trap_reports_non_finite_op() {
    let mut tape = Tape::new().with_trap_non_finite(true);
    let a = tape.leaf(&t(&[1], &[f64::MAX]));
    let err = tape.add(a, a).unwrap_err();
    assert!(matches!(err, crate::Error::NonFinite { op: "add" }));
}

#[test]
fn gather_and_select_rows_route_gradients() {
    let mut tape = Tape::new();
    let x = tape.leaf(&var(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let g = tape.gather_rows(x, &[2, 0, 2]).unwrap();
    assert_eq!(tape.value(g), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
    let other = tape.leaf(&var(&[3, 2], &[0.0; 6]));
    let sel = tape.select_rows(&[true, false, true], g, other).unwrap();
    assert_eq!(tape.value(sel), &[5.0, 6.0, 0.0, 0.0, 5.0, 6.0]);
    let s = tape.weighted_sum(sel, &[1.0; 6]).unwrap();
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
    assert_eq!(grads.get(other).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        logits in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let mut tape = Tape::new();
        let k = logits.len();
        let z = tape.leaf(&t(&[k], &logits));
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let zs = tape.leaf(&t(&[k], &shifted));
        let p = tape.softmax(z).unwrap();
        let q = tape.softmax(zs).unwrap();
        let sum: f64 = tape.value(p).iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        for (a, b) in tape.value(p).iter().zip(tape.value(q)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv2d_is_linear_in_its_input(
        seed in 0u64..1000,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let shape = [2, 5, 4, 2];
        let xs = random(&shape, seed);
        let ys = random(&shape, seed + 1);
        let kern = random(&[3, 3, 2, 3], seed + 2);
        let combo: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
        let mut tape = Tape::new();
        let k = tape.leaf(&t(&[3, 3, 2, 3], &kern));
        let cx = tape.leaf(&t(&shape, &xs));
        let cy = tape.leaf(&t(&shape, &ys));
        let cc = tape.leaf(&t(&shape, &combo));
        let ox = tape.conv2d(cx, k, None, Padding::Same).unwrap();
        let oy = tape.conv2d(cy, k, None, Padding::Same).unwrap();
        let oc = tape.conv2d(cc, k, None, Padding::Same).unwrap();
        for i in 0..tape.value(oc).len() {
            let want = a * tape.value(ox)[i] + b * tape.value(oy)[i];
            prop_assert!((tape.value(oc)[i] - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn max_pool_backward_conserves_gradient_mass(
        seed in 0u64..1000,
        h in 1usize..7,
        w in 1usize..7,
    ) {
        let shape = [2, h, w, 2];
        let mut tape = Tape::new();
        let x = tape.leaf(&var(&shape, &random(&shape, seed)));
        let y = tape.max_pool2d(x).unwrap();
        let upstream = projection(tape.value(y).len(), seed);
        let s = tape.weighted_sum(y, &upstream).unwrap();
        let g = tape.backward(s).unwrap();
        let mass_in: f64 = g.get(x).unwrap().iter().sum();
        let mass_out: f64 = upstream.iter().sum();
        prop_assert!((mass_in - mass_out).abs() <= 1e-12);
    }
}
