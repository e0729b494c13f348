use std::sync::Arc;

use rand::Rng;

use super::*;
use crate::audio::MfscMap;
use crate::autograd::init::stream;
use crate::autograd::{AdamConfig, Tensor};
use crate::error::Error;
use crate::model::{Branch, BranchSet, Model, ModelConfig, SampleInput};
use crate::text::tag_ids;
use crate::text::Tag;

const D: usize = 8;

fn lld_config(branches: BranchSet) -> ModelConfig {
    ModelConfig {
        branches,
        scale: 1.0 / 8.0,
        lld_dim: D,
        ..ModelConfig::default()
    }
}

/// Class-dependent LLD vectors (`signal` scales the class offset) plus a
/// POS sequence keyed to the class.
fn toy_dataset(n: usize, signal: f64, seed: u64) -> Dataset {
    let mut rng = stream(seed, "toy");
    let examples = (0..n)
        .map(|i| {
            let label = i % 5;
            let lld: Vec<f64> = (0..D)
                .map(|j| rng.random::<f64>() + if j % 5 == label { signal } else { 0.0 })
                .collect();
            let tags = vec![Tag::ALL[label]; 3 + label];
            Example {
                id: format!("s{i:03}"),
                label,
                input: SampleInput {
                    word_ids: Vec::new(),
                    pos_ids: tag_ids(&tags),
                    mfsc: None,
                    lld: Some(lld),
                },
            }
        })
        .collect();
    Dataset { examples, words: None }
}

fn refs(inputs: &[SampleInput]) -> Vec<&SampleInput> {
    inputs.iter().collect()
}

fn plan(regime: Regime, epochs: usize) -> TrainingPlan {
    TrainingPlan {
        regime,
        epochs,
        batch_size: 8,
        seed: 11,
        ..TrainingPlan::default()
    }
}

#[test]
fn batches_cover_everything_and_merge_a_trailing_singleton() {
    let mut rng = stream(0, "b");
    let sizes = |n, bs, rng: &mut _| make_batches(n, bs, rng).iter().map(Vec::len).collect::<Vec<_>>();
    assert_eq!(sizes(33, 32, &mut rng), vec![33]);
    assert_eq!(sizes(65, 32, &mut rng), vec![32, 33]);
    assert_eq!(sizes(64, 32, &mut rng), vec![32, 32]);
    assert_eq!(sizes(10, 4, &mut rng), vec![4, 4, 2]);
    let mut all: Vec<usize> = make_batches(65, 32, &mut rng).concat();
    all.sort_unstable();
    assert_eq!(all, (0..65).collect::<Vec<_>>());
}

#[test]
fn plan_validation_names_the_key() {
    let bad = TrainingPlan {
        batch_size: 1,
        ..TrainingPlan::default()
    };
    match bad.validate() {
        Err(Error::Config { key, .. }) => assert_eq!(key, "batch_size"),
        other => panic!("{other:?}"),
    }
    let bad = TrainingPlan {
        epochs: 0,
        ..TrainingPlan::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "epochs"));
    assert_eq!("Separate".parse::<Regime>().unwrap(), Regime::Separate);
    assert!("joint".parse::<Regime>().is_err());
}

#[test]
fn together_is_deterministic_and_learns() {
    let data = toy_dataset(40, 2.0, 1);
    let (inputs, _) = data.fold_inputs(&(0..40).collect::<Vec<_>>()).unwrap();
    let x = refs(&inputs);
    let y = data.labels();
    let cfg = lld_config(BranchSet::single(Branch::Lld));
    let run = || {
        let mut m = Model::new(cfg.clone(), None, 3).unwrap();
        let r = train(&mut m, &x, &y, &plan(Regime::Together, 15), None).unwrap();
        (r, m.params.checksum(""))
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_eq!(a.history.len(), 15);
    assert!((a.initial_loss - 5f64.ln()).abs() < 0.15, "{}", a.initial_loss);
    let last = a.history.last().unwrap().loss;
    assert!(last < a.history[0].loss, "{:?}", a.history);
    assert!(a.train_accuracy > 0.5, "{}", a.train_accuracy);
}

#[test]
fn target_accuracy_stops_early() {
    let data = toy_dataset(20, 5.0, 2);
    let (inputs, _) = data.fold_inputs(&(0..20).collect::<Vec<_>>()).unwrap();
    let mut m = Model::new(lld_config(BranchSet::single(Branch::Lld)), None, 1).unwrap();
    let p = TrainingPlan {
        target_train_accuracy: Some(1.0),
        ..plan(Regime::Together, 200)
    };
    let r = train(&mut m, &refs(&inputs), &data.labels(), &p, None).unwrap();
    assert_eq!(r.train_accuracy, 1.0);
    assert!(r.epochs_run < 200);
    assert_eq!(r.history.len(), r.epochs_run);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let mut data = toy_dataset(10, 1.0, 3);
    data.examples[4].input.lld.as_mut().unwrap()[0] = f64::NAN;
    let inputs: Vec<SampleInput> = data.examples.iter().map(|e| e.input.clone()).collect();
    let mut m = Model::new(lld_config(BranchSet::single(Branch::Lld)), None, 1).unwrap();
    match train(&mut m, &refs(&inputs), &data.labels(), &plan(Regime::Together, 2), None) {
        Err(Error::Diverged(msg)) => assert!(msg.contains("epoch 1, batch"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn separate_freezes_branches_and_moves_fusion() {
    let data = toy_dataset(30, 1.0, 4);
    let (inputs, _) = data.fold_inputs(&(0..30).collect::<Vec<_>>()).unwrap();
    let cfg = lld_config(BranchSet::new(&[Branch::Pos, Branch::Lld]).unwrap());
    let mut m = Model::new(cfg, None, 5).unwrap();
    let kinds_before: Vec<_> = m.params.iter().map(|(n, p)| (n.clone(), p.kind)).collect();
    let r = train(&mut m, &refs(&inputs), &data.labels(), &plan(Regime::Separate, 4), None).unwrap();
    let (before, after) = r.branch_checksums.clone().unwrap();
    assert_eq!(before, after);
    assert_eq!(r.fusion_checksums.len(), 4);
    for w in r.fusion_checksums.windows(2) {
        assert_ne!(w[0], w[1]);
    }
    assert!(m.params.names().all(|n| !n.starts_with("aux/")));
    let kinds_after: Vec<_> = m.params.iter().map(|(n, p)| (n.clone(), p.kind)).collect();
    assert_eq!(kinds_before, kinds_after);
    let splits: Vec<&str> = r.history.iter().map(|h| h.split.as_str()).collect();
    assert_eq!(splits.iter().filter(|s| **s == "branches").count(), 4);
    assert_eq!(splits.iter().filter(|s| **s == "fusion").count(), 4);
    // Stage 1 sums one cross-entropy per branch.
    assert!((r.initial_loss - 2.0 * 5f64.ln()).abs() < 0.3, "{}", r.initial_loss);
}

#[test]
fn both_regimes_report_the_same_structure() {
    let data = toy_dataset(25, 1.0, 6);
    let folds = make_folds(25, 5, Some(&data.labels()), 1).unwrap();
    let cfg = lld_config(BranchSet::single(Branch::Lld));
    let a = run_fold(&data, &cfg, &plan(Regime::Together, 2), &folds, 0).unwrap();
    let b = run_fold(&data, &cfg, &plan(Regime::Separate, 2), &folds, 0).unwrap();
    for o in [&a, &b] {
        assert_eq!(o.report.confusion.total(), 5);
        assert_eq!(o.report.per_class.len(), 5);
        assert!(o.training.history.iter().any(|h| h.split == "test"));
    }
    assert_eq!(a.seed, b.seed);
}

#[test]
fn fold_statistics_ignore_the_test_fold() {
    let mut data = toy_dataset(25, 1.0, 7);
    let folds = make_folds(25, 5, None, 2).unwrap();
    let held_out = folds.test(0)[0];
    data.examples[held_out].input.lld.as_mut().unwrap()[0] = 1e6;
    let o = run_fold(
        &data,
        &lld_config(BranchSet::single(Branch::Lld)),
        &plan(Regime::Together, 1),
        &folds,
        0,
    )
    .unwrap();
    assert!(o.lld_stats.unwrap().max[0] < 10.0);
}

#[test]
fn evaluate_rejects_empty_split() {
    let m = Model::new(lld_config(BranchSet::single(Branch::Lld)), None, 1).unwrap();
    assert!(evaluate(&m, &[], &[]).is_err());
}

#[test]
fn ablation_grid_is_deterministic_with_expected_widths() {
    let data = toy_dataset(20, 1.0, 8);
    let folds = make_folds(20, 5, Some(&data.labels()), 3).unwrap();
    let subsets: Vec<BranchSet> = ["pos", "lld", "pos+lld"].iter().map(|s| s.parse().unwrap()).collect();
    let base = lld_config(BranchSet::ALL);
    let p = plan(Regime::Together, 1);
    let a = run_ablation(&data, &base, &subsets, &p, &folds, Some(1)).unwrap();
    let b = run_ablation(&data, &base, &subsets, &p, &folds, Some(1)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    let widths: Vec<usize> = a.iter().map(|r| r.fusion_input).collect();
    assert_eq!(widths, vec![128, 128, 256]);
    let csv = results_csv(&a);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "subset,fold,class,accuracy,weighted_accuracy");
    // Per subset: one fold plus pooled and mean blocks of five classes.
    assert_eq!(lines.len(), 1 + 3 * 3 * 5);
    assert!(lines[1].starts_with("pos,1,Ang,"));
    assert!(csv.contains("pos+lld,pooled,Fru,"));
    assert!(run_ablation(&data, &base, &[], &p, &folds, None).is_err());
}

#[test]
fn loss_log_round_trips_values() {
    let h = vec![LossRecord {
        epoch: 1,
        split: "train".into(),
        loss: 0.1 + 0.2,
    }];
    let csv = loss_log_csv(&h);
    let v: f64 = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(v.to_bits(), (0.1f64 + 0.2).to_bits());
}

#[test]
fn variable_length_mfsc_batch_trains() {
    let seg = |n: usize, v: f64| Arc::new(MfscMap::new(Tensor::filled(&[n, 64, 64, 3], v)).unwrap());
    let inputs: Vec<SampleInput> = (0..4)
        .map(|i| SampleInput {
            mfsc: Some(seg(1 + i % 3, i as f64 * 0.1)),
            ..Default::default()
        })
        .collect();
    let cfg = ModelConfig {
        branches: BranchSet::single(Branch::Mfsc),
        scale: 1.0 / 32.0,
        ..ModelConfig::default()
    };
    let mut m = Model::new(cfg, None, 2).unwrap();
    let p = TrainingPlan {
        batch_size: 4,
        epochs: 1,
        adam: AdamConfig::default(),
        ..TrainingPlan::default()
    };
    let r = train(&mut m, &refs(&inputs), &[0, 1, 2, 3], &p, None).unwrap();
    assert!(r.initial_loss.is_finite());
}
