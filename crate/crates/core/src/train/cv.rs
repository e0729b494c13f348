//! Evaluation and per-fold training.

use crate::audio::MinMaxStats;
use crate::autograd::init::derive_seed;
use crate::error::{Error, Result};
use crate::model::{Branch, BranchSet, Model, ModelConfig, SampleInput};

use super::data::Dataset;
use super::folds::FoldSplit;
use super::metrics::{Confusion, CvSummary, MetricsReport};
use super::trainer::{train, Monitor, TrainReport, TrainingPlan};

/// Eval-mode predictions on a test split, scored.
pub fn evaluate(model: &Model, inputs: &[&SampleInput], labels: &[usize]) -> Result<MetricsReport> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("evaluation on an empty split".into()));
    }
    let predicted: Vec<usize> = model.predict(inputs)?.into_iter().map(|p| p.class).collect();
    MetricsReport::from_confusion(Confusion::from_pairs(model.config.num_classes, labels, &predicted)?)
}

/// Seed of one (fold, subset) cell, independent of every other cell.
pub fn fold_seed(seed: u64, fold: usize, subset: BranchSet) -> u64 {
    derive_seed(seed, &[fold as u64, subset.id()])
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    /// Seed actually used for initialization, shuffling and dropout.
    pub seed: u64,
    pub model: Model,
    pub lld_stats: Option<MinMaxStats>,
    pub training: TrainReport,
    pub report: MetricsReport,
}

/// Trains a fresh model on every fold but `fold` and evaluates it on `fold`.
/// Normalization statistics come from the training folds only.
pub fn run_fold(
    data: &Dataset,
    config: &ModelConfig,
    plan: &TrainingPlan,
    folds: &FoldSplit,
    fold: usize,
) -> Result<FoldOutcome> {
    if fold >= folds.k() {
        return Err(Error::InvalidArgument(format!("fold {fold} of {}", folds.k())));
    }
    if folds.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "fold split covers {} samples, dataset has {}",
            folds.len(),
            data.len()
        )));
    }
    let train_idx = folds.train(fold);
    let test_idx = folds.test(fold);
    let (inputs, lld_stats) = data.fold_inputs(&train_idx)?;
    let labels = data.labels();
    let seed = fold_seed(plan.seed, fold, config.branches);
    let words = data.words.as_ref().filter(|_| config.branches.contains(Branch::Word));
    let mut model = Model::new(config.clone(), words, seed)?;

    let pick =
        |idx: &[usize]| -> (Vec<&SampleInput>, Vec<usize>) { idx.iter().map(|&i| (&inputs[i], labels[i])).unzip() };
    let (tr_x, tr_y) = pick(&train_idx);
    let (te_x, te_y) = pick(test_idx);
    let plan = TrainingPlan { seed, ..plan.clone() };
    let monitor = Monitor {
        inputs: &te_x,
        labels: &te_y,
    };
    let training = train(&mut model, &tr_x, &tr_y, &plan, Some(monitor))?;
    let report = evaluate(&model, &te_x, &te_y)?;
    Ok(FoldOutcome {
        fold,
        seed,
        model,
        lld_stats,
        training,
        report,
    })
}

/// Summary over the selected folds (all when `only` is `None`).
pub fn cross_validate(
    data: &Dataset,
    config: &ModelConfig,
    plan: &TrainingPlan,
    folds: &FoldSplit,
    only: Option<usize>,
) -> Result<(CvSummary, Vec<FoldOutcome>)> {
    let which: Vec<usize> = match only {
        Some(f) => vec![f],
        None => (0..folds.k()).collect(),
    };
    let outcomes = which
        .into_iter()
        .map(|f| run_fold(data, config, plan, folds, f))
        .collect::<Result<Vec<_>>>()?;
    let summary = CvSummary::new(outcomes.iter().map(|o| (o.fold, o.report.clone())).collect())?;
    Ok((summary, outcomes))
}
