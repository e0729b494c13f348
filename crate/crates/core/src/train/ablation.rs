//! Branch-subset ablation grid and CSV output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BranchSet, ModelConfig};
use crate::parallel;
use crate::CLASSES;

use super::cv::run_fold;
use super::data::Dataset;
use super::folds::FoldSplit;
use super::metrics::{CvSummary, MetricsReport};
use super::trainer::{LossRecord, TrainingPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset: BranchSet,
    pub fusion_input: usize,
    pub summary: CvSummary,
}

/// Trains and evaluates one model per (subset, fold) cell with shared folds.
/// Cells run in parallel, each on its own derived seed, and are collected in
/// grid order.
pub fn run_ablation(
    data: &Dataset,
    base: &ModelConfig,
    subsets: &[BranchSet],
    plan: &TrainingPlan,
    folds: &FoldSplit,
    only_fold: Option<usize>,
) -> Result<Vec<AblationRow>> {
    if subsets.is_empty() {
        return Err(Error::InvalidArgument("no branch subsets to evaluate".into()));
    }
    let fold_ids: Vec<usize> = match only_fold {
        Some(f) if f >= folds.k() => return Err(Error::InvalidArgument(format!("fold {f} of {}", folds.k()))),
        Some(f) => vec![f],
        None => (0..folds.k()).collect(),
    };
    let configs: Vec<ModelConfig> = subsets.iter().map(|&s| base.with_branches(s)).collect();
    for c in &configs {
        c.validate()?;
    }
    let cells: Vec<(usize, usize)> = (0..subsets.len())
        .flat_map(|s| fold_ids.iter().map(move |&f| (s, f)))
        .collect();
    let results = parallel::map(cells.len(), |i| -> Result<(usize, MetricsReport)> {
        let (s, f) = cells[i];
        let outcome = run_fold(data, &configs[s], plan, folds, f)?;
        Ok((f, outcome.report))
    });
    let mut per_subset: Vec<Vec<(usize, MetricsReport)>> = vec![Vec::new(); subsets.len()];
    for (&(s, _), r) in cells.iter().zip(results) {
        per_subset[s].push(r?);
    }
    subsets
        .iter()
        .zip(configs)
        .zip(per_subset)
        .map(|((&subset, cfg), reports)| {
            Ok(AblationRow {
                subset,
                fusion_input: cfg.fusion_input(),
                summary: CvSummary::new(reports)?,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn push_report(out: &mut String, subset: &str, fold: &str, per_class: &[Option<f64>], wa: f64) {
    for (c, r) in per_class.iter().enumerate() {
        let name = CLASSES.get(c).copied().unwrap_or("?");
        let _ = writeln!(out, "{subset},{fold},{name},{},{wa}", opt(*r));
    }
}

/// Results table: `subset,fold,class,accuracy,weighted_accuracy`. Each
/// subset lists its folds, then a `pooled` block (confusion matrices summed
/// over folds) and a `mean` block (per-fold values averaged). Classes absent
/// from a split leave `accuracy` empty.
pub fn results_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("subset,fold,class,accuracy,weighted_accuracy\n");
    for row in rows {
        let name = row.subset.to_string();
        for (f, r) in &row.summary.folds {
            push_report(&mut out, &name, &f.to_string(), &r.per_class, r.weighted_accuracy);
        }
        let p = &row.summary.pooled;
        push_report(&mut out, &name, "pooled", &p.per_class, p.weighted_accuracy);
        push_report(
            &mut out,
            &name,
            "mean",
            &row.summary.mean_per_class,
            row.summary.mean_weighted_accuracy,
        );
    }
    out
}

/// Loss log: `epoch,split,loss`, values in shortest round-trip form.
pub fn loss_log_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("epoch,split,loss\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.split, r.loss);
    }
    out
}
