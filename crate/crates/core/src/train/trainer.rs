//! Mini-batch training in the `together` and `separate` regimes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::init::{stream, RngStream};
use crate::autograd::{Adam, AdamConfig, NodeId};
use crate::error::{Error, Result};
use crate::model::forward::fusion_forward;
use crate::model::{argmax, Branch, Ctx, Model, ParamKind, SampleInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// One optimizer over branches and fusion, trained end to end.
    Together,
    /// Branches first (each with an auxiliary softmax head), then the fusion
    /// network on frozen branch features.
    Separate,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Together => "together",
            Regime::Separate => "separate",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "together" => Ok(Regime::Together),
            "separate" => Ok(Regime::Separate),
            other => Err(Error::config(
                "regime",
                format!("`{other}` is not one of together, separate"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub regime: Regime,
    /// Epochs per stage.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Stop once eval-mode training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
    /// Stop a stage after this many epochs without a lower mean loss.
    pub patience: Option<usize>,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            regime: Regime::Together,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            target_train_accuracy: None,
            patience: None,
        }
    }
}

impl TrainingPlan {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "batch_size",
                format!("{} is below 2, which batch norm needs", self.batch_size),
            ));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&a.beta1) {
            return Err(Error::config("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("beta2", "must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if let Some(t) = self.target_train_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("target_train_accuracy", "must lie in [0, 1]"));
            }
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience", "must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    /// `train` or `test` for the joint regime; `branches`, `fusion` or
    /// `test` for the staged one.
    pub split: String,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: Regime,
    /// Loss of the very first mini-batch, before any update.
    pub initial_loss: f64,
    pub history: Vec<LossRecord>,
    /// Epochs run in the final stage.
    pub epochs_run: usize,
    /// Eval-mode accuracy on the training set after training.
    pub train_accuracy: f64,
    /// Branch checksums before and after the fusion stage (`separate` only).
    pub branch_checksums: Option<(String, String)>,
    /// Fusion checksum after each fusion-stage epoch (`separate` only).
    pub fusion_checksums: Vec<String>,
}

/// Held-out samples whose eval-mode loss is logged each epoch. They never
/// touch parameters, statistics or the optimizer.
#[derive(Clone, Copy)]
pub struct Monitor<'a> {
    pub inputs: &'a [&'a SampleInput],
    pub labels: &'a [usize],
}

/// Shuffled mini-batches over `0..n`; a trailing batch of one sample is
/// merged into the one before it because batch norm needs two rows.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("more than one batch").extend(last);
    }
    batches
}

/// Mean cross-entropy of eval-mode logits.
pub fn eval_loss(model: &Model, inputs: &[&SampleInput], labels: &[usize]) -> Result<f64> {
    let logits = model.eval_logits(inputs)?;
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, &l)| {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - z[l]
        })
        .sum();
    Ok(total / labels.len().max(1) as f64)
}

/// Eval-mode accuracy.
pub fn accuracy(model: &Model, inputs: &[&SampleInput], labels: &[usize]) -> Result<f64> {
    let logits = model.eval_logits(inputs)?;
    let correct = logits.iter().zip(labels).filter(|(z, &l)| argmax(z) == l).count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

/// Builds a train-mode graph with `build`, back-propagates the scalar loss it
/// returns, folds in batch statistics and applies one Adam step.
fn step<F>(model: &mut Model, adam: &mut Adam, rng: &mut RngStream, what: &dyn Fn() -> String, build: F) -> Result<f64>
where
    F: FnOnce(&Model, &mut Ctx<'_>) -> Result<NodeId>,
{
    let (value, grads, fin) = {
        let mut ctx = Ctx::new(&model.params, &model.config, true, rng);
        let loss = build(model, &mut ctx)?;
        let fin = ctx.finish();
        let value = fin.tape.value(loss)[0];
        if !value.is_finite() {
            return Err(Error::Diverged(format!("loss {value} at {}", what())));
        }
        let grads = fin.tape.backward(loss)?;
        (value, grads, fin)
    };
    fin.write_grads(&grads, &mut model.params)?;
    fin.update_running_stats(&mut model.params, model.config.bn_momentum)?;
    adam.step(&mut model.params)?;
    Ok(value)
}

struct Stopper {
    target: Option<f64>,
    patience: Option<usize>,
    best: f64,
    stale: usize,
}

impl Stopper {
    fn new(plan: &TrainingPlan, use_target: bool) -> Self {
        Self {
            target: plan.target_train_accuracy.filter(|_| use_target),
            patience: plan.patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    fn should_stop(&mut self, loss: f64, acc: impl FnOnce() -> Result<f64>) -> Result<bool> {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if self.patience.is_some_and(|p| self.stale >= p) {
            return Ok(true);
        }
        match self.target {
            Some(t) => Ok(acc()? >= t),
            None => Ok(false),
        }
    }
}

/// Trains `model` in place on `inputs`/`labels` according to `plan`.
pub fn train(
    model: &mut Model,
    inputs: &[&SampleInput],
    labels: &[usize],
    plan: &TrainingPlan,
    monitor: Option<Monitor<'_>>,
) -> Result<TrainReport> {
    plan.validate()?;
    if inputs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs vs {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if inputs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} training samples; batch norm needs at least 2",
            inputs.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= model.config.num_classes) {
        return Err(Error::InvalidArgument(format!("label {l} out of range")));
    }
    match plan.regime {
        Regime::Together => train_together(model, inputs, labels, plan, monitor),
        Regime::Separate => train_separate(model, inputs, labels, plan, monitor),
    }
}

fn log_monitor(model: &Model, monitor: Option<Monitor<'_>>, epoch: usize, history: &mut Vec<LossRecord>) -> Result<()> {
    if let Some(m) = monitor.filter(|m| !m.inputs.is_empty()) {
        history.push(LossRecord {
            epoch,
            split: "test".into(),
            loss: eval_loss(model, m.inputs, m.labels)?,
        });
    }
    Ok(())
}

fn batch_labels(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

fn weighted_mean(sum: f64, n: usize) -> f64 {
    sum / n as f64
}

fn train_together(
    model: &mut Model,
    inputs: &[&SampleInput],
    labels: &[usize],
    plan: &TrainingPlan,
    monitor: Option<Monitor<'_>>,
) -> Result<TrainReport> {
    let mut shuffle = stream(plan.seed, "shuffle");
    let mut noise = stream(plan.seed, "dropout");
    let mut adam = Adam::new(plan.adam);
    let mut stopper = Stopper::new(plan, true);
    let mut history = Vec::new();
    let mut initial_loss = None;
    let mut epochs_run = 0;
    for epoch in 1..=plan.epochs {
        let mut sum = 0.0;
        for (bi, idx) in make_batches(inputs.len(), plan.batch_size, &mut shuffle)
            .iter()
            .enumerate()
        {
            let batch: Vec<&SampleInput> = idx.iter().map(|&i| inputs[i]).collect();
            let y = batch_labels(labels, idx);
            let what = || format!("epoch {epoch}, batch {bi} (samples {idx:?})");
            let loss = step(model, &mut adam, &mut noise, &what, |m, ctx| {
                let z = m.logits(ctx, &batch)?;
                ctx.tape.softmax_cross_entropy(z, &y)
            })?;
            initial_loss.get_or_insert(loss);
            sum += loss * idx.len() as f64;
        }
        let mean = weighted_mean(sum, inputs.len());
        history.push(LossRecord {
            epoch,
            split: "train".into(),
            loss: mean,
        });
        log_monitor(model, monitor, epoch, &mut history)?;
        epochs_run = epoch;
        if stopper.should_stop(mean, || accuracy(model, inputs, labels))? {
            break;
        }
    }
    Ok(TrainReport {
        regime: Regime::Together,
        initial_loss: initial_loss.expect("at least one batch ran"),
        history,
        epochs_run,
        train_accuracy: accuracy(model, inputs, labels)?,
        branch_checksums: None,
        fusion_checksums: Vec::new(),
    })
}

fn branch_checksum(model: &Model) -> String {
    Branch::ALL
        .iter()
        .map(|b| model.params.checksum(&format!("{}/", b.name())))
        .collect::<Vec<_>>()
        .join(":")
}

fn train_separate(
    model: &mut Model,
    inputs: &[&SampleInput],
    labels: &[usize],
    plan: &TrainingPlan,
    monitor: Option<Monitor<'_>>,
) -> Result<TrainReport> {
    let mut shuffle = stream(plan.seed, "shuffle");
    let mut noise = stream(plan.seed, "dropout");
    let mut history = Vec::new();
    let mut initial_loss = None;

    // Stage 1: every branch against its own auxiliary head. Branches share
    // no parameters, so one summed loss equals independent training.
    model.add_aux_heads(plan.seed)?;
    let branches: Vec<Branch> = model.config.branches.iter().collect();
    let mut adam = Adam::new(plan.adam);
    let mut stopper = Stopper::new(plan, false);
    for epoch in 1..=plan.epochs {
        let mut sum = 0.0;
        for (bi, idx) in make_batches(inputs.len(), plan.batch_size, &mut shuffle)
            .iter()
            .enumerate()
        {
            let batch: Vec<&SampleInput> = idx.iter().map(|&i| inputs[i]).collect();
            let y = batch_labels(labels, idx);
            let what = || format!("branch stage epoch {epoch}, batch {bi} (samples {idx:?})");
            let loss = step(model, &mut adam, &mut noise, &what, |m, ctx| {
                let mut terms = Vec::with_capacity(branches.len());
                for (b, feat) in m.features(ctx, &batch)? {
                    let z = ctx.classifier(&format!("aux/{}", b.name()), feat)?;
                    terms.push(ctx.tape.softmax_cross_entropy(z, &y)?);
                }
                let all = ctx.tape.concat(&terms)?;
                ctx.tape.weighted_sum(all, &vec![1.0; terms.len()])
            })?;
            initial_loss.get_or_insert(loss);
            sum += loss * idx.len() as f64;
        }
        let mean = weighted_mean(sum, inputs.len());
        history.push(LossRecord {
            epoch,
            split: "branches".into(),
            loss: mean,
        });
        if stopper.should_stop(mean, || Ok(0.0))? {
            break;
        }
    }
    model.remove_aux_heads();

    // Stage 2: frozen features, fresh optimizer, fusion only.
    let saved_kinds: Vec<(String, ParamKind)> = model.params.iter().map(|(n, p)| (n.clone(), p.kind)).collect();
    for b in Branch::ALL {
        model.params.set_kind(&format!("{}/", b.name()), ParamKind::Frozen);
    }
    let before = branch_checksum(model);
    let features = model.eval_features(inputs)?;
    let width = model.config.fusion_input();
    let mut adam = Adam::new(plan.adam);
    let mut stopper = Stopper::new(plan, true);
    let mut fusion_checksums = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=plan.epochs {
        let mut sum = 0.0;
        for (bi, idx) in make_batches(inputs.len(), plan.batch_size, &mut shuffle)
            .iter()
            .enumerate()
        {
            let data: Vec<f64> = idx.iter().flat_map(|&i| features[i].iter().copied()).collect();
            let y = batch_labels(labels, idx);
            let what = || format!("fusion stage epoch {epoch}, batch {bi} (samples {idx:?})");
            let loss = step(model, &mut adam, &mut noise, &what, |_, ctx| {
                let x = ctx.tape.constant(vec![idx.len(), width], data)?;
                let z = fusion_forward(ctx, &[x])?;
                ctx.tape.softmax_cross_entropy(z, &y)
            })?;
            sum += loss * idx.len() as f64;
        }
        let mean = weighted_mean(sum, inputs.len());
        history.push(LossRecord {
            epoch,
            split: "fusion".into(),
            loss: mean,
        });
        log_monitor(model, monitor, epoch, &mut history)?;
        fusion_checksums.push(model.params.checksum("fusion/"));
        epochs_run = epoch;
        if stopper.should_stop(mean, || accuracy(model, inputs, labels))? {
            break;
        }
    }
    let after = branch_checksum(model);
    if before != after {
        return Err(Error::InvalidArgument(
            "frozen branch parameters changed during the fusion stage".into(),
        ));
    }
    for (name, kind) in saved_kinds {
        if let Some(p) = model.params.get_mut(&name) {
            p.kind = kind;
        }
    }
    Ok(TrainReport {
        regime: Regime::Separate,
        initial_loss: initial_loss.expect("at least one batch ran"),
        history,
        epochs_run,
        train_accuracy: accuracy(model, inputs, labels)?,
        branch_checksums: Some((before, after)),
        fusion_checksums,
    })
}
