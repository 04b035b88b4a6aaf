//! SGD with momentum and weight decay, plateau schedule, and evaluation.

use std::io::Write;
use std::time::Instant;

use crate::data::{batches, five_patch_offsets, BatchOptions, Dataset};
use crate::error::{Error, Result};
use crate::model::{GradSet, Group, Mode, Model};
use crate::ops::{softmax, softmax_cross_entropy};
use crate::seed::derive_path;
use crate::tensor::{Scalar, Tensor};

/// One SGD step on a single tensor:
/// `v ← μ·v − λ·ε·w − ε·g`, then `w ← w + v`.
pub fn sgd_update<T: Scalar>(w: &mut [T], v: &mut [T], g: &[T], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if w.len() != v.len() || w.len() != g.len() {
        return Err(Error::shape(format!(
            "sgd_update: {} weights, {} velocities, {} gradients",
            w.len(),
            v.len(),
            g.len()
        )));
    }
    let mu = T::from_f64_lossy(momentum);
    let decay = T::from_f64_lossy(weight_decay * lr);
    let eps = T::from_f64_lossy(lr);
    for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = mu * *vi - decay * *wi - eps * gi;
        *wi += *vi;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T: Scalar = f32> {
    pub lr_main: f64,
    pub lr_frontend: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Aligned with [`Model::param_info`]; empty for frozen tensors.
    pub velocities: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(model: &Model<T>, cfg: &TrainConfig) -> Self {
        Optimizer {
            lr_main: cfg.lr,
            lr_frontend: cfg.lr * cfg.lr_frontend_ratio,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocities: model
                .param_info()
                .iter()
                .map(|p| if p.trainable { vec![T::zero(); p.len()] } else { Vec::new() })
                .collect(),
        }
    }

    pub fn lr(&self, group: Group) -> f64 {
        match group {
            Group::Main => self.lr_main,
            Group::Frontend => self.lr_frontend,
        }
    }

    /// Applies batch-averaged gradients. Frozen tensors are skipped.
    pub fn step(&mut self, model: &mut Model<T>, grads: &GradSet<T>) -> Result<()> {
        let info = model.param_info();
        if grads.grads.len() != info.len() || self.velocities.len() != info.len() {
            return Err(Error::shape("gradient set does not match the model"));
        }
        let (momentum, wd) = (self.momentum, self.weight_decay);
        let lrs: Vec<f64> = info.iter().map(|p| self.lr(p.group)).collect();
        for (i, w) in model.params_mut().into_iter().enumerate() {
            if !info[i].trainable {
                continue;
            }
            let g = grads.grads[i]
                .as_ref()
                .ok_or_else(|| Error::shape(format!("missing gradient for {}", info[i].name)))?;
            sgd_update(w, &mut self.velocities[i], g, lrs[i], momentum, wd)?;
        }
        Ok(())
    }
}

/// Divides the learning rates by `factor` after `patience` epochs without a
/// validation gain above `threshold` percentage points.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub threshold: f64,
    pub factor: f64,
    pub floor: f64,
    pub best: f64,
    pub stale: usize,
}

impl PlateauSchedule {
    pub fn new(patience: usize, threshold: f64, factor: f64, floor: f64) -> Self {
        PlateauSchedule { patience, threshold, factor, floor, best: f64::NEG_INFINITY, stale: 0 }
    }

    /// Records one epoch's validation accuracy and returns true if the rates
    /// were reduced.
    pub fn observe<T: Scalar>(&mut self, val_acc: f64, opt: &mut Optimizer<T>) -> bool {
        if val_acc > self.best + self.threshold {
            self.best = val_acc;
            self.stale = 0;
            return false;
        }
        self.best = self.best.max(val_acc);
        self.stale += 1;
        if self.stale < self.patience {
            return false;
        }
        self.stale = 0;
        opt.lr_main = (opt.lr_main / self.factor).max(self.floor);
        opt.lr_frontend = (opt.lr_frontend / self.factor).max(self.floor);
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_frontend_ratio: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub threshold: f64,
    pub lr_floor: f64,
    pub augment: bool,
    pub val_fraction: f64,
    /// Batches prepared ahead of the optimiser.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 0.01,
            lr_frontend_ratio: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            patience: 3,
            threshold: 0.1,
            lr_floor: 1e-5,
            augment: true,
            val_fraction: 0.1,
            prefetch: 2,
        }
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Scalar = f32> {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub optimizer: Optimizer<T>,
    pub schedule: PlateauSchedule,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: &Model<T>, cfg: &TrainConfig, seed: u64) -> Self {
        TrainState {
            epoch: 0,
            seed,
            optimizer: Optimizer::new(model, cfg),
            schedule: PlateauSchedule::new(cfg.patience, cfg.threshold, 10.0, cfg.lr_floor),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr_main: f64,
    pub lr_frontend: f64,
    pub seconds: f64,
}

pub const RECORD_CSV_HEADER: &str = "epoch,train_loss,train_acc,val_acc,lr_main,lr_frontend,seconds";

impl TrainRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{:.4},{:e},{:e},{:.1}",
            self.epoch, self.train_loss, self.train_acc, self.val_acc, self.lr_main, self.lr_frontend, self.seconds
        )
    }

    /// Same record with the wall time zeroed, for reproducibility checks.
    pub fn without_time(&self) -> Self {
        TrainRecord { seconds: 0.0, ..self.clone() }
    }
}

pub fn write_records_csv(records: &[TrainRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{RECORD_CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// One pass over `train`. Returns mean loss and accuracy in percent.
/// `progress` receives `(batch, batch_count, loss)`.
pub fn train_epoch(
    model: &mut Model<f32>,
    train: &Dataset,
    state: &mut TrainState<f32>,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(usize, usize, f64),
) -> Result<(f64, f64)> {
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if train.classes != model.config().classes {
        return Err(Error::config(format!(
            "dataset has {} classes, model {}",
            train.classes,
            model.config().classes
        )));
    }
    let mut opts = BatchOptions::training(cfg.batch_size);
    if !cfg.augment {
        opts.augment = None;
    }
    let epoch = state.epoch as u64;
    let it = batches(train, &opts, derive_path(state.seed, &[epoch, 0]))?;
    let total = it.batch_count();
    let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
    let mut b = 0usize;
    it.prefetch(cfg.prefetch, |batch| {
        let fwd_seed = derive_path(state.seed, &[epoch, 1, b as u64]);
        let (logits, cache) = model.forward(&batch.images, Mode::Train { seed: fwd_seed })?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss} at epoch {epoch} batch {b}")));
        }
        let grads = model.backward(&cache, &dlogits)?;
        if !grads.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient at epoch {epoch} batch {b}")));
        }
        state.optimizer.step(model, &grads)?;
        let classes = logits.shape().c;
        for (row, &l) in logits.data().chunks(classes).zip(&batch.labels) {
            correct += usize::from(argmax(row) == l);
        }
        let n = batch.labels.len();
        loss_sum += loss as f64 * n as f64;
        seen += n;
        progress(b, total, loss as f64);
        b += 1;
        Ok(())
    })?;
    Ok((loss_sum / seen as f64, 100.0 * correct as f64 / seen as f64))
}

/// Trains one epoch, scores the validation set, steps the schedule.
pub fn run_epoch(
    model: &mut Model<f32>,
    train: &Dataset,
    val: &Dataset,
    state: &mut TrainState<f32>,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(usize, usize, f64),
) -> Result<TrainRecord> {
    let start = Instant::now();
    let (train_loss, train_acc) = train_epoch(model, train, state, cfg, progress)?;
    let val_acc = if val.is_empty() {
        train_acc
    } else {
        evaluate(model, val, Protocol::Center, 256, None)?.top1
    };
    // Record the rates that were used for this epoch.
    let (lr_main, lr_frontend) = (state.optimizer.lr_main, state.optimizer.lr_frontend);
    state.schedule.observe(val_acc, &mut state.optimizer);
    state.epoch += 1;
    Ok(TrainRecord {
        epoch: state.epoch,
        train_loss,
        train_acc,
        val_acc,
        lr_main,
        lr_frontend,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    Center,
    /// Mean softmax over the centre crop and four corner-shifted crops.
    FivePatch,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" | "centre" => Ok(Protocol::Center),
            "five_patch" | "five-patch" => Ok(Protocol::FivePatch),
            other => Err(Error::config(format!("unknown protocol {other:?} (center or five_patch)"))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Center => "center",
            Protocol::FivePatch => "five_patch",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub protocol: Protocol,
    pub samples: usize,
    /// Percent.
    pub top1: f64,
    /// Percent; present when there are at least five classes.
    pub top5: Option<f64>,
}

/// Class probabilities per sample, in dataset order.
pub fn predict_proba(
    model: &Model<f32>,
    data: &Dataset,
    protocol: Protocol,
    batch: usize,
    input_bits: Option<u32>,
) -> Result<Tensor<f32>> {
    let classes = model.config().classes;
    let offsets: Vec<(isize, isize)> = match protocol {
        Protocol::Center => vec![(0, 0)],
        Protocol::FivePatch => five_patch_offsets(2).to_vec(),
    };
    let mut acc = Tensor::<f32>::zeros(crate::tensor::Shape::new(data.len(), classes, 1, 1));
    for &offset in &offsets {
        let opts = BatchOptions { offset, input_bits, ..BatchOptions::inference(batch) };
        for b in batches(data, &opts, 0)? {
            let b = b?;
            let p = softmax(&model.predict(&b.images)?);
            for (k, &i) in b.indices.iter().enumerate() {
                for (d, &s) in acc.sample_mut(i).iter_mut().zip(p.sample(k)) {
                    *d += s;
                }
            }
        }
    }
    Ok(acc.scale(1.0 / offsets.len() as f32))
}

impl EvalResult {
    /// Scores `probs` (one row per sample) against `labels`.
    pub fn from_probs(protocol: Protocol, probs: &Tensor<f32>, labels: &[usize]) -> Result<Self> {
        if probs.shape().n != labels.len() || labels.is_empty() {
            return Err(Error::shape(format!("{} probability rows for {} labels", probs.shape().n, labels.len())));
        }
        let classes = probs.shape().c;
        let (mut top1, mut top5) = (0usize, 0usize);
        for (i, &label) in labels.iter().enumerate() {
            let row = probs.sample(i);
            top1 += usize::from(argmax(row) == label);
            let above = row.iter().filter(|&&p| p > row[label]).count();
            top5 += usize::from(above < 5);
        }
        let n = labels.len() as f64;
        Ok(EvalResult {
            protocol,
            samples: labels.len(),
            top1: 100.0 * top1 as f64 / n,
            top5: (classes >= 5).then(|| 100.0 * top5 as f64 / n),
        })
    }
}

pub fn evaluate(
    model: &Model<f32>,
    data: &Dataset,
    protocol: Protocol,
    batch: usize,
    input_bits: Option<u32>,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let probs = predict_proba(model, data, protocol, batch, input_bits)?;
    EvalResult::from_probs(protocol, &probs, &data.labels)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
