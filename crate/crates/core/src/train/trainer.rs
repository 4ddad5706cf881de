use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, cosine_lr, Adam, AdamConfig, LrSchedule};
use crate::error::{Error, Result};
use crate::events::Dataset;
use crate::model::{Mode, SpikMamba};
use crate::tensor::{Scalar, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Length of the cosine schedule; defaults to `epochs`.
    pub schedule_epochs: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; off when absent.
    pub grad_clip: Option<f64>,
    pub seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = LrSchedule::default();
        let a = AdamConfig::default();
        Self {
            epochs: s.total_epochs,
            batch_size: 32,
            lr_max: s.eta_max,
            lr_min: s.eta_min,
            schedule_epochs: None,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            grad_clip: None,
            seed: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            eta_max: self.lr_max,
            eta_min: self.lr_min,
            total_epochs: self.schedule_epochs.unwrap_or(self.epochs),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::Config(
                "adam betas must lie in [0, 1) and eps be positive".into(),
            ));
        }
        if self.weight_decay < 0.0 || self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("weight_decay and grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

/// Top-1 accuracy in eval mode. Batches are evaluated in parallel against
/// the shared, unmodified model.
pub fn evaluate<T: Scalar>(model: &SpikMamba<T>, data: &Dataset, batch_size: usize) -> Result<f64> {
    let batches: Vec<_> = data.sequential(batch_size)?.collect();
    let correct = batches
        .par_iter()
        .map(|b| {
            let pred = model.predict(&b.x)?;
            Ok(pred.iter().zip(&b.labels).filter(|(p, y)| p == y).count())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / data.len() as f64)
}

/// Epoch-at-a-time optimization of a model.
pub struct Trainer<T> {
    pub model: SpikMamba<T>,
    pub optim: Adam<T>,
    cfg: TrainConfig,
    seed: u64,
    epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: SpikMamba<T>, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let optim = Adam::new(cfg.adam(), &model.params);
        Ok(Self {
            model,
            optim,
            cfg,
            seed,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One optimization step on a batch; returns the batch loss.
    pub fn step(&mut self, batch: &crate::events::Batch, lr: f64, batch_index: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.x.cast());
        let out = self.model.forward(&mut tape, x, Mode::Train)?;
        let loss = tape.cross_entropy(out.logits, &batch.labels)?;
        let value = tape.value(loss).item()?.to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                batch: batch_index,
                step: self.optim.steps() + 1,
                value,
            });
        }
        self.model.params.zero_grad();
        tape.backward(loss, &mut self.model.params)?;
        if let Some(c) = self.cfg.grad_clip {
            clip_grad_norm(&mut self.model.params, c);
        }
        self.optim.step(&mut self.model.params, lr)?;
        Ok(value)
    }

    /// Runs the next epoch, then measures train (and optionally eval)
    /// accuracy in eval mode.
    pub fn run_epoch(&mut self, train: &Dataset, eval: Option<&Dataset>) -> Result<EpochRecord> {
        let start = Instant::now();
        let lr = cosine_lr(self.epoch, &self.cfg.schedule());
        let mut total = 0.0;
        for (i, batch) in train.batches(self.cfg.batch_size, self.seed, self.epoch)?.enumerate() {
            total += self.step(&batch, lr, i)? * batch.labels.len() as f64;
        }
        let train_acc = evaluate(&self.model, train, self.cfg.batch_size)?;
        let eval_acc = eval
            .map(|d| evaluate(&self.model, d, self.cfg.batch_size))
            .transpose()?;
        let record = EpochRecord {
            epoch: self.epoch,
            lr,
            train_loss: total / train.len() as f64,
            train_acc,
            eval_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        Ok(record)
    }
}

/// Where [`train_loop`] writes its log and checkpoints.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn log(&self) -> PathBuf {
        self.dir.join("log.jsonl")
    }
    pub fn initial(&self) -> PathBuf {
        self.dir.join("initial.ckpt")
    }
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }
}

fn write_record(log: &mut impl Write, r: &EpochRecord, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *log, r)?;
    writeln!(log)
        .and_then(|_| log.flush())
        .map_err(|e| Error::file(path, e))
}

/// Trains for `cfg.epochs`, writing a JSON-lines log plus initial, best
/// (by eval accuracy, or train accuracy without an eval set) and last
/// checkpoints. `on_epoch` sees each record as it completes.
pub fn train_loop<T: Scalar>(
    trainer: &mut Trainer<T>,
    train: &Dataset,
    eval: Option<&Dataset>,
    out: &RunOutput,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Contract("empty dataset".into()));
    }
    std::fs::create_dir_all(&out.dir).map_err(|e| Error::file(&out.dir, e))?;
    trainer.model.save_checkpoint(&out.initial())?;
    let log_path = out.log();
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::file(&log_path, e))?);
    let mut report = TrainReport::default();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..trainer.cfg.epochs {
        let r = trainer.run_epoch(train, eval)?;
        write_record(&mut log, &r, &log_path)?;
        let score = r.eval_acc.unwrap_or(r.train_acc);
        if score > best {
            best = score;
            trainer.model.save_checkpoint(&out.best())?;
        }
        trainer.model.save_checkpoint(&out.last())?;
        on_epoch(&r);
        report.epochs.push(r);
    }
    Ok(report)
}
