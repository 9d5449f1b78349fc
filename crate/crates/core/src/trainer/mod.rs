//! Training loop, validation, and checkpoints.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use config::TrainConfig;
pub use model::QtModel;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use crate::corpus::{prefetch, BatchPlan, Minibatch, TokenizedCorpus};
use crate::error::{QtError, Result};
use crate::numkern::{Real, Rng};
use crate::objective::LossReport;
use crate::optim::Adam;

const EPOCH_STREAM_BASE: u64 = 1000;

/// Shuffling stream for one epoch, independent of how many steps ran before.
pub fn epoch_rng(seed: u64, epoch: usize) -> Rng {
    Rng::new(seed).fork(EPOCH_STREAM_BASE + epoch as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean over the steps since the previous record.
    pub loss: f64,
    pub accuracy: f64,
    pub sentences_per_sec: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValReport {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: usize,
    pub batches: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val: Option<ValReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub log: Vec<LogRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Loss of every step taken in this run.
    pub step_losses: Vec<f64>,
    pub best_val_accuracy: Option<f64>,
}

impl TrainReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("kind\tstep\tepoch\tloss\taccuracy\tsentences_per_sec\n");
        for r in &self.log {
            let _ = writeln!(s, "train\t{}\t{}\t{}\t{}\t{}", r.step, r.epoch, r.loss, r.accuracy, r.sentences_per_sec);
        }
        for e in &self.epochs {
            if let Some(v) = e.val {
                let _ = writeln!(s, "val\t{}\t{}\t{}\t{}\t", e.step, e.epoch, v.loss, v.accuracy);
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Receives `last.qtck`, `best.qtck` and `metrics.tsv`.
    pub out_dir: Option<PathBuf>,
    /// Stop once the total step count reaches this value.
    pub max_steps: Option<u64>,
    pub prefetch: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { out_dir: None, max_steps: None, prefetch: 4 }
    }
}

/// Mean loss and accuracy over every contiguous batch of `corpus`, in corpus order.
pub fn validate<T: Real>(model: &QtModel<T>, corpus: &TokenizedCorpus) -> Result<ValReport> {
    corpus.check_vocabulary(&model.vocab)?;
    let plan = BatchPlan::new(corpus, model.config.batch_size)?;
    let (mut loss, mut correct, mut preds) = (0.0, 0.0, 0usize);
    for &start in plan.starts() {
        let r = model.loss(&plan.batch_at(corpus, start))?;
        loss += r.loss * r.predictions as f64;
        correct += r.accuracy * r.predictions as f64;
        preds += r.predictions;
    }
    Ok(ValReport {
        loss: loss / preds as f64,
        accuracy: correct / preds as f64,
        predictions: preds,
        batches: plan.len(),
    })
}

pub struct Trainer {
    model: QtModel<f32>,
    adam: Adam<f32>,
    step: u64,
}

impl Trainer {
    pub fn new(model: QtModel<f32>) -> Result<Self> {
        let adam = Adam::new(model.config.adam, &model.shapes())?;
        Ok(Trainer { model, adam, step: 0 })
    }

    /// Continues from a checkpoint; a checkpoint without optimizer state
    /// starts from fresh moments.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let adam = match ckpt.adam {
            Some(a) => a,
            None => Adam::new(ckpt.model.config.adam, &ckpt.model.shapes())?,
        };
        Ok(Trainer { model: ckpt.model, adam, step: ckpt.step })
    }

    pub fn model(&self) -> &QtModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> QtModel<f32> {
        self.model
    }

    pub fn adam(&self) -> &Adam<f32> {
        &self.adam
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        encode_checkpoint(&self.model, Some(&self.adam), self.step)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_checkpoint(path, &self.model, Some(&self.adam), self.step)
    }

    /// Forward, backward and one optimizer update. A non-finite loss aborts
    /// before any parameter changes.
    pub fn train_step(&mut self, batch: &Minibatch) -> Result<LossReport> {
        let (report, grads) = self.model.loss_and_grads(batch)?;
        if !report.loss.is_finite() {
            return Err(QtError::Numeric(format!("loss became {} at step {}", report.loss, self.step + 1)));
        }
        let frozen = self.model.frozen_flags();
        self.adam
            .step(&mut self.model.tensors_mut(), &grads, &frozen)
            .map_err(|e| match e {
                QtError::Numeric(m) => QtError::Numeric(format!("{m} at step {}", self.step + 1)),
                other => other,
            })?;
        self.step += 1;
        Ok(report)
    }

    /// Trains until `config.epochs` epochs (or `max_steps` total steps) are done,
    /// resuming mid-epoch if the step counter says so.
    pub fn run(&mut self, train: &TokenizedCorpus, val: Option<&TokenizedCorpus>, opts: &RunOptions) -> Result<TrainReport> {
        let cfg = self.model.config.clone();
        train.check_vocabulary(&self.model.vocab)?;
        if let Some(v) = val {
            v.check_vocabulary(&self.model.vocab)?;
        }
        let plan = BatchPlan::new(train, cfg.batch_size)?;
        let per_epoch = plan.len() as u64;
        let total = per_epoch * cfg.epochs as u64;
        let stop = opts.max_steps.map_or(total, |m| m.min(total));
        if let Some(dir) = &opts.out_dir {
            fs::create_dir_all(dir)?;
        }

        let mut report = TrainReport::default();
        let mut window = Window::new();
        while self.step < stop {
            let epoch = (self.step / per_epoch) as usize;
            let skip = (self.step % per_epoch) as usize;
            let take = (stop - self.step).min(per_epoch - skip as u64) as usize;
            let order = plan.shuffled(&mut epoch_rng(cfg.seed, epoch));
            let mut epoch_loss = (0.0, 0usize);

            let batches = order.into_iter().skip(skip).take(take).map(|s| plan.batch_at(train, s));
            prefetch(batches, opts.prefetch, |batch| -> Result<()> {
                let r = self.train_step(&batch)?;
                report.step_losses.push(r.loss);
                epoch_loss.0 += r.loss;
                epoch_loss.1 += 1;
                window.add(&r, batch.size());
                if self.step.is_multiple_of(cfg.log_interval) {
                    let rec = window.flush(self.step, epoch);
                    log::info!(
                        "step {} epoch {} loss {:.4} acc {:.4} {:.0} sent/s",
                        rec.step,
                        rec.epoch,
                        rec.loss,
                        rec.accuracy,
                        rec.sentences_per_sec
                    );
                    report.log.push(rec);
                }
                Ok(())
            })?;

            if !self.step.is_multiple_of(per_epoch) {
                break;
            }
            let val_report = val.map(|v| validate(&self.model, v)).transpose()?;
            if let Some(v) = val_report {
                log::info!("epoch {epoch} validation loss {:.4} acc {:.4}", v.loss, v.accuracy);
            }
            report.epochs.push(EpochRecord {
                epoch,
                step: self.step,
                train_loss: epoch_loss.0 / epoch_loss.1.max(1) as f64,
                val: val_report,
            });
            if let (Some(v), Some(dir)) = (val_report, &opts.out_dir) {
                if report.best_val_accuracy.is_none_or(|b| v.accuracy > b) {
                    self.save(&dir.join("best.qtck"))?;
                }
            }
            if let Some(v) = val_report {
                report.best_val_accuracy = Some(report.best_val_accuracy.map_or(v.accuracy, |b| b.max(v.accuracy)));
            }
            if let Some(dir) = &opts.out_dir {
                self.save(&dir.join("last.qtck"))?;
                fs::write(dir.join("metrics.tsv"), report.to_tsv())?;
            }
        }
        if let Some(dir) = &opts.out_dir {
            self.save(&dir.join("last.qtck"))?;
            fs::write(dir.join("metrics.tsv"), report.to_tsv())?;
        }
        Ok(report)
    }
}

struct Window {
    loss: f64,
    accuracy: f64,
    steps: usize,
    sentences: usize,
    since: Instant,
}

impl Window {
    fn new() -> Self {
        Window { loss: 0.0, accuracy: 0.0, steps: 0, sentences: 0, since: Instant::now() }
    }

    fn add(&mut self, r: &LossReport, sentences: usize) {
        self.loss += r.loss;
        self.accuracy += r.accuracy;
        self.steps += 1;
        self.sentences += sentences;
    }

    fn flush(&mut self, step: u64, epoch: usize) -> LogRecord {
        let secs = self.since.elapsed().as_secs_f64().max(1e-9);
        let n = self.steps.max(1) as f64;
        let rec = LogRecord {
            step,
            epoch,
            loss: self.loss / n,
            accuracy: self.accuracy / n,
            sentences_per_sec: self.sentences as f64 / secs,
        };
        *self = Window::new();
        rec
    }
}
