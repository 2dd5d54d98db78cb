//! Teacher-forced training with Adam and the warmup schedule.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{Corpus, TabularDataset};
use crate::expr::Token;
use crate::model::{Model, ModelError};
use crate::nn::{noam_lr, Adam, Graph, NnError, ScheduleConfig};
use crate::seed::{derive, hash_str};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("cannot build batch: {0}")]
    Batch(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    pub warmup_steps: u64,
    pub lr_scale: f64,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 100,
            label_smoothing: 0.0,
            seed: 0,
            warmup_steps: 4000,
            lr_scale: 1.0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::Config(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if self.warmup_steps == 0 {
            return Err(TrainError::Config("warmup_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Teacher-forcing batch. Decoder ids hold `[SOS, t1..tk, PAD...]` of length
/// `max_len` per sequence; targets are the same ids shifted left by one.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub max_len: usize,
    pub tables: Vec<f32>,
    pub decoder_ids: Vec<usize>,
    pub targets: Vec<usize>,
    /// False where the target is `PAD`.
    pub keep: Vec<bool>,
}

impl Batch {
    /// Decoder inputs aligned with `targets`: the first `max_len - 1` ids of
    /// every sequence.
    pub fn decoder_inputs(&self) -> Vec<usize> {
        self.decoder_ids
            .chunks_exact(self.max_len)
            .flat_map(|s| s[..self.max_len - 1].iter().copied())
            .collect()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

pub fn make_batch(datasets: &[&TabularDataset], max_len: usize) -> Result<Batch, TrainError> {
    let Some(first) = datasets.first() else {
        return Err(TrainError::Batch("no datasets".into()));
    };
    let rows = first.n_rows();
    let mut batch = Batch {
        size: datasets.len(),
        max_len,
        tables: Vec::with_capacity(datasets.len() * first.values().len()),
        decoder_ids: Vec::with_capacity(datasets.len() * max_len),
        targets: Vec::with_capacity(datasets.len() * (max_len - 1)),
        keep: Vec::with_capacity(datasets.len() * (max_len - 1)),
    };
    for ds in datasets {
        if ds.n_rows() != rows {
            return Err(TrainError::Batch(format!("mixed row counts {rows} and {}", ds.n_rows())));
        }
        let padded = ds
            .ground_truth
            .padded(max_len)
            .map_err(|e| TrainError::Batch(format!("skeleton {}: {e}", ds.skeleton_id)))?;
        batch.tables.extend_from_slice(ds.values());
        batch.decoder_ids.extend(padded.iter().map(|t| t.id() as usize));
        for t in &padded[1..] {
            batch.targets.push(t.id() as usize);
            batch.keep.push(*t != Token::Pad);
        }
    }
    Ok(batch)
}

/// Fraction of kept positions whose arg-max logit is the target.
pub fn token_accuracy(logits: &[f32], vocab: usize, targets: &[usize], keep: &[bool]) -> Result<f64, TrainError> {
    let (correct, kept) = token_hits(logits, vocab, targets, keep)?;
    if kept == 0 {
        return Err(NnError::EmptyMask.into());
    }
    Ok(correct as f64 / kept as f64)
}

fn token_hits(logits: &[f32], vocab: usize, targets: &[usize], keep: &[bool]) -> Result<(usize, usize), TrainError> {
    if logits.len() != targets.len() * vocab || keep.len() != targets.len() {
        return Err(NnError::Shape("logits, targets and mask disagree".into()).into());
    }
    let mut correct = 0;
    let mut kept = 0;
    for (r, row) in logits.chunks_exact(vocab).enumerate() {
        if !keep[r] {
            continue;
        }
        kept += 1;
        let mut best = 0;
        for (j, x) in row.iter().enumerate() {
            if *x > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == targets[r]);
    }
    Ok((correct, kept))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy";

pub fn write_metrics_csv(records: &[MetricsRecord], path: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.epoch, r.split, r.loss, r.accuracy)?;
    }
    w.flush()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub kept: usize,
}

/// Loss and accuracy over a set of datasets, weighted by kept positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: f64,
}

pub struct Trainer {
    pub model: Model<f32>,
    pub config: TrainConfig,
    adam: Adam,
    schedule: ScheduleConfig,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let schedule = ScheduleConfig {
            d_model: model.config().d_model,
            warmup_steps: config.warmup_steps,
            scale: config.lr_scale,
        };
        Ok(Trainer {
            model,
            config,
            adam: Adam::default(),
            schedule,
        })
    }

    /// Optimizer steps taken so far, across epochs and resumes.
    pub fn global_step(&self) -> u64 {
        self.model.store().step()
    }

    /// One forward/backward pass and Adam update on `batch`.
    pub fn step(&mut self, batch: &Batch) -> Result<StepStats, TrainError> {
        let step = self.global_step() + 1;
        let lr = noam_lr(step, &self.schedule)?;
        let dropout_seed = derive(self.config.seed, &[hash_str("dropout"), step]);
        let (loss, accuracy, grads) = {
            let model = &self.model;
            let mut g = Graph::training(model.store(), dropout_seed);
            let x = model.table_input(&mut g, &batch.tables, batch.size)?;
            let memory = model.encode(&mut g, x)?;
            let logits = model.decode(&mut g, memory, &batch.decoder_inputs(), batch.size)?;
            let loss = g.cross_entropy(logits, &batch.targets, &batch.keep, self.config.label_smoothing)?;
            let value = g.value(loss)[0] as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { step, loss: value });
            }
            let acc = token_accuracy(g.value(logits), model.config().vocab, &batch.targets, &batch.keep)?;
            (value, acc, g.backward(loss)?)
        };
        let store = self.model.store_mut();
        store.zero_grad();
        store.accumulate(&grads);
        self.adam.step(store, lr)?;
        Ok(StepStats {
            step,
            lr,
            loss,
            accuracy,
            kept: batch.kept(),
        })
    }

    /// Loss and accuracy with dropout disabled.
    pub fn evaluate(&self, datasets: &[&TabularDataset]) -> Result<EvalStats, TrainError> {
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut kept_total = 0;
        let model = &self.model;
        for chunk in datasets.chunks(self.config.batch_size) {
            let batch = make_batch(chunk, model.config().max_len)?;
            let mut g = Graph::new(model.store());
            let x = model.table_input(&mut g, &batch.tables, batch.size)?;
            let memory = model.encode(&mut g, x)?;
            let logits = model.decode(&mut g, memory, &batch.decoder_inputs(), batch.size)?;
            let loss = g.cross_entropy(logits, &batch.targets, &batch.keep, self.config.label_smoothing)?;
            let kept = batch.kept();
            loss_sum += g.value(loss)[0] as f64 * kept as f64;
            let (c, _) = token_hits(g.value(logits), model.config().vocab, &batch.targets, &batch.keep)?;
            correct += c;
            kept_total += kept;
        }
        if kept_total == 0 {
            return Err(NnError::EmptyMask.into());
        }
        Ok(EvalStats {
            loss: loss_sum / kept_total as f64,
            accuracy: correct as f64 / kept_total as f64,
        })
    }

    fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive(self.config.seed, &[hash_str("shuffle"), epoch as u64]));
        order.shuffle(&mut rng);
        order
    }

    /// Runs the configured epochs over the corpus split. After every epoch,
    /// records train/validation/test metrics and calls `on_epoch`.
    ///
    /// A trainer whose model has already taken steps resumes at the epoch
    /// those steps correspond to.
    pub fn train<C>(&mut self, corpus: &Corpus, mut on_epoch: C) -> Result<Vec<MetricsRecord>, TrainError>
    where
        C: FnMut(&Trainer, usize, &[MetricsRecord]) -> Result<(), TrainError>,
    {
        let train = corpus.subset(&corpus.split.train);
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        let validation = corpus.subset(&corpus.split.validation);
        let test = corpus.subset(&corpus.split.test);
        let per_epoch = train.len().div_ceil(self.config.batch_size) as u64;
        let start = (self.global_step() / per_epoch) as usize;
        let mut history = Vec::new();
        for epoch in start..self.config.epochs {
            let order = self.epoch_order(epoch, train.len());
            let skip = (self.global_step() - epoch as u64 * per_epoch) as usize;
            let (mut loss_sum, mut hit_sum, mut kept_sum) = (0.0, 0.0, 0usize);
            let mut stopped = false;
            for idx in order.chunks(self.config.batch_size).skip(skip) {
                if self.config.max_steps.is_some_and(|m| self.global_step() >= m) {
                    stopped = true;
                    break;
                }
                let items: Vec<&TabularDataset> = idx.iter().map(|&i| train[i]).collect();
                let batch = make_batch(&items, self.model.config().max_len)?;
                let s = self.step(&batch)?;
                loss_sum += s.loss * s.kept as f64;
                hit_sum += s.accuracy * s.kept as f64;
                kept_sum += s.kept;
            }
            let mut records = Vec::new();
            if kept_sum > 0 {
                records.push(MetricsRecord {
                    epoch,
                    split: "train".into(),
                    loss: loss_sum / kept_sum as f64,
                    accuracy: hit_sum / kept_sum as f64,
                });
            }
            for (name, split) in [("validation", &validation), ("test", &test)] {
                if split.is_empty() {
                    continue;
                }
                let e = self.evaluate(split)?;
                records.push(MetricsRecord {
                    epoch,
                    split: name.into(),
                    loss: e.loss,
                    accuracy: e.accuracy,
                });
            }
            for r in &records {
                log::info!("epoch {} {} loss {:.5} accuracy {:.4}", r.epoch, r.split, r.loss, r.accuracy);
            }
            history.extend(records);
            on_epoch(self, epoch, &history)?;
            if stopped {
                break;
            }
        }
        Ok(history)
    }
}
