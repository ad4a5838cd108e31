//! Dataset split and the minibatch training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use super::params::{Gradients, ParamStore};
use super::tape::{cross_entropy_with_probs, Tape, Var};
use super::EngineError;

/// Anything that can record a differentiable forward pass over its own
/// parameter store.
pub trait Trainable: Sync {
    type Input: Sync;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Records one sample's `1×K` logits on `tape`.
    fn logits_graph<'a>(&'a self, tape: &mut Tape<'a>, input: &'a Self::Input) -> Result<Var, EngineError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    /// Worker threads for per-sample gradients; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-5,
            epochs: 50,
            weight_decay: 0.01,
            split: [0.8, 0.1, 0.1],
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.split.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(EngineError::InvalidConfig(format!(
                "split fractions must be positive, got {:?}",
                self.split
            )));
        }
        let total: f64 = self.split.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EngineError::InvalidConfig(format!(
                "split fractions sum to {total}, expected 1"
            )));
        }
        if self.batch_size == 0 {
            return Err(EngineError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(EngineError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(EngineError::InvalidConfig(format!("weight decay {}", self.weight_decay)));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Sample indices of the three partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn select<'t, T>(indices: &[usize], items: &'t [T]) -> Vec<&'t T> {
        indices.iter().map(|&i| &items[i]).collect()
    }
}

/// Seeded shuffle of `0..n`; validation and test get `floor(n·f)` samples
/// each and training keeps the rest.
pub fn split_dataset(n: usize, config: &TrainConfig) -> Result<Split, EngineError> {
    config.validate()?;
    if n < 10 {
        return Err(EngineError::TooFewSamples(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let n_val = floor_share(n, config.split[1]);
    let n_test = floor_share(n, config.split[2]);
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(EngineError::TooFewSamples(n));
    }
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Split { train: order, val, test })
}

fn floor_share(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            );
        }
        out
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_loss).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub history: TrainingHistory,
    /// Parameters at the lowest validation loss (the initial ones if no
    /// epoch ran).
    pub best: ParamStore,
    pub best_epoch: Option<usize>,
}

/// Loss, accuracy and predictions over a subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

struct SampleResult {
    loss: f64,
    correct: bool,
    grads: Option<Gradients>,
    logits: Vec<f64>,
}

fn run_sample<M: Trainable>(
    model: &M,
    input: &M::Input,
    label: usize,
    grad_seed: Option<f64>,
) -> Result<SampleResult, EngineError> {
    let mut tape = Tape::new();
    let logits = model.logits_graph(&mut tape, input)?;
    let row = tape.value(logits).as_slice().to_vec();
    let Some(seed) = grad_seed else {
        if label >= row.len() {
            return Err(EngineError::LabelOutOfRange {
                label,
                num_classes: row.len(),
            });
        }
        let (loss, _) = cross_entropy_with_probs(&row, label);
        let correct = argmax(&row) == label;
        return Ok(SampleResult {
            loss,
            correct,
            grads: None,
            logits: row,
        });
    };
    let loss = tape.cross_entropy(logits, label)?;
    let bp = tape.backward_scaled(loss, seed)?;
    let grads = tape.param_gradients(&bp, model.params());
    Ok(SampleResult {
        loss: tape.value(loss)[(0, 0)],
        correct: argmax(&row) == label,
        grads: Some(grads),
        logits: row,
    })
}

/// Runs `indices` through the model, spreading samples over `threads`
/// workers. Results come back in `indices` order.
fn run_many<M: Trainable>(
    model: &M,
    inputs: &[M::Input],
    labels: &[usize],
    indices: &[usize],
    grad_seed: Option<f64>,
    threads: usize,
) -> Result<Vec<SampleResult>, EngineError> {
    let threads = threads.max(1).min(indices.len().max(1));
    if threads == 1 {
        return indices
            .iter()
            .map(|&i| run_sample(model, &inputs[i], labels[i], grad_seed))
            .collect();
    }
    let chunk = indices.len().div_ceil(threads);
    let parts: Vec<Result<Vec<SampleResult>, EngineError>> = std::thread::scope(|s| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&i| run_sample(model, &inputs[i], labels[i], grad_seed))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(indices.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and accuracy of the model on `indices`.
pub fn evaluate<M: Trainable>(
    model: &M,
    inputs: &[M::Input],
    labels: &[usize],
    indices: &[usize],
    threads: usize,
) -> Result<Evaluation, EngineError> {
    let results = run_many(model, inputs, labels, indices, None, threads)?;
    let n = results.len().max(1) as f64;
    let loss = results.iter().map(|r| r.loss).sum::<f64>() / n;
    let accuracy = results.iter().filter(|r| r.correct).count() as f64 / n;
    Ok(Evaluation {
        loss,
        accuracy,
        predictions: results.iter().map(|r| argmax(&r.logits)).collect(),
        logits: results.into_iter().map(|r| r.logits).collect(),
    })
}

/// Minibatch AdamW on mean cross-entropy. The epoch order is reshuffled from
/// `config.seed`; the lowest-validation-loss parameters are kept.
/// `on_epoch` sees every record as soon as it is complete.
pub fn fit<M: Trainable>(
    model: &mut M,
    inputs: &[M::Input],
    labels: &[usize],
    split: &Split,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome, EngineError> {
    config.validate()?;
    if inputs.len() != labels.len() {
        return Err(EngineError::ShapeMismatch(format!(
            "{} inputs for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let mut history = TrainingHistory::default();
    let mut best = model.params().clone();
    let mut best_epoch = None;
    let mut best_loss = f64::INFINITY;
    let mut optimizer = AdamW::new(config.optimizer(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order = split.train.clone();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let seed = 1.0 / batch.len() as f64;
            let results = run_many(&*model, inputs, labels, batch, Some(seed), config.threads)?;
            let mut grads = model.params().zero_grads();
            for r in &results {
                if !r.loss.is_finite() {
                    return Err(EngineError::NonFiniteLoss { epoch });
                }
                loss_sum += r.loss;
                correct += usize::from(r.correct);
                grads.accumulate(r.grads.as_ref().expect("gradients requested"));
            }
            optimizer.step(model.params_mut(), &grads)?;
        }
        let n = order.len().max(1) as f64;
        let val = evaluate(&*model, inputs, labels, &split.val, config.threads)?;
        if !val.loss.is_finite() {
            return Err(EngineError::NonFiniteLoss { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        log::debug!(
            "epoch {epoch}: train_loss={:.5} train_acc={:.4} val_loss={:.5} val_acc={:.4}",
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc
        );
        on_epoch(&record);
        history.records.push(record);
        if val.loss < best_loss {
            best_loss = val.loss;
            best_epoch = Some(epoch);
            best = model.params().clone();
        }
    }
    Ok(FitOutcome {
        history,
        best,
        best_epoch,
    })
}
