//! Optimisation of the multi-head loss, the epoch loop and cross-validation.

mod adam;
mod cv;
mod source;

use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cv::{cross_validate, scaled_targets, CvOptions, CvReport, FoldReport, MeanStd};
pub use source::{batch_ranges, epoch_order, load_batch, ImageSource, SampleSource, TensorSource};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::metrics::{confusion, per_class_metrics, roc_auc, AucReport, MetricsReport};
use crate::model::{save_checkpoint, FastMpoxModel};
use crate::nn::{parameters, softmax, softmax_cross_entropy, zero_grads, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weights of the two auxiliary-head losses.
    pub aux_weights: [f64; 2],
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            epochs: 100,
            aux_weights: [1.0, 1.0],
            adam: AdamConfig::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be finite and ≥ 0", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch size and epochs must be positive".into()));
        }
        if self.aux_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "aux weights {:?} must be finite and ≥ 0",
                self.aux_weights
            )));
        }
        self.adam.validate()
    }
}

/// `CE(logits3) + λ1·CE(logits1) + λ2·CE(logits2)`. Absent heads and zero
/// weights contribute nothing, not even a zero term.
pub fn total_loss<T: Scalar>(
    logits3: &Var<T>,
    logits1: Option<&Var<T>>,
    logits2: Option<&Var<T>>,
    labels: &[usize],
    lambda1: f64,
    lambda2: f64,
) -> Result<Var<T>> {
    for l in [lambda1, lambda2] {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::arg(format!("aux loss weight {l} must be finite and ≥ 0")));
        }
    }
    let mut loss = softmax_cross_entropy(logits3, labels)?;
    for (logits, lambda) in [(logits1, lambda1), (logits2, lambda2)] {
        let Some(logits) = logits else { continue };
        if logits.shape() != logits3.shape() {
            return Err(Error::shape("total_loss", logits.shape(), logits3.shape()));
        }
        if lambda == 0.0 {
            continue;
        }
        let ce = softmax_cross_entropy(logits, labels)?;
        let term = if lambda == 1.0 { ce } else { ce.affine(T::of(lambda), T::zero())? };
        loss = loss.add(&term)?;
    }
    Ok(loss)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the total loss over the epoch.
    pub train_loss: f64,
    /// Accuracy of the final head during the training passes.
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
}

/// Owns the optimiser state for one model.
pub struct Trainer<'m, T: Scalar> {
    model: &'m FastMpoxModel<T>,
    config: TrainConfig,
    params: Vec<(String, &'m Param<T>)>,
    adam: AdamState<T>,
    log: Option<Box<dyn Write + 'm>>,
    checkpoint: Option<PathBuf>,
}

impl<'m, T: Scalar> Trainer<'m, T> {
    /// Puts the model in training mode and seeds its DropBlock stream.
    pub fn new(model: &'m FastMpoxModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.train();
        model.reseed_dropblock(config.seed);
        let params = parameters(model);
        let adam = AdamState::new(&params);
        Ok(Trainer {
            model,
            config,
            params,
            adam,
            log: None,
            checkpoint: None,
        })
    }

    /// JSON-lines epoch log.
    pub fn with_log(mut self, w: impl Write + 'm) -> Self {
        self.log = Some(Box::new(w));
        self
    }

    /// Rewritten after every completed epoch.
    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.adam.t
    }

    /// Forward, backward and one Adam update on a batch.
    pub fn step(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<StepStats> {
        zero_grads(self.model);
        let out = self.model.forward(&Var::constant(x.clone()))?;
        let [l1, l2] = self.config.aux_weights;
        let loss = total_loss(&out.logits3, out.logits1.as_ref(), out.logits2.as_ref(), labels, l1, l2)?;
        let value = loss.value().data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.adam.t + 1)));
        }
        loss.backward()?;
        adam_step(&self.params, &mut self.adam, self.config.lr, &self.config.adam)?;
        let correct = out
            .logits3
            .value()
            .argmax_rows()
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(StepStats {
            loss: value,
            correct,
            samples: labels.len(),
        })
    }

    /// One pass over `source` in the seeded order for `epoch` (0-based).
    /// Returns mean loss and accuracy.
    pub fn run_epoch<S: SampleSource<T> + ?Sized>(&mut self, epoch: usize, source: &S) -> Result<(f64, f64)> {
        let order = epoch_order(source.len(), self.config.seed, epoch as u64, self.config.shuffle);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for r in batch_ranges(order.len(), self.config.batch_size) {
            let (x, labels) = load_batch(source, &order[r], epoch as u64)?;
            let s = self.step(&x, &labels)?;
            loss_sum += s.loss * s.samples as f64;
            correct += s.correct;
        }
        let n = order.len() as f64;
        Ok((loss_sum / n, correct as f64 / n))
    }

    /// Runs every epoch, logging one record each, and leaves the model in
    /// inference mode. On failure the weights from the last completed
    /// epoch are restored before the error is returned.
    pub fn fit<S, E>(&mut self, train: &S, eval: Option<&E>) -> Result<TrainReport>
    where
        S: SampleSource<T> + ?Sized,
        E: SampleSource<T> + ?Sized,
    {
        if train.is_empty() {
            return Err(Error::Dataset("training fold is empty".into()));
        }
        let mut records = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let snapshot = self.model.state();
            let started = std::time::Instant::now();
            self.model.train();
            let (train_loss, train_accuracy) = match self.run_epoch(epoch, train) {
                Ok(v) => v,
                Err(e) => {
                    self.model.load_state(&snapshot)?;
                    self.model.eval();
                    log::error!("epoch {} aborted, weights rolled back: {e}", epoch + 1);
                    return Err(e);
                }
            };
            let eval_accuracy = match eval {
                Some(src) => Some(accuracy(self.model, src, self.config.batch_size)?),
                None => None,
            };
            let rec = EpochRecord {
                epoch: epoch + 1,
                train_loss,
                train_accuracy,
                eval_accuracy,
            };
            log::info!(
                "epoch {}/{} loss {:.5} train acc {:.4}{} ({:.1}s)",
                rec.epoch,
                self.config.epochs,
                train_loss,
                train_accuracy,
                eval_accuracy.map(|a| format!(" eval acc {a:.4}")).unwrap_or_default(),
                started.elapsed().as_secs_f64()
            );
            if let Some(w) = self.log.as_mut() {
                let line = serde_json::to_string(&rec).expect("record serialises");
                writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
                w.flush().map_err(|e| Error::io("<training log>", e))?;
            }
            if let Some(path) = &self.checkpoint {
                save_checkpoint(self.model, path)?;
            }
            records.push(rec);
        }
        self.model.eval();
        Ok(TrainReport {
            epochs: records,
            steps: self.adam.t,
        })
    }
}

/// Inference-mode class probabilities, one row per sample.
pub fn predict_proba<T: Scalar, S: SampleSource<T> + ?Sized>(
    model: &FastMpoxModel<T>,
    source: &S,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let order: Vec<usize> = (0..source.len()).collect();
    let mut out = Vec::with_capacity(order.len());
    for r in batch_ranges(order.len(), batch_size.max(1)) {
        let (x, _) = load_batch(source, &order[r], 0)?;
        let p = softmax(&model.predict(&x)?)?;
        let k = p.shape()[1];
        out.extend(p.data().chunks(k).map(|row| row.iter().map(|v| v.as_f64()).collect::<Vec<_>>()));
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy<T: Scalar, S: SampleSource<T> + ?Sized>(
    model: &FastMpoxModel<T>,
    source: &S,
    batch_size: usize,
) -> Result<f64> {
    let probs = predict_proba(model, source, batch_size)?;
    let hits = probs
        .iter()
        .enumerate()
        .filter(|(i, p)| argmax(p) == source.label(*i))
        .count();
    Ok(hits as f64 / probs.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    pub auc: AucReport,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

/// Confusion matrix, per-class metrics and ROC/AUC on `source`.
pub fn evaluate<T: Scalar, S: SampleSource<T> + ?Sized>(
    model: &FastMpoxModel<T>,
    source: &S,
    batch_size: usize,
) -> Result<EvalReport> {
    if source.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let probabilities = predict_proba(model, source, batch_size)?;
    let labels: Vec<usize> = (0..source.len()).map(|i| source.label(i)).collect();
    let predictions: Vec<usize> = probabilities.iter().map(|p| argmax(p)).collect();
    let cm = confusion(&predictions, &labels, source.num_classes())?.with_classes(source.class_names())?;
    let metrics = per_class_metrics(&cm);
    let auc = roc_auc(&probabilities, &labels)?;
    Ok(EvalReport {
        metrics,
        auc,
        predictions,
        labels,
        probabilities,
    })
}

#[cfg(test)]
mod tests;
