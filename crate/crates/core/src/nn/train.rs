use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::softmax_cross_entropy;
use super::model::{ConvNet, Gradients};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Inputs of identical shape with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub item_shape: [usize; 3],
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn new(item_shape: [usize; 3], inputs: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        let n: usize = item_shape.iter().product();
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!("{} inputs but {} labels", inputs.len(), labels.len())));
        }
        if let Some(bad) = inputs.iter().find(|x| x.len() != n) {
            return Err(Error::Shape(format!(
                "input of length {} does not match item shape {item_shape:?}",
                bad.len()
            )));
        }
        Ok(LabeledSet {
            item_shape,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<u8>)> {
        let items: Vec<&[f64]> = idx.iter().map(|&i| self.inputs[i].as_slice()).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::stack(&items, self.item_shape)?, labels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd_momentum() -> Self {
        Optimizer::SgdMomentum { momentum: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Share of the training set held out for per-epoch validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            seed: 0,
            validation_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Per-parameter optimizer state.
struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    first: Gradients,
    second: Gradients,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, model: &ConvNet) -> Self {
        OptimizerState {
            kind,
            lr,
            step: 0,
            first: model.zero_gradients(),
            second: model.zero_gradients(),
        }
    }

    fn apply(&mut self, model: &mut ConvNet, grads: &Gradients) {
        self.step += 1;
        let lr = self.lr;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            for (p, param) in layer.params.iter_mut().enumerate() {
                let g = &grads[l][p];
                match self.kind {
                    Optimizer::SgdMomentum { momentum } => {
                        let vel = &mut self.first[l][p];
                        for ((w, v), &g) in param.iter_mut().zip(vel.iter_mut()).zip(g) {
                            *v = momentum * *v - lr * g;
                            *w += *v;
                        }
                    }
                    Optimizer::Adam { beta1, beta2, epsilon } => {
                        let c1 = 1.0 - beta1.powi(self.step);
                        let c2 = 1.0 - beta2.powi(self.step);
                        let (m, v) = (&mut self.first[l][p], &mut self.second[l][p]);
                        for (((w, m), v), &g) in param.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

/// Per-epoch metrics as CSV with header `epoch,split,loss,accuracy`.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,split,loss,accuracy\n");
    for m in history {
        let _ = writeln!(out, "{},{},{},{}", m.epoch, m.split.name(), m.loss, m.accuracy);
    }
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch training. Deterministic for a given `cfg.seed`: the seed fixes
/// the validation split and every epoch's shuffle.
pub fn train(model: &mut ConvNet, data: &LabeledSet, cfg: &TrainConfig) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    if data.item_shape != model.input_shape {
        return Err(Error::Shape(format!(
            "data items {:?} do not match network input {:?}",
            data.item_shape, model.input_shape
        )));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| usize::from(l) >= model.classes) {
        return Err(Error::Domain(format!("label {bad} outside [0, {})", model.classes)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut held_out = Vec::new();
    if cfg.validation_fraction > 0.0 {
        order.shuffle(&mut rng);
        let n_val = ((data.len() as f64) * cfg.validation_fraction).round() as usize;
        let n_val = n_val.min(data.len() - 1);
        held_out = order.split_off(data.len() - n_val);
    }
    let validation = if held_out.is_empty() {
        None
    } else {
        Some(LabeledSet {
            item_shape: data.item_shape,
            inputs: held_out.iter().map(|&i| data.inputs[i].clone()).collect(),
            labels: held_out.iter().map(|&i| data.labels[i]).collect(),
        })
    };

    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, model);
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = data.batch(idx)?;
            let (loss, grads, tape, logits) = model.loss_and_gradients(&x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            model.update_running_stats(&tape);
            opt.apply(model, &grads);
            loss_sum += loss * idx.len() as f64;
            correct += labels
                .iter()
                .enumerate()
                .filter(|&(b, &l)| argmax(logits.item(b)) == usize::from(l))
                .count();
        }
        history.push(EpochMetrics {
            epoch,
            split: Split::Train,
            loss: loss_sum / order.len() as f64,
            accuracy: correct as f64 / order.len() as f64,
        });
        if let Some(val) = &validation {
            let eval = evaluate(model, val)?;
            history.push(EpochMetrics {
                epoch,
                split: Split::Validation,
                loss: eval.mean_loss,
                accuracy: eval.accuracy,
            });
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

const EVAL_BATCH: usize = 64;

/// Evaluation-mode accuracy and confusion matrix.
pub fn evaluate(model: &ConvNet, data: &LabeledSet) -> Result<Evaluation> {
    if data.item_shape != model.input_shape {
        return Err(Error::Shape(format!(
            "data items {:?} do not match network input {:?}",
            data.item_shape, model.input_shape
        )));
    }
    let k = model.classes;
    let mut confusion = vec![vec![0u64; k]; k];
    let mut loss_sum = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(chunk)?;
        let logits = model.logits(&x)?;
        for (b, &label) in labels.iter().enumerate() {
            let label = usize::from(label);
            if label >= k {
                return Err(Error::Domain(format!("label {label} outside [0, {k})")));
            }
            let row = logits.item(b);
            loss_sum += softmax_cross_entropy(row, label).0;
            confusion[label][argmax(row)] += 1;
        }
    }
    let total = data.len().max(1) as f64;
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: trace as f64 / total,
        mean_loss: loss_sum / total,
        confusion,
    })
}

/// Confusion matrix and accuracy from explicit predictions.
pub fn confusion_from_predictions(labels: &[u8], predicted: &[usize], classes: usize) -> Evaluation {
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&l, &p) in labels.iter().zip(predicted) {
        confusion[usize::from(l)][p] += 1;
    }
    let trace: u64 = (0..classes).map(|i| confusion[i][i]).sum();
    Evaluation {
        accuracy: trace as f64 / labels.len().max(1) as f64,
        mean_loss: f64::NAN,
        confusion,
    }
}
