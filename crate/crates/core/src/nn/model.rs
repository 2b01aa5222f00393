use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{softmax_cross_entropy, BatchStats, Cache, Layer, LayerSpec, BN_MOMENTUM};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CLASS_COUNT: usize = 9;

/// Layer stack plus the per-item input shape it accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Heat-map classifier for `1 x grid x grid` inputs: three conv blocks
    /// (8@5x5, 16@5x5, 32@3x3, each with batch norm, ReLU and 2x2 max
    /// pooling), then dense 128 and dense `classes`.
    pub fn heatmap(grid: usize, classes: usize) -> Self {
        let pool = LayerSpec::MaxPool { pool_h: 2, pool_w: 2 };
        Architecture {
            input_shape: [1, grid, grid],
            layers: vec![
                LayerSpec::conv_same(8, 5),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                pool,
                LayerSpec::conv_same(16, 5),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                pool,
                LayerSpec::conv_same(32, 3),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                pool,
                LayerSpec::Dense { out_features: 128 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_features: classes },
            ],
        }
    }

    /// Raw-series classifier for `1 x len` inputs: two 128-filter width-5
    /// convolutions with batch norm and ReLU, max pooling by 4 in between,
    /// global average pooling and a dense output layer.
    pub fn series(len: usize, classes: usize) -> Self {
        Architecture {
            input_shape: [1, 1, len],
            layers: vec![
                LayerSpec::conv1d_same(128, 5),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { pool_h: 1, pool_w: 4 },
                LayerSpec::conv1d_same(128, 5),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_features: classes },
            ],
        }
    }
}

/// Gradients laid out like [`ConvNet::layers`]`[i].params`.
pub type Gradients = Vec<Vec<Vec<f64>>>;

/// Saved activations of one training-mode forward pass.
pub struct Tape {
    caches: Vec<Cache>,
    stats: Vec<Option<BatchStats>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
    pub classes: usize,
}

impl ConvNet {
    /// Builds the network with He-uniform weights drawn from `seed`.
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = arch.input_shape;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for &spec in &arch.layers {
            let layer = Layer::new(spec, shape, &mut rng)?;
            shape = layer.output_shape;
            layers.push(layer);
        }
        if shape[1] != 1 || shape[2] != 1 {
            return Err(Error::Shape(format!("network output {shape:?} is not a flat logit vector")));
        }
        Ok(ConvNet {
            input_shape: arch.input_shape,
            layers,
            classes: shape[0],
        })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_shape: self.input_shape,
            layers: self.layers.iter().map(|l| l.spec).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| l.params.iter().map(|p| vec![0.0; p.len()]).collect())
            .collect()
    }

    fn run(&self, x: &Tensor, train: bool, tape: Option<&mut Tape>) -> Result<Tensor> {
        let mut tape = tape;
        let mut current: Option<Tensor> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = current.as_ref().unwrap_or(x);
            let (out, cache, stats) = layer.forward(input, train)?;
            if !out.all_finite() {
                return Err(Error::Numeric(format!("non-finite activation after layer {i} ({})", layer.spec)));
            }
            if let Some(t) = tape.as_deref_mut() {
                t.caches.push(cache);
                t.stats.push(stats);
            }
            current = Some(out);
        }
        Ok(current.unwrap_or_else(|| x.clone()))
    }

    /// Evaluation-mode logits, shape `[B, classes, 1, 1]`. Pure.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, false, None)
    }

    /// Evaluation-mode class probabilities, one row per item.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let logits = self.logits(x)?;
        Ok((0..logits.batch())
            .map(|b| softmax_cross_entropy(logits.item(b), 0).1)
            .collect())
    }

    /// Training-mode forward pass that records what backward needs.
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, Tape)> {
        let mut tape = Tape {
            caches: Vec::with_capacity(self.layers.len()),
            stats: Vec::with_capacity(self.layers.len()),
        };
        let out = self.run(x, true, Some(&mut tape))?;
        Ok((out, tape))
    }

    /// Back-propagates `grad_logits` through the recorded tape.
    pub fn backward(&self, tape: &Tape, grad_logits: &Tensor) -> Result<Gradients> {
        let mut grads = self.zero_gradients();
        let mut grad = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.backward(&tape.caches[i], &grad, &mut grads[i])?;
        }
        Ok(grads)
    }

    /// Mean softmax cross-entropy of a batch with batch-statistics
    /// normalization, its gradients, and the per-item logits.
    pub fn loss_and_gradients(&self, x: &Tensor, labels: &[u8]) -> Result<(f64, Gradients, Tape, Tensor)> {
        let (logits, tape) = self.forward_train(x)?;
        let (loss, grad_logits) = batch_loss(&logits, labels)?;
        let grads = self.backward(&tape, &grad_logits)?;
        Ok((loss, grads, tape, logits))
    }

    /// Training-mode mean loss without gradients or running-stat updates.
    pub fn train_loss(&self, x: &Tensor, labels: &[u8]) -> Result<f64> {
        let (logits, _) = self.forward_train(x)?;
        Ok(batch_loss(&logits, labels)?.0)
    }

    /// Folds the batch statistics recorded on `tape` into the running
    /// statistics of every batch-norm layer.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        for (layer, stats) in self.layers.iter_mut().zip(&tape.stats) {
            if let Some(s) = stats {
                for (r, m) in layer.state[0].iter_mut().zip(&s.mean) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
                }
                for (r, v) in layer.state[1].iter_mut().zip(&s.var) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                }
            }
        }
    }
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn batch_loss(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let batch = logits.batch();
    let classes = logits.item_len();
    if labels.len() != batch {
        return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    let mut grad = Tensor::zeros(logits.shape.clone());
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let label = usize::from(label);
        if label >= classes {
            return Err(Error::Domain(format!("label {label} outside [0, {classes})")));
        }
        let (loss, probs) = softmax_cross_entropy(logits.item(b), label);
        total += loss;
        let g = &mut grad.data[b * classes..(b + 1) * classes];
        for (k, (g, p)) in g.iter_mut().zip(probs).enumerate() {
            let target = if k == label { 1.0 } else { 0.0 };
            *g = (p - target) / batch as f64;
        }
    }
    Ok((total / batch as f64, grad))
}
