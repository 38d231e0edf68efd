//! Small dense feedforward binary classifier: rectifier hidden layers, one
//! logistic output unit, trained by mini-batch gradient descent on binary
//! cross-entropy. Everything is seeded and deterministic.

use super::ClassifyError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// One dense layer: `weights` is row-major (output x input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Feedforward net with fixed shape `layer_sizes` = [input, hidden..., 1].
/// Hidden activations are rectifiers; the single output unit is squashed by
/// a logistic sigmoid, so `predict` always lands in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Training knobs for `train_binary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { learning_rate: 1e-3, epochs: 200, batch: 32, seed: 0 }
    }
}

/// Full-dataset loss trace, one entry per epoch, kept for convergence checks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl MlpModel {
    /// Random initialization: zero biases, Gaussian weights scaled by
    /// sqrt(2/fan_in) (suits rectifier hidden units).
    pub fn init(input: usize, hidden: &[usize], seed: u64) -> Result<Self, ClassifyError> {
        if input == 0 {
            return Err(ClassifyError::InvalidParam("input size must be positive".into()));
        }
        if hidden.contains(&0) {
            return Err(ClassifyError::InvalidParam("hidden layer of size 0".into()));
        }
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(input);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
        for win in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            let weights = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            layers.push(Layer { weights, biases: vec![0.0; fan_out] });
        }
        Ok(MlpModel { layer_sizes, layers })
    }

    /// Reassembles a model from stored shape and parameters, checking sizes.
    pub fn from_parts(layer_sizes: Vec<usize>, layers: Vec<Layer>) -> Result<Self, ClassifyError> {
        if layer_sizes.len() < 2 || *layer_sizes.last().unwrap() != 1 {
            return Err(ClassifyError::InvalidParam(format!(
                "layer sizes must run input..1, got {layer_sizes:?}"
            )));
        }
        if layers.len() != layer_sizes.len() - 1 {
            return Err(ClassifyError::InvalidParam(format!(
                "{} layers for {} sizes",
                layers.len(),
                layer_sizes.len()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (layer_sizes[i], layer_sizes[i + 1]);
            if layer.weights.len() != fan_in * fan_out || layer.biases.len() != fan_out {
                return Err(ClassifyError::InvalidParam(format!(
                    "layer {i} parameter sizes do not match shape {fan_in}x{fan_out}"
                )));
            }
        }
        Ok(MlpModel { layer_sizes, layers })
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Forward pass returning the pre-sigmoid output (logit).
    fn logit(&self, x: &[f64]) -> f64 {
        let mut act = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let fan_in = self.layer_sizes[li];
            let fan_out = self.layer_sizes[li + 1];
            let mut next = vec![0.0; fan_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * fan_in..(o + 1) * fan_in];
                let mut z = layer.biases[o];
                for (w, a) in row.iter().zip(&act) {
                    z += w * a;
                }
                *slot = if li + 1 < self.layers.len() { z.max(0.0) } else { z };
            }
            act = next;
        }
        act[0]
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy from the logit.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln()
}

/// Confidence in [0, 1] that `x` belongs to the positive class.
pub fn predict(model: &MlpModel, x: &[f64]) -> Result<f64, ClassifyError> {
    if x.len() != model.input_size() {
        return Err(ClassifyError::SizeMismatch { expected: model.input_size(), got: x.len() });
    }
    Ok(sigmoid(model.logit(x)))
}

/// Mean binary cross-entropy of the model over a dataset.
pub fn mean_loss(model: &MlpModel, features: &[Vec<f64>], labels: &[bool]) -> f64 {
    let mut acc = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        acc += bce_from_logit(model.logit(x), f64::from(y));
    }
    acc / features.len() as f64
}

/// Trains a binary classifier; see `train_binary_with_report` for the loss
/// trace variant.
pub fn train_binary(
    features: &[Vec<f64>],
    labels: &[bool],
    hidden: &[usize],
    hyper: &TrainHyper,
) -> Result<MlpModel, ClassifyError> {
    train_binary_with_report(features, labels, hidden, hyper).map(|(m, _)| m)
}

/// Mini-batch gradient descent on binary cross-entropy. Deterministic for a
/// fixed seed. Fails if the labels are all one class or the loss stops being
/// finite (divergence, reported with the epoch it happened in).
pub fn train_binary_with_report(
    features: &[Vec<f64>],
    labels: &[bool],
    hidden: &[usize],
    hyper: &TrainHyper,
) -> Result<(MlpModel, TrainReport), ClassifyError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(ClassifyError::InvalidParam(format!(
            "{} feature vectors vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let input = features[0].len();
    for x in features {
        if x.len() != input {
            return Err(ClassifyError::SizeMismatch { expected: input, got: x.len() });
        }
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(ClassifyError::DegenerateLabels);
    }
    if hyper.batch == 0 || hyper.epochs == 0 || !(hyper.learning_rate > 0.0) {
        return Err(ClassifyError::InvalidParam(
            "batch, epochs and learning rate must be positive".into(),
        ));
    }

    let mut model = MlpModel::init(input, hidden, hyper.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let initial_loss = mean_loss(&model, features, labels);
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let n_layers = model.layers.len();

    // Per-layer activations cached for one example at a time.
    let mut order: Vec<usize> = (0..features.len()).collect();
    for epoch in 0..hyper.epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(hyper.batch) {
            // Accumulate mean gradients over the mini-batch.
            let mut grad_w: Vec<Vec<f64>> =
                model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
            let mut grad_b: Vec<Vec<f64>> =
                model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect();
            for &idx in chunk {
                let x = &features[idx];
                let y = f64::from(labels[idx]);
                // Forward with caches. acts[l] is the input to layer l.
                let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
                acts.push(x.clone());
                for (li, layer) in model.layers.iter().enumerate() {
                    let fan_in = model.layer_sizes[li];
                    let fan_out = model.layer_sizes[li + 1];
                    let prev = &acts[li];
                    let mut out = vec![0.0; fan_out];
                    for (o, slot) in out.iter_mut().enumerate() {
                        let row = &layer.weights[o * fan_in..(o + 1) * fan_in];
                        let mut z = layer.biases[o];
                        for (w, a) in row.iter().zip(prev) {
                            z += w * a;
                        }
                        *slot = if li + 1 < n_layers { z.max(0.0) } else { z };
                    }
                    acts.push(out);
                }
                // Output delta for sigmoid + cross-entropy is (yhat - y).
                let mut delta = vec![sigmoid(acts[n_layers][0]) - y];
                for li in (0..n_layers).rev() {
                    let fan_in = model.layer_sizes[li];
                    let fan_out = model.layer_sizes[li + 1];
                    let prev = &acts[li];
                    for o in 0..fan_out {
                        grad_b[li][o] += delta[o];
                        let row = &mut grad_w[li][o * fan_in..(o + 1) * fan_in];
                        for (g, a) in row.iter_mut().zip(prev) {
                            *g += delta[o] * a;
                        }
                    }
                    if li > 0 {
                        // Backpropagate through weights and the rectifier mask.
                        let mut next = vec![0.0; fan_in];
                        let layer = &model.layers[li];
                        for (i, nd) in next.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for (o, d) in delta.iter().enumerate() {
                                acc += layer.weights[o * fan_in + i] * d;
                            }
                            *nd = if acts[li][i] > 0.0 { acc } else { 0.0 };
                        }
                        delta = next;
                    }
                }
            }
            let scale = hyper.learning_rate / chunk.len() as f64;
            for li in 0..n_layers {
                for (w, g) in model.layers[li].weights.iter_mut().zip(&grad_w[li]) {
                    *w -= scale * g;
                }
                for (b, g) in model.layers[li].biases.iter_mut().zip(&grad_b[li]) {
                    *b -= scale * g;
                }
            }
        }
        let loss = mean_loss(&model, features, labels);
        if !loss.is_finite() {
            return Err(ClassifyError::Divergence { epoch });
        }
        epoch_losses.push(loss);
    }
    let final_loss = *epoch_losses.last().unwrap_or(&initial_loss);
    Ok((model, TrainReport { initial_loss, final_loss, epoch_losses }))
}

/// Fisher-Yates with our seeded generator (avoids pulling in extra traits).
fn shuffle(xs: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}
