//! Feedforward sigmoid network trained by backpropagation. The
//! output layer has 32 neurons thresholded at 0.5 and interpreted as
//! the binary encoding of the subject id.

use rand::{Rng, RngCore};

use super::classify::ResultSet;
use super::features::FeatureVector;
use super::PipelineError;

pub const DEFAULT_OUTPUT_NEURON_BITS: usize = 32;
pub const DEFAULT_TRAINING_CONSTANT: f64 = 1.0;
pub const DEFAULT_EPOCH_NUMBER: u64 = 64;
pub const DEFAULT_MIN_ERROR: f64 = 0.1;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralNetwork {
    /// Layer sizes, input first.
    layers: Vec<usize>,
    /// weights[l][j][i]: layer l+1 neuron j from layer l neuron i.
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOutcome {
    pub epochs_run: u64,
    pub final_error: f64,
    /// False flags non-convergence: training stopped with the error
    /// still above min_error.
    pub converged: bool,
}

impl NeuralNetwork {
    /// Fixes the layer geometry at generation time.
    pub fn generate(
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let mut layers = vec![inputs];
        layers.extend_from_slice(hidden);
        layers.push(outputs);
        let weights = layers
            .windows(2)
            .map(|w| {
                (0..w[1])
                    .map(|_| (0..w[0]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let biases = layers[1..]
            .iter()
            .map(|&n| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        Self { layers, weights, biases }
    }

    pub fn output_len(&self) -> usize {
        *self.layers.last().unwrap()
    }

    /// Perturbs one weight in place; intended for gradient checks.
    pub fn nudge_weight(&mut self, layer: usize, neuron: usize, input: usize, delta: f64) {
        self.weights[layer][neuron][input] += delta;
    }

    /// Perturbs one bias in place; intended for gradient checks.
    pub fn nudge_bias(&mut self, layer: usize, neuron: usize, delta: f64) {
        self.biases[layer][neuron] += delta;
    }

    /// Activations per layer, input included.
    fn forward(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        for (w_layer, b_layer) in self.weights.iter().zip(&self.biases) {
            let prev = acts.last().unwrap();
            let next: Vec<f64> = w_layer
                .iter()
                .zip(b_layer)
                .map(|(w_row, b)| {
                    sigmoid(w_row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>() + b)
                })
                .collect();
            acts.push(next);
        }
        acts
    }

    pub fn evaluate(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).pop().unwrap()
    }

    /// One backprop step on one sample; returns the sample's squared
    /// error (0.5 * sum (o - t)^2) before the update.
    fn backprop_step(&mut self, input: &[f64], target: &[f64], rate: f64) -> f64 {
        let (error, grads_w, grads_b) = self.gradients(input, target);
        for (w_layer, g_layer) in self.weights.iter_mut().zip(&grads_w) {
            for (w_row, g_row) in w_layer.iter_mut().zip(g_layer) {
                for (w, g) in w_row.iter_mut().zip(g_row) {
                    *w -= rate * g;
                }
            }
        }
        for (b_layer, g_layer) in self.biases.iter_mut().zip(&grads_b) {
            for (b, g) in b_layer.iter_mut().zip(g_layer) {
                *b -= rate * g;
            }
        }
        error
    }

    /// Loss 0.5 * sum (o - t)^2 and its gradients w.r.t. every weight
    /// and bias. Exposed for the finite-difference check.
    #[allow(clippy::type_complexity)]
    pub fn gradients(
        &self,
        input: &[f64],
        target: &[f64],
    ) -> (f64, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let acts = self.forward(input);
        let output = acts.last().unwrap();
        let error: f64 = output
            .iter()
            .zip(target)
            .map(|(o, t)| 0.5 * (o - t) * (o - t))
            .sum();
        // delta = dLoss/dPreactivation, starting at the output layer.
        let mut delta: Vec<f64> = output
            .iter()
            .zip(target)
            .map(|(o, t)| (o - t) * o * (1.0 - o))
            .collect();
        let n_layers = self.weights.len();
        let mut grads_w = vec![Vec::new(); n_layers];
        let mut grads_b = vec![Vec::new(); n_layers];
        for l in (0..n_layers).rev() {
            let prev_act = &acts[l];
            grads_w[l] = delta
                .iter()
                .map(|d| prev_act.iter().map(|a| d * a).collect())
                .collect();
            grads_b[l] = delta.clone();
            if l > 0 {
                delta = (0..self.layers[l])
                    .map(|i| {
                        let upstream: f64 = self.weights[l]
                            .iter()
                            .zip(&delta)
                            .map(|(w_row, d)| w_row[i] * d)
                            .sum();
                        upstream * acts[l][i] * (1.0 - acts[l][i])
                    })
                    .collect();
            }
        }
        (error, grads_w, grads_b)
    }

    /// Online backprop until the mean per-sample error drops below
    /// min_error or the epoch cap is hit.
    pub fn train(
        &mut self,
        dataset: &[(Vec<f64>, Vec<f64>)],
        epochs: u64,
        rate: f64,
        min_error: f64,
    ) -> TrainOutcome {
        let mut mean_error = f64::INFINITY;
        let mut epochs_run = 0;
        for _ in 0..epochs {
            let mut total = 0.0;
            for (input, target) in dataset {
                total += self.backprop_step(input, target, rate);
            }
            mean_error = total / dataset.len() as f64;
            epochs_run += 1;
            if mean_error < min_error {
                break;
            }
        }
        TrainOutcome {
            epochs_run,
            final_error: mean_error,
            converged: mean_error < min_error,
        }
    }

    pub fn train_subject(
        &mut self,
        fv: &FeatureVector,
        subject: u32,
        epochs: u64,
        rate: f64,
        min_error: f64,
    ) -> Result<TrainOutcome, PipelineError> {
        if fv.len() != self.layers[0] {
            return Err(PipelineError::DimensionMismatch { a: self.layers[0], b: fv.len() });
        }
        let target = encode_id(subject, self.output_len());
        Ok(self.train(&[(fv.values.clone(), target)], epochs, rate, min_error))
    }

    /// Thresholds the output layer at 0.5 and reads it as a binary
    /// subject id; the outcome is the distance of the raw outputs to
    /// their thresholded ideal.
    pub fn classify(&self, fv: &FeatureVector) -> Result<ResultSet, PipelineError> {
        if fv.len() != self.layers[0] {
            return Err(PipelineError::DimensionMismatch { a: self.layers[0], b: fv.len() });
        }
        let output = self.evaluate(&fv.values);
        let id = interpret_as_binary(&output);
        let ideal = encode_id(id, output.len());
        let outcome: f64 = output
            .iter()
            .zip(&ideal)
            .map(|(o, t)| (o - t) * (o - t))
            .sum();
        let mut rs = ResultSet::default();
        rs.add_result(id, outcome, format!("subject {id}"));
        Ok(rs)
    }
}

/// Binary target encoding: bit i of the id drives output neuron i
/// (LSB first).
pub fn encode_id(id: u32, bits: usize) -> Vec<f64> {
    (0..bits)
        .map(|i| if i < 32 && (id >> i) & 1 == 1 { 1.0 } else { 0.0 })
        .collect()
}

pub fn interpret_as_binary(output: &[f64]) -> u32 {
    output
        .iter()
        .take(32)
        .enumerate()
        .fold(0u32, |acc, (i, &o)| if o > 0.5 { acc | 1 << i } else { acc })
}
