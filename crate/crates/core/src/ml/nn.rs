//! Feed-forward networks with tanh hidden layers and a single logistic output
//! unit, trained on class-weighted cross-entropy.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::math::{logistic, logit_loss, sqrt, tanh};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let w = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.bias[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>());
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
}

impl Network {
    /// Glorot-uniform weights and zero biases. `hidden` lists hidden widths;
    /// the output layer has one unit.
    pub fn init<R: Rng>(n_inputs: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = sqrt(6.0 / (n_in + n_out) as f64);
                Dense {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| rng.gen_range(-limit..limit)).collect(),
                    bias: vec![0.0; n_out],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    /// Parameters flattened layer by layer (weights, then biases).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    /// Output logit for one input row.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            l.forward(&a, &mut z);
            if k < last {
                z.iter_mut().for_each(|v| *v = tanh(*v));
            }
            core::mem::swap(&mut a, &mut z);
        }
        a[0]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        logistic(self.logit(x))
    }

    /// Weighted mean cross-entropy over `rows` and its gradient with respect
    /// to [`params`](Self::params), by backpropagation.
    pub fn loss_and_gradient(&self, x: &Matrix, labels: &[bool], weights: &[f64], rows: &[usize]) -> (f64, Vec<f64>) {
        let n_layers = self.layers.len();
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let wsum: f64 = rows.iter().map(|&i| weights[i]).sum();
        let mut loss = 0.0;
        // activations[k] is the input to layer k; activations[n_layers] = logit
        let mut activations: Vec<Vec<f64>> = vec![Vec::new(); n_layers + 1];
        let mut z = Vec::new();
        for &i in rows {
            activations[0].clear();
            activations[0].extend_from_slice(x.row(i));
            for k in 0..n_layers {
                self.layers[k].forward(&activations[k], &mut z);
                if k + 1 < n_layers {
                    z.iter_mut().for_each(|v| *v = tanh(*v));
                }
                activations[k + 1].clear();
                activations[k + 1].extend_from_slice(&z);
            }
            let logit = activations[n_layers][0];
            let c = weights[i] / wsum;
            loss += c * logit_loss(logit, labels[i]);
            let y = if labels[i] { 1.0 } else { 0.0 };
            // d loss / d pre-activation of the current layer
            let mut delta = vec![c * (logistic(logit) - y)];
            for k in (0..n_layers).rev() {
                let l = &self.layers[k];
                let input = &activations[k];
                let (gw, gb) = &mut grads[k];
                for o in 0..l.n_out {
                    gb[o] += delta[o];
                    let row = &mut gw[o * l.n_in..(o + 1) * l.n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += delta[o] * a;
                    }
                }
                if k > 0 {
                    // input = tanh(pre-activation) of layer k-1
                    let mut prev = vec![0.0; l.n_in];
                    for o in 0..l.n_out {
                        let w = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                        for (p, wv) in prev.iter_mut().zip(w) {
                            *p += delta[o] * wv;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(input) {
                        *p *= 1.0 - a * a;
                    }
                    delta = prev;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        (loss, flat)
    }
}

/// Outcome of a gradient-descent run.
pub struct NetTraining {
    pub network: Network,
    /// Training loss per epoch.
    pub history: Vec<f64>,
}

/// Reported when the loss stops being finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diverged {
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DescentSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
}

/// Gradient descent with heavy-ball momentum. Mini-batch order for epoch `e`
/// comes from the stream `(seed, MINIBATCH, e)`.
pub fn train_network(
    x: &Matrix,
    labels: &[bool],
    weights: &[f64],
    hidden: &[usize],
    settings: DescentSettings,
    seed: u64,
) -> Result<NetTraining, Diverged> {
    let mut net = Network::init(x.cols(), hidden, &mut stream_rng(seed, stream::INIT, 0));
    let mut params = net.params();
    let mut velocity = vec![0.0; params.len()];
    let all: Vec<usize> = (0..x.rows()).collect();
    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 1..=settings.epochs {
        let batches: Vec<Vec<usize>> = match settings.batch_size {
            None => vec![all.clone()],
            Some(size) => {
                let mut order = all.clone();
                order.shuffle(&mut stream_rng(seed, stream::MINIBATCH, epoch as u64));
                order.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
            }
        };
        let mut epoch_loss = 0.0;
        let mut seen = 0.0;
        for batch in &batches {
            let (loss, grad) = net.loss_and_gradient(x, labels, weights, batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Diverged { epoch });
            }
            let bw: f64 = batch.iter().map(|&i| weights[i]).sum();
            epoch_loss += loss * bw;
            seen += bw;
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = settings.momentum * *v - settings.learning_rate * g;
                *p += *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Diverged { epoch });
            }
            net.set_params(&params);
        }
        history.push(epoch_loss / seen);
    }
    Ok(NetTraining { network: net, history })
}
