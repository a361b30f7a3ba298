use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SparseVector;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    /// L2 penalty `λ` on the weights (not the bias).
    pub l2: f64,
    pub epochs: usize,
    /// Initial step size, divided by the mean squared feature norm.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            l2: 1e-6,
            epochs: 10,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config("l2 must be finite and nonnegative".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Multinomial logistic regression. `weights` is row-major `[K × dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        LinearModel {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn logits(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let row = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + x.entries().iter().map(|&(j, v)| row[j] * v).sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, x: &SparseVector) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, x: &SparseVector) -> usize {
        crate::train::argmax(&self.logits(x))
    }

    pub fn accuracy(&self, xs: &[SparseVector], labels: &[usize]) -> f64 {
        let correct = xs.iter().zip(labels).filter(|(x, &l)| self.predict(x) == l).count();
        correct as f64 / xs.len().max(1) as f64
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Mean cross-entropy plus `l2·‖W‖²/2`.
    pub fn objective(&self, xs: &[SparseVector], labels: &[usize], l2: f64) -> f64 {
        let ce: f64 = xs
            .iter()
            .zip(labels)
            .map(|(x, &l)| {
                let z = self.logits(x);
                log_sum_exp(&z) - z[l]
            })
            .sum();
        ce / xs.len() as f64 + 0.5 * l2 * self.weight_norm_sq()
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// Weights stored as `scale · v` so the L2 shrink of every step costs O(1).
struct ScaledWeights {
    v: Vec<f64>,
    scale: f64,
}

impl ScaledWeights {
    fn shrink(&mut self, factor: f64) {
        if factor <= 0.0 {
            self.v.fill(0.0);
            self.scale = 1.0;
            return;
        }
        self.scale *= factor;
        if self.scale < 1e-9 {
            self.fold();
        }
    }

    fn fold(&mut self) {
        for w in &mut self.v {
            *w *= self.scale;
        }
        self.scale = 1.0;
    }
}

/// Fits `classes`-way logistic regression by SGD in a seeded order, with
/// weight step size `η_t = η₀ / (1 + η₀·λ·t)` and bias step size
/// `η₀ / (1 + t/N)`. Biases start at the smoothed log class prior.
/// The model with the lowest full training objective over all epochs (and
/// the starting point) is returned. With a single class present the result
/// is a constant predictor.
pub fn train_linear(
    xs: &[SparseVector],
    labels: &[usize],
    classes: usize,
    dim: usize,
    config: &LinearConfig,
) -> Result<LinearModel> {
    config.validate()?;
    if xs.is_empty() || xs.len() != labels.len() {
        return Err(Error::Config("need a nonempty train set with one label per document".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label(format!("label {l} not below class count {classes}")));
    }
    if let Some(x) = xs.iter().find(|x| x.entries().last().is_some_and(|e| e.0 >= dim)) {
        return Err(Error::dim("train_linear", format!("feature id {} beyond {dim}", x.entries().last().unwrap().0)));
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let mut model = LinearModel::zeros(classes, dim);
    let n = xs.len() as f64;
    if counts.iter().filter(|&&c| c > 0).count() == 1 {
        warn!("training data has a single class; fitting a constant predictor");
        for (b, &c) in model.bias.iter_mut().zip(&counts) {
            *b = if c > 0 { 0.0 } else { -50.0 };
        }
        return Ok(model);
    }
    for (b, &c) in model.bias.iter_mut().zip(&counts) {
        *b = ((c as f64 + 1.0) / (n + classes as f64)).ln();
    }

    let mean_norm_sq = xs.iter().map(|x| x.norm_sq()).sum::<f64>() / n;
    let eta0 = config.learning_rate / mean_norm_sq.max(1e-12);
    let lambda = config.l2;
    let mut w = ScaledWeights { v: vec![0.0; classes * dim], scale: 1.0 };
    let mut bias = model.bias.clone();
    let mut best = (model.objective(xs, labels, lambda), model.clone());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut t = 0u64;
    let mut probs = vec![0.0; classes];
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &xs[i];
            let eta = eta0 / (1.0 + eta0 * lambda * t as f64);
            let eta_bias = eta0 / (1.0 + t as f64 / n);
            t += 1;
            for (k, p) in probs.iter_mut().enumerate() {
                let row = &w.v[k * dim..(k + 1) * dim];
                *p = bias[k] + w.scale * x.entries().iter().map(|&(j, v)| row[j] * v).sum::<f64>();
            }
            let lse = log_sum_exp(&probs);
            for p in probs.iter_mut() {
                *p = (*p - lse).exp();
            }
            probs[labels[i]] -= 1.0;
            w.shrink(1.0 - eta * lambda);
            for (k, &d) in probs.iter().enumerate() {
                let step = eta * d / w.scale;
                let row = &mut w.v[k * dim..(k + 1) * dim];
                for &(j, v) in x.entries() {
                    row[j] -= step * v;
                }
                bias[k] -= eta_bias * d;
            }
        }
        w.fold();
        let candidate = LinearModel {
            classes,
            dim,
            weights: w.v.clone(),
            bias: bias.clone(),
        };
        if candidate.weights.iter().chain(&candidate.bias).any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("linear model weights became non-finite in epoch {}", epoch + 1)));
        }
        let obj = candidate.objective(xs, labels, lambda);
        log::debug!("linear epoch {} objective {obj:.6}", epoch + 1);
        if obj < best.0 {
            best = (obj, candidate);
        }
    }
    Ok(best.1)
}
