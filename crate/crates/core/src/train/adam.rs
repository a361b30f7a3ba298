use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm above which gradients are rescaled.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("learning_rate", self.learning_rate > 0.0),
            ("beta1", (0.0..1.0).contains(&self.beta1)),
            ("beta2", (0.0..1.0).contains(&self.beta2)),
            ("adam_eps", self.eps > 0.0),
            ("clip_norm", self.clip_norm > 0.0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(Error::Config(format!("{name} is out of range"))),
            None => Ok(()),
        }
    }
}

/// Bias-corrected Adam over a fixed list of parameter buffers.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    steps: i32,
}

/// What one optimizer step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            config,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            steps: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Clips `grads` to the global norm limit, then updates `params` in
    /// place. `names` label the buffers in error messages. Nothing is
    /// modified when a gradient is not finite.
    pub fn step(&mut self, names: &[&str], params: &mut [&mut [T]], grads: &[&[T]]) -> Result<StepReport> {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        let mut sq = 0.0f64;
        for (i, g) in grads.iter().enumerate() {
            assert_eq!(g.len(), params[i].len(), "gradient size of {}", names[i]);
            for &x in g.iter() {
                let x = x.to_f64_lossy();
                if !x.is_finite() {
                    return Err(Error::Divergence(format!("non-finite gradient for {}", names[i])));
                }
                sq += x * x;
            }
        }
        let grad_norm = sq.sqrt();
        let clipped = grad_norm > self.config.clip_norm;
        let scale = if clipped { self.config.clip_norm / grad_norm } else { 1.0 };

        self.steps += 1;
        let c = &self.config;
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let corr1 = T::from_f64_lossy(1.0 - c.beta1.powi(self.steps));
        let corr2 = T::from_f64_lossy(1.0 - c.beta2.powi(self.steps));
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.eps);
        let scale = T::from_f64_lossy(scale);
        let one = T::one();
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let g = grads[i][j] * scale;
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepReport { grad_norm, clipped })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grads: &[Vec<f64>], params: &mut [Vec<f64>], cfg: AdamConfig) -> Result<StepReport> {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        let mut adam = Adam::new(cfg, &sizes);
        let names: Vec<String> = (0..params.len()).map(|i| format!("p{i}")).collect();
        let names: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let mut refs: Vec<&mut [f64]> = params.iter_mut().map(|p| p.as_mut_slice()).collect();
        let grefs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        adam.step(&names, &mut refs, &grefs)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![vec![1.0, -2.0, 3.0]];
        run(&[vec![0.0; 3]], &mut params, AdamConfig::default()).unwrap();
        assert_eq!(params, vec![vec![1.0, -2.0, 3.0]]);
    }

    #[test]
    fn first_step_moves_each_element_by_about_the_learning_rate() {
        let grads = vec![vec![0.3, -1.2, 0.001, 2.0]];
        let mut params = vec![vec![0.0; 4]];
        let cfg = AdamConfig::default();
        run(&grads, &mut params, cfg.clone()).unwrap();
        for (p, g) in params[0].iter().zip(&grads[0]) {
            // bias-corrected first step: lr * g / (|g| + eps)
            let expected = -cfg.learning_rate * g / (g.abs() + cfg.eps);
            assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");
            assert!((p.abs() - cfg.learning_rate).abs() < 1e-7);
        }
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        // norm 13 spread over two buffers
        let grads = vec![vec![3.0, 4.0], vec![12.0]];
        let mut params = vec![vec![0.0; 2], vec![0.0]];
        let report = run(&grads, &mut params, AdamConfig::default()).unwrap();
        assert!(report.clipped);
        assert!((report.grad_norm - 13.0).abs() < 1e-12);
        let small = vec![vec![0.3, 0.4]];
        let report = run(&small, &mut [vec![0.0; 2]], AdamConfig::default()).unwrap();
        assert!(!report.clipped);
    }

    #[test]
    fn clipped_moments_use_scaled_gradient() {
        let grads = vec![vec![30.0, 40.0]];
        let sizes = [2];
        let mut adam = Adam::<f64>::new(AdamConfig::default(), &sizes);
        let mut p = vec![0.0; 2];
        adam.step(&["w"], &mut [p.as_mut_slice()], &[grads[0].as_slice()]).unwrap();
        // scaled gradient is (3, 4); m = 0.1·g
        assert!((adam.m[0][0] - 0.3).abs() < 1e-12);
        assert!((adam.m[0][1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let grads = vec![vec![0.0], vec![f64::NAN]];
        let mut params = vec![vec![1.0], vec![2.0]];
        match run(&grads, &mut params, AdamConfig::default()) {
            Err(Error::Divergence(msg)) => assert!(msg.contains("p1"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert_eq!(params, vec![vec![1.0], vec![2.0]]);
    }
}
