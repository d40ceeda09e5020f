use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Adam with bias correction. Moment accumulators are kept per parameter,
/// keyed by tensor identity, and start at zero.
pub struct AdamState {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    first_moment: HashMap<u64, Vec<f64>>,
    second_moment: HashMap<u64, Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Result<Self> {
        Self::with_betas(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 {
            return Err(Error::config(format!(
                "invalid Adam hyperparameters beta1={beta1} beta2={beta2} epsilon={epsilon}"
            )));
        }
        Ok(AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first_moment: HashMap::new(),
            second_moment: HashMap::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over `params` from their accumulated grads. Grads are
    /// left untouched; the caller zeroes them between steps.
    pub fn step(&mut self, params: &[Tensor]) {
        self.step += 1;
        let t = self.step;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for p in params {
            let grad = p.grad();
            let m = self
                .first_moment
                .entry(p.id())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .second_moment
                .entry(p.id())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let mut values = p.values();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.set_values(&values);
        }
    }
}

/// Scale all grads so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(params: &[Tensor], max_norm: f64) {
    let total: f64 = params
        .iter()
        .map(|p| p.grad().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let factor = max_norm / total;
        for p in params {
            let scaled: Vec<f64> = p.grad().iter().map(|g| g * factor).collect();
            let mut d = p.data.borrow_mut();
            d.grad.copy_from_slice(&scaled);
        }
    }
}

/// Weight-matrix initialization: normal(0, 0.02).
pub fn init_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, 0.02).expect("valid normal");
    let numel: usize = shape.iter().product();
    let values: Vec<f64> = (0..numel).map(|_| normal.sample(rng)).collect();
    Tensor::param(shape, values).expect("positive shape")
}

/// Bias initialization: zeros.
pub fn init_zeros(shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    Tensor::param(shape, vec![0.0; numel]).expect("positive shape")
}
