//! Named parameter storage with AdamW optimizer state.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::TensorError;

#[derive(Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Param {
    fn new(shape: Vec<usize>, value: Vec<f32>) -> Self {
        let n = value.len();
        Param { shape, value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Ordered map of named tensors; iteration order (BTreeMap) is deterministic,
/// which keeps checkpoints and optimizer sweeps reproducible.
#[derive(Default, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], value: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param {name}");
        self.params.insert(name.to_string(), Param::new(shape.to_vec(), value));
    }

    /// Normal(0, std) initialization.
    pub fn insert_normal(&mut self, name: &str, shape: &[usize], std: f32, rng: &mut ChaCha8Rng) {
        let n: usize = shape.iter().product();
        // Box-Muller keeps us off rand_distr for one distribution.
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
            let u2: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
            let r = (-2.0 * u1.ln()).sqrt();
            data.push(r * u2.cos() * std);
            if data.len() < n {
                data.push(r * u2.sin() * std);
            }
        }
        self.insert(name, shape, data);
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![0.0; n]);
    }

    pub fn insert_ones(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![1.0; n]);
    }

    pub fn get(&self, name: &str) -> Result<&Param, TensorError> {
        self.params.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param, TensorError> {
        self.params.get_mut(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_elements(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn total_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn zero_grads_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, p) in self.params.iter_mut() {
            if pred(name) {
                p.grad.fill(0.0);
            }
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[f32]) -> Result<(), TensorError> {
        let p = self.get_mut(name)?;
        if p.grad.len() != grad.len() {
            return Err(TensorError::ShapeMismatch {
                op: "accumulate_grad",
                detail: format!("{}: {} vs {}", name, p.grad.len(), grad.len()),
            });
        }
        for (g, d) in p.grad.iter_mut().zip(grad) {
            *g += d;
        }
        Ok(())
    }

    /// Global-norm gradient clipping; returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f32) -> f32 {
        let mut sq = 0.0f64;
        for p in self.params.values() {
            for &g in &p.grad {
                sq += (g as f64) * (g as f64);
            }
        }
        let norm = sq.sqrt() as f32;
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in self.params.values_mut() {
                for g in p.grad.iter_mut() {
                    *g *= s;
                }
            }
        }
        norm
    }

    /// One AdamW step over every parameter: decoupled weight decay, then
    /// bias-corrected moment update.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.adam_step_where(cfg, |_| true);
    }

    /// AdamW step restricted to parameters the predicate selects; the rest
    /// receive neither the gradient update nor weight decay.
    pub fn adam_step_where(&mut self, cfg: &AdamConfig, train: impl Fn(&str) -> bool) {
        self.adam_step_scaled(cfg, |n| if train(n) { 1.0 } else { 0.0 });
    }

    /// AdamW step with a per-parameter learning-rate multiplier (also
    /// applied to weight decay); a multiplier of zero pins the parameter
    /// exactly while still advancing its moment estimates.
    pub fn adam_step_scaled(&mut self, cfg: &AdamConfig, lr_scale: impl Fn(&str) -> f32) {
        self.step += 1;
        let t = self.step as f32;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (name, p) in self.params.iter_mut() {
            let lr = cfg.lr * lr_scale(name);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.value[i] -= lr * cfg.weight_decay * p.value[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }

    pub fn reset_opt_state(&mut self) {
        self.step = 0;
        for p in self.params.values_mut() {
            p.m.fill(0.0);
            p.v.fill(0.0);
        }
    }
}
