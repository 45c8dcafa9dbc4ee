use std::collections::BTreeMap;

use super::tensor::ParameterStore;

/// Adam with bias correction. Moment buffers are keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(10.0), step: 0, moments: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients currently stored in `store`.
    /// Parameters rejected by `trainable` are left untouched.
    pub fn step(&mut self, store: &mut ParameterStore, trainable: impl Fn(&str) -> bool) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = store
                    .iter()
                    .filter(|(n, _)| trainable(n))
                    .flat_map(|(_, p)| p.grad.data().iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > c { c / norm } else { 1.0 }
            }
            None => 1.0,
        };
        for (name, p) in store.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let n = p.value.len();
            let (m, v) = self.moments.entry(name.to_string()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grads = p.grad.data();
            let vals = p.value.data_mut();
            for i in 0..n {
                let g = grads[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                vals[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
