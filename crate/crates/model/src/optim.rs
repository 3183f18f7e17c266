//! Adam with decoupled weight decay, gradient clipping and a step schedule.

use cada_tensor::{ParamStore, Tensor};

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(store: &ParamStore<f32>, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: store.zero_grads(),
            v: store.zero_grads(),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore<f32>, grads: &[Vec<f32>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let step = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let p = store.get_mut(id).data_mut();
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                p[j] = p[j] * decay - step * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
    }

    /// Moment buffers as named tensors for checkpoints.
    pub fn state_entries(&self, store: &ParamStore<f32>) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        for id in store.ids() {
            let shape = store.get(id).shape().to_vec();
            let name = store.name(id);
            out.push((format!("adam.m.{name}"), Tensor::new(shape.clone(), self.m[id.index()].clone()).expect("same shape")));
            out.push((format!("adam.v.{name}"), Tensor::new(shape, self.v[id.index()].clone()).expect("same shape")));
        }
        out
    }

    /// Restores moments saved by [`state_entries`](Self::state_entries);
    /// missing entries leave zeros.
    pub fn load_state(&mut self, store: &ParamStore<f32>, entries: &[(String, Tensor<f32>)], step: u64) {
        for id in store.ids() {
            let name = store.name(id);
            for (prefix, buf) in [("adam.m.", &mut self.m), ("adam.v.", &mut self.v)] {
                let key = format!("{prefix}{name}");
                if let Some((_, t)) = entries.iter().find(|(n, _)| *n == key) {
                    if t.numel() == buf[id.index()].len() {
                        buf[id.index()].copy_from_slice(t.data());
                    }
                }
            }
        }
        self.step = step;
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

pub fn grad_norm(grads: &[Vec<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Learning rate multiplied by `gamma` once each milestone epoch is over.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiStepLr {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepLr {
    /// Rate used during (1-based) `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m < epoch).count();
        self.base * self.gamma.powi(passed as i32)
    }
}
