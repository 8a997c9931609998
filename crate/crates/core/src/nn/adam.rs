use ndarray::Array2;

use super::graph::Grads;
use super::param::{ParamId, ParamStore};

/// Adaptive-moment gradient descent with per-parameter state.
///
/// State tensors are allocated lazily on the first step that touches a
/// parameter, so one optimizer can serve a store shared between stages.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Option<Array2<f64>>>,
    v: Vec<Option<Array2<f64>>>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: (0..n_params).map(|_| None).collect(),
            v: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Apply one update for every parameter with a gradient present.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<ParamId> = grads.iter_present().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id).unwrap();
            let m = self.m[id.index()].get_or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v[id.index()].get_or_insert_with(|| Array2::zeros(g.dim()));
            let value = store.get_mut(id);
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}
