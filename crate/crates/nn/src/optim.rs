use crate::graph::Gradients;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<Tensor<T>>>,
    second: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as f64;
        let lr_t = learning_rate * (1.0 - beta2.powf(t)).sqrt() / (1.0 - beta1.powf(t));
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let (lr, eps) = (T::from_f64_lossy(lr_t), T::from_f64_lossy(epsilon));
        // epsilon is applied to the bias-corrected second moment
        let eps_hat = eps * T::from_f64_lossy((1.0 - beta2.powf(t)).sqrt());
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.param(id) else { continue };
            let i = id.index();
            let m = self.first[i].get_or_insert_with(|| Tensor::zeros(g.dims()));
            let v = self.second[i].get_or_insert_with(|| Tensor::zeros(g.dims()));
            let w = store.get_mut(id);
            for (((wv, mv), vv), &gv) in w.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mv = b1 * *mv + c1 * gv;
                *vv = b2 * *vv + c2 * gv * gv;
                *wv -= lr * *mv / (vv.sqrt() + eps_hat);
            }
        }
    }
}
