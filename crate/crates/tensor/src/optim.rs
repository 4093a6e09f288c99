use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let m: Vec<Tensor> = store.iter().map(|p| Tensor::zeros_like(&p.value)).collect();
        let v = m.clone();
        Self { config, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held in `store`.
    /// Gradients are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (k, &g) in grads.iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * g;
                let vk = &mut v.data_mut()[k];
                *vk = beta2 * *vk + (1.0 - beta2) * g * g;
                let m_hat = *mk / bc1;
                let v_hat = *vk / bc2;
                values[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.bump_version();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]));
        let before = store.clone();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..50 {
            adam.step(&mut store);
        }
        for (a, b) in store.iter().zip(before.iter()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(adam.step_count(), 50);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::matrix(1, 3, vec![0.0, 0.0, 0.0]));
        store
            .accumulate_grad(id, &Tensor::matrix(1, 3, vec![3.0, -0.01, 250.0]))
            .unwrap();
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            &store,
        );
        adam.step(&mut store);
        for (&w, &g) in store.value(id).data().iter().zip(&[3.0, -0.01, 250.0]) {
            assert!((w.abs() - 0.01).abs() < 1e-5, "moved by {w}");
            assert_eq!(w.signum(), -f64::signum(g));
        }
        // gradients untouched
        assert_eq!(store.get(id).grad.data(), &[3.0, -0.01, 250.0]);
    }

    #[test]
    fn minimizes_shifted_square() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            &store,
        );
        let mut reached = None;
        for step in 1..=2000 {
            let w = store.value(id).item();
            store.zero_grad();
            store.accumulate_grad(id, &Tensor::scalar(2.0 * (w - 3.0))).unwrap();
            adam.step(&mut store);
            if (store.value(id).item() - 3.0).abs() < 1e-2 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "w = {}", store.value(id).item());
    }
}
