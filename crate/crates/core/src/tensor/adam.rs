use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use super::value::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter Adam moments, indexed like the [`ParamStore`] they serve.
///
/// Buffers keep empty moment slots.
#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar = f64> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<S>>,
    pub second: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, store: &ParamStore<S>) -> Self {
        let zeros = |p: &super::param::Param<S>| {
            if p.trainable {
                Tensor::zeros(p.value.shape())
            } else {
                Tensor::zeros(&[0])
            }
        };
        Self { config, step: 0, first: store.iter().map(|(_, p)| zeros(p)).collect(), second: store.iter().map(|(_, p)| zeros(p)).collect() }
    }

    /// One bias-corrected Adam update of every trainable parameter that holds
    /// a gradient. Parameters without a gradient keep their value and moments.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(Error::shape("adam_step", format!("{} moment slots for {} parameters", self.first.len(), store.len())));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bias1 = S::lit(1.0 - c.beta1.powi(t));
        let bias2 = S::lit(1.0 - c.beta2.powi(t));
        let (lr, b1, b2, eps) = (S::lit(c.lr), S::lit(c.beta1), S::lit(c.beta2), S::lit(c.eps));
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let i = id.index();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::shape("adam_step", format!("moment shape mismatch for {}", p.name)));
            }
            let Some(g) = p.grad.as_ref() else { continue };
            if g.shape() != p.value.shape() {
                return Err(Error::shape("adam_step", format!("gradient shape mismatch for {}", p.name)));
            }
            let (m, v) = (m.data_mut(), v.data_mut());
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Mode, Tape};

    fn single(x: f64) -> (ParamStore, crate::tensor::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(x)).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut store, id) = single(1.5);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        for _ in 0..3 {
            store.get_mut(id).grad = Some(Tensor::scalar(0.0));
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(id).data()[0], 1.5);
        assert_eq!(adam.first[0].data()[0], 0.0);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let (mut store, id) = single(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.first[0] = Tensor::scalar(1.0);
        adam.second[0] = Tensor::scalar(1.0);
        store.get_mut(id).grad = Some(Tensor::scalar(0.0));
        adam.step(&mut store).unwrap();
        assert!((adam.first[0].data()[0] - 0.9).abs() < 1e-15);
        assert!((adam.second[0].data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is
        // lr * g / (|g| + eps).
        let (mut store, id) = single(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.get_mut(id).grad = Some(Tensor::scalar(1.0));
        adam.step(&mut store).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((store.value(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn minimizes_shifted_quadratic() {
        let (mut store, id) = single(0.0);
        let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &store);
        for _ in 0..100 {
            let tape = Tape::new(Mode::Train);
            let x = tape.param(&store, id);
            let loss = x.add_scalar(-3.0).square().sum();
            let grads = tape.backward(loss).unwrap();
            store.set_grads(&grads);
            adam.step(&mut store).unwrap();
        }
        let x = store.value(id).data()[0];
        assert!((x - 3.0).abs() < 0.05, "x = {x}");

        // Hand-rolled scalar Adam on the analytic derivative 2(x - 3).
        let (mut r, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (r - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            r -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert!((x - r).abs() < 1e-12, "engine {x} vs reference {r}");
        assert!((r - 2.980_655_437_527_812).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut store, id) = single(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.get_mut(id).grad = Some(Tensor::zeros(&[2]));
        assert!(adam.step(&mut store).is_err());
    }
}
