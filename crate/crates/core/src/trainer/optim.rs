//! RMSProp and gradient clipping.

use crate::error::{Error, Result};
use crate::numdiff::{ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
    /// Second-moment accumulators, one per parameter in store order.
    pub accum: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(store: &ParamStore, rho: f64, eps: f64) -> Self {
        let accum = store
            .iter()
            .map(|(_, p)| Tensor::new(p.value.shape().to_vec(), vec![0.0; p.value.len()]).expect("shape of an existing tensor"))
            .collect();
        RmsProp { rho, eps, accum }
    }

    /// `v ← ρv + (1−ρ)g²`, `θ ← θ − lr·g/(√v + ε)` for every unfrozen
    /// parameter; all gradients are zeroed afterwards.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.accum.len() != store.len() {
            return Err(Error::contract("optimizer state does not match the parameter store"));
        }
        for ((_, p), v) in store.iter_mut().zip(&mut self.accum) {
            if p.frozen {
                continue;
            }
            let g = p.grad.data();
            let theta = p.value.data_mut();
            for ((t, v), &g) in theta.iter_mut().zip(v.data_mut()).zip(g) {
                *v = self.rho * *v + (1.0 - self.rho) * g * g;
                *t -= lr * g / (v.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let n = store.grad_norm();
    if n > max_norm {
        store.scale_grads(max_norm / n);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore, crate::numdiff::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(x)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut s, id) = scalar_store(1.5);
        let mut opt = RmsProp::new(&s, 0.9, 1e-8);
        opt.step(&mut s, 0.1).unwrap();
        assert_eq!(s.get(id).value.item(), 1.5);
    }

    #[test]
    fn first_step_by_hand() {
        let (mut s, id) = scalar_store(1.0);
        let mut opt = RmsProp::new(&s, 0.9, 1e-8);
        s.get_mut(id).grad = Tensor::scalar(1.0);
        opt.step(&mut s, 0.001).unwrap();
        let expect = 1.0 - 0.001 / (0.1f64.sqrt() + 1e-8);
        assert!((s.get(id).value.item() - expect).abs() < 1e-15);
        assert_eq!(s.get(id).grad.item(), 0.0);
        assert!((opt.accum[0].item() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::row_vector(vec![3.0, -2.0, 0.5])).unwrap();
        let target = [1.0, 0.5, -1.0];
        let mut opt = RmsProp::new(&s, 0.9, 1e-8);
        for step in 0..500 {
            let lr = 0.1 * 0.98f64.powi(step);
            let g: Vec<f64> = s.get(id).value.data().iter().zip(target).map(|(x, t)| 2.0 * (x - t)).collect();
            s.get_mut(id).grad = Tensor::row_vector(g);
            opt.step(&mut s, lr).unwrap();
        }
        for (x, t) in s.get(id).value.data().iter().zip(target) {
            assert!((x - t).abs() < 1e-6, "{x} vs {t}");
        }
    }

    #[test]
    fn frozen_parameters_stay_put() {
        let (mut s, id) = scalar_store(2.0);
        s.set_frozen(id, true);
        let mut opt = RmsProp::new(&s, 0.9, 1e-8);
        s.get_mut(id).grad = Tensor::scalar(1.0);
        opt.step(&mut s, 0.5).unwrap();
        assert_eq!(s.get(id).value.item(), 2.0);
    }

    #[test]
    fn clipping() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::row_vector(vec![0.0, 0.0])).unwrap();
        s.get_mut(id).grad = Tensor::row_vector(vec![3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut s, 10.0), 5.0);
        assert_eq!(s.get(id).grad.data(), &[3.0, 4.0]);
        clip_grad_norm(&mut s, 1.0);
        let g = s.get(id).grad.data();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
