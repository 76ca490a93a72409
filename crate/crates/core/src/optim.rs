//! Adam with bias correction, plus Polyak averaging of parameter sets.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::scalar::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state for one parameter set. Moments are created as zeros on
/// the first step, sized from the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Rebuilds a state from stored moments, e.g. when loading a checkpoint.
    pub fn from_parts(lr: f64, t: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Self {
        Adam { t, m, v, ..Adam::new(lr) }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        if p.len() != g.len() {
            return Err(Error::shape("adam tensors", p.len(), g.len()));
        }
        for (pi, gi) in p.iter().zip(&g) {
            if pi.shape() != gi.shape() {
                return Err(Error::shape("adam tensor", pi.shape(), gi.shape()));
            }
        }
        if self.m.is_empty() {
            self.m = g.iter().map(|t| alloc::vec![T::zero(); t.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != g.len() || self.m.iter().zip(&g).any(|(m, t)| m.len() != t.len()) {
            return Err(Error::shape("adam moments", self.m.len(), g.len()));
        }

        self.t += 1;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let step = T::from_f64(self.lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / libm::sqrt(bc2));
        let eps = T::from_f64(self.eps);
        for ((param, grad), (m, v)) in p.iter_mut().zip(&g).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gr), mi), vi) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gr;
                *vi = b2 * *vi + one_b2 * gr * gr;
                *w -= step * *mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        for t in p.iter() {
            t.ensure_finite("adam update")?;
        }
        Ok(())
    }
}

/// `target <- tau * online + (1 - tau) * target`, tensor by tensor.
pub fn polyak_update<T: Real, P: Parameters<T>>(target: &mut P, online: &P, tau: f64) -> Result<()> {
    let src = online.tensors();
    let mut dst = target.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::shape("polyak tensors", dst.len(), src.len()));
    }
    let tau_t = T::from_f64(tau);
    let keep = T::from_f64(1.0 - tau);
    for (d, s) in dst.iter_mut().zip(&src) {
        if d.shape() != s.shape() {
            return Err(Error::shape("polyak tensor", d.shape(), s.shape()));
        }
        if tau == 1.0 {
            d.data_mut().copy_from_slice(s.data());
            continue;
        }
        for (a, &b) in d.data_mut().iter_mut().zip(s.data()) {
            *a = tau_t * b + keep * *a;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{MlpConfig, MlpParams};
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn zero_gradient_first_step_is_a_no_op() {
        let mut p = Tensor::vector(vec![0.3f64, -1.2]);
        let before = p.clone();
        let mut adam = Adam::new(0.1);
        adam.step(&mut p, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let mut p = Tensor::vector(vec![0.0f64]);
        let mut adam = Adam::new(0.1);
        adam.step(&mut p, &Tensor::vector(vec![1.0])).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-12);
        assert!((p.data()[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn consecutive_steps_are_stateful() {
        let g = Tensor::vector(vec![1.0f64]);
        let mut once = Tensor::vector(vec![0.0f64]);
        let mut adam1 = Adam::new(0.1);
        adam1.step(&mut once, &g).unwrap();
        let mut twice = Tensor::vector(vec![0.0f64]);
        let mut adam2 = Adam::new(0.1);
        adam2.step(&mut twice, &g).unwrap();
        adam2.step(&mut twice, &g).unwrap();
        assert_ne!(once, twice);
        assert_eq!(adam2.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::vector(vec![0.0f64; 3]);
        let mut adam = Adam::new(0.1);
        assert!(adam.step(&mut p, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn polyak_edge_cases() {
        let online = Tensor::vector(vec![1.0f64]);
        let mut t = Tensor::vector(vec![0.0f64]);
        polyak_update(&mut t, &online, 0.005).unwrap();
        assert!((t.data()[0] - 0.005).abs() < 1e-15);

        let cfg = MlpConfig::new(3, 1).hidden(&[4, 4]).layer_norm(true);
        let a = MlpParams::<f32>::seeded(&cfg, 1).unwrap();
        let mut b = MlpParams::<f32>::seeded(&cfg, 2).unwrap();
        let b0 = b.clone();
        polyak_update(&mut b, &a, 0.0).unwrap();
        assert_eq!(b, b0);
        polyak_update(&mut b, &a, 1.0).unwrap();
        assert_eq!(b, a);
    }

    #[test]
    fn polyak_contracts_distance_geometrically() {
        let online = Tensor::vector(vec![2.0f64, -1.0, 0.5]);
        let mut target = Tensor::vector(vec![0.0f64, 0.0, 0.0]);
        let d0 = online.max_abs_diff(&target);
        let tau = 0.05;
        for k in 1..=50 {
            polyak_update(&mut target, &online, tau).unwrap();
            let expected = d0 * (1.0f64 - tau).powi(k);
            assert!((online.max_abs_diff(&target) - expected).abs() < 1e-12);
        }
    }
}
