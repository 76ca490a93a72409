//! Central finite-difference gradient verification (double precision).
//!
//! Only forward evaluations are used here, so these checks stay independent
//! of the analytic backward pass they verify.

use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{MlpConfig, MlpParams, Parameters};
use crate::tensor::Tensor;

/// Differences at or below this magnitude count as agreement regardless of
/// relative error.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            checked: self.checked + other.checked,
        }
    }
}

/// Central differences of `loss` with respect to every parameter of `params`,
/// laid out tensor by tensor in [`Parameters::tensors`] order.
pub fn numerical_gradient<P, F>(params: &P, h: f64, mut loss: F) -> Result<Vec<Vec<f64>>>
where
    P: Parameters<f64> + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let mut p = params.clone();
    let sizes: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    for (ti, &n) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(n);
        for j in 0..n {
            let orig = p.tensors()[ti].data()[j];
            p.tensors_mut()[ti].data_mut()[j] = orig + h;
            let up = loss(&p)?;
            p.tensors_mut()[ti].data_mut()[j] = orig - h;
            let down = loss(&p)?;
            p.tensors_mut()[ti].data_mut()[j] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    Ok(out)
}

pub fn compare_slices(analytic: &[f64], numeric: &[f64]) -> GradReport {
    let mut report = GradReport::default();
    for (&a, &n) in analytic.iter().zip(numeric) {
        let abs = (a - n).abs();
        report.max_abs_error = report.max_abs_error.max(abs);
        if abs > ABS_FLOOR {
            let rel = abs / a.abs().max(n.abs());
            report.max_rel_error = report.max_rel_error.max(rel);
        }
        report.checked += 1;
    }
    report
}

pub fn compare<P: Parameters<f64>>(analytic: &P, numeric: &[Vec<f64>]) -> GradReport {
    analytic
        .tensors()
        .iter()
        .zip(numeric)
        .map(|(t, n)| compare_slices(t.data(), n))
        .fold(GradReport::default(), GradReport::merge)
}

/// Checks parameter and input gradients of `sum(w ⊙ mlp(x))` for a fixed
/// pseudo-random weighting `w`.
pub fn check_mlp(cfg: &MlpConfig, params: &MlpParams<f64>, x: &Tensor<f64>, h: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_F00D);
    let dist = Uniform::new(-1.0, 1.0).expect("valid range");
    let w: Vec<f64> = (0..x.rows() * cfg.output_dim).map(|_| dist.sample(&mut rng)).collect();
    let w = Tensor::matrix(x.rows(), cfg.output_dim, w)?;
    let weighted = |y: &Tensor<f64>| -> f64 { y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum() };

    let (_, cache) = params.forward(cfg, x)?;
    let (grads, dx) = params.backward(cfg, &cache, &w)?;

    let numeric = numerical_gradient(params, h, |p| Ok(weighted(&p.predict(cfg, x)?)))?;
    let mut report = compare(&grads, &numeric);

    let numeric_x = numerical_gradient(x, h, |xp| Ok(weighted(&params.predict(cfg, xp)?)))?;
    report = report.merge(compare(&dx, &numeric_x));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_has_exact_central_difference() {
        let x = Tensor::vector(alloc::vec![1.0, -2.0, 0.5]);
        let g = numerical_gradient(&x, 1e-4, |p: &Tensor<f64>| Ok(p.data().iter().map(|v| v * v).sum())).unwrap();
        for (gi, xi) in g[0].iter().zip(x.data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-9);
        }
    }

    #[test]
    fn floor_suppresses_tiny_differences() {
        let r = compare_slices(&[1e-12, 1.0], &[3e-12, 1.0 + 1e-7]);
        assert!(r.max_rel_error < 2e-7);
        assert_eq!(r.checked, 2);
    }
}
