//! Multi-layer perceptrons with optional LayerNorm, written against the
//! row-major [`Tensor`] type.
//!
//! A hidden block is `linear -> [LayerNorm] -> ReLU`; the head is a linear
//! layer followed by the configured [`OutputActivation`]. Forward passes
//! return a [`ForwardCache`] that `backward` consumes to produce exact
//! analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{gemm, Real, Trans};
use crate::tensor::Tensor;

/// Epsilon inside the LayerNorm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Largest hidden depth accepted by [`MlpConfig::validate`].
pub const MAX_DEPTH: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OutputActivation {
    Identity,
    /// `max_action * tanh(x)`
    TanhScaled(f64),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub layer_norm: bool,
    pub output_activation: OutputActivation,
}

impl MlpConfig {
    /// Three hidden layers of width 256, no LayerNorm, identity head.
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_dims: vec![256, 256, 256],
            output_dim,
            layer_norm: false,
            output_activation: OutputActivation::Identity,
        }
    }

    pub fn hidden(mut self, dims: &[usize]) -> Self {
        self.hidden_dims = dims.to_vec();
        self
    }

    pub fn layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }

    pub fn activation(mut self, act: OutputActivation) -> Self {
        self.output_activation = act;
        self
    }

    pub fn depth(&self) -> usize {
        self.hidden_dims.len()
    }

    /// Resizes to `depth` hidden layers, reusing the first layer's width.
    pub fn with_depth(mut self, depth: usize) -> Self {
        let width = self.hidden_dims.first().copied().unwrap_or(256);
        self.hidden_dims = vec![width; depth];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.len() > MAX_DEPTH {
            return Err(Error::InvalidConfig(alloc::format!(
                "hidden depth must be in 1..={MAX_DEPTH}, got {}",
                self.hidden_dims.len()
            )));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("all layer widths must be >= 1".into()));
        }
        if let OutputActivation::TanhScaled(m) = self.output_activation {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::InvalidConfig("max_action must be positive".into()));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every linear layer, head included.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `out × in`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gain: Tensor<T>,
    pub offset: Tensor<T>,
}

/// Weights of one network. `norms` is empty when LayerNorm is off, otherwise
/// it has one entry per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Linear<T>>,
    pub norms: Vec<LayerNormParams<T>>,
}

/// Uniform access to the tensors making up a parameter set, in a fixed order.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<&Tensor<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;
}

impl<T: Real> Parameters<T> for Tensor<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        vec![self]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![self]
    }
}

impl<T: Real> Parameters<T> for MlpParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 2 * self.norms.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(n) = self.norms.get(i) {
                out.push(&n.gain);
                out.push(&n.offset);
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 2 * self.norms.len());
        let mut norms = self.norms.iter_mut();
        for l in self.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = norms.next() {
                out.push(&mut n.gain);
                out.push(&mut n.offset);
            }
        }
        out
    }
}

impl<T: Real> MlpParams<T> {
    /// Fan-in uniform initialisation: weights and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, LayerNorm gain 1 and offset 0.
    pub fn init<R: rand::Rng + ?Sized>(cfg: &MlpConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let dims = cfg.layer_dims();
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let weight = (0..fan_in * fan_out)
                .map(|_| T::from_f64(dist.sample(rng)))
                .collect();
            let bias = (0..fan_out).map(|_| T::from_f64(dist.sample(rng))).collect();
            layers.push(Linear {
                weight: Tensor::matrix(fan_out, fan_in, weight)?,
                bias: Tensor::vector(bias),
            });
            if cfg.layer_norm && i + 1 < dims.len() {
                norms.push(LayerNormParams {
                    gain: Tensor::filled(&[fan_out], T::one()),
                    offset: Tensor::zeros(&[fan_out]),
                });
            }
        }
        Ok(MlpParams { layers, norms })
    }

    pub fn seeded(cfg: &MlpConfig, seed: u64) -> Result<Self> {
        Self::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// All-zero parameters with the layout of `self`.
    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| LayerNormParams {
                    gain: Tensor::zeros(n.gain.shape()),
                    offset: Tensor::zeros(n.offset.shape()),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| LayerNormParams {
                    gain: n.gain.cast(),
                    offset: n.offset.cast(),
                })
                .collect(),
        }
    }

    /// Checks that the parameter layout agrees with `cfg`.
    pub fn check(&self, cfg: &MlpConfig) -> Result<()> {
        let dims = cfg.layer_dims();
        if self.layers.len() != dims.len() {
            return Err(Error::shape("MlpParams layers", dims.len(), self.layers.len()));
        }
        for (l, &(fan_in, fan_out)) in self.layers.iter().zip(&dims) {
            if l.weight.shape() != [fan_out, fan_in] || l.bias.shape() != [fan_out] {
                return Err(Error::shape(
                    "MlpParams layer",
                    (fan_out, fan_in),
                    l.weight.shape(),
                ));
            }
        }
        let want_norms = if cfg.layer_norm { cfg.hidden_dims.len() } else { 0 };
        if self.norms.len() != want_norms {
            return Err(Error::shape("MlpParams norms", want_norms, self.norms.len()));
        }
        for (n, &h) in self.norms.iter().zip(&cfg.hidden_dims) {
            if n.gain.shape() != [h] || n.offset.shape() != [h] {
                return Err(Error::shape("MlpParams norm", h, n.gain.shape()));
            }
        }
        Ok(())
    }

    /// Forward pass that keeps the intermediates needed by [`Self::backward`].
    pub fn forward(&self, cfg: &MlpConfig, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.run(cfg, x, true)
    }

    /// Forward pass without retaining a cache.
    pub fn predict(&self, cfg: &MlpConfig, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(cfg, x, false).map(|(y, _)| y)
    }

    fn run(&self, cfg: &MlpConfig, x: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, ForwardCache<T>)> {
        if x.shape().len() != 2 || x.cols() != cfg.input_dim {
            return Err(Error::shape("mlp input", ("batch", cfg.input_dim), x.shape()));
        }
        x.ensure_finite("mlp input")?;
        debug_assert!(self.check(cfg).is_ok());
        let batch = x.rows();
        let mut hidden = Vec::with_capacity(cfg.hidden_dims.len());
        let mut prev: Option<Tensor<T>> = None;
        let n_hidden = self.layers.len() - 1;
        for (i, layer) in self.layers[..n_hidden].iter().enumerate() {
            let mut z = linear_forward(layer, prev.as_ref().unwrap_or(x), batch);
            let normalized = match self.norms.get(i) {
                Some(norm) => {
                    let inv_std = standardize_rows(&mut z, T::from_f64(LAYER_NORM_EPS));
                    let y = affine_rows(&z, &norm.gain, &norm.offset);
                    let xhat = core::mem::replace(&mut z, y);
                    keep.then_some(Normalized { xhat, inv_std })
                }
                None => None,
            };
            for v in z.data_mut() {
                *v = v.max(T::zero());
            }
            if keep {
                hidden.push(HiddenCache {
                    input: prev.take().unwrap_or_else(|| x.clone()),
                    normalized,
                });
            }
            prev = Some(z);
        }
        let h = prev.unwrap_or_else(|| x.clone());
        let head = &self.layers[n_hidden];
        let mut y = linear_forward(head, &h, batch);
        if let OutputActivation::TanhScaled(m) = cfg.output_activation {
            let m = T::from_f64(m);
            for v in y.data_mut() {
                *v = m * v.tanh();
            }
        }
        y.ensure_finite("mlp output")?;
        let cache = ForwardCache {
            hidden,
            head_input: if keep { h } else { Tensor::zeros(&[0]) },
            output: if keep { y.clone() } else { Tensor::zeros(&[0]) },
            batch,
            layer_dims: cfg.layer_dims(),
            layer_norm: cfg.layer_norm,
            kept: keep,
        };
        Ok((y, cache))
    }

    /// Exact gradients of `sum(upstream ⊙ y)` with respect to the parameters
    /// and the network input.
    pub fn backward(
        &self,
        cfg: &MlpConfig,
        cache: &ForwardCache<T>,
        upstream: &Tensor<T>,
    ) -> Result<(MlpParams<T>, Tensor<T>)> {
        let mut grads = self.zeros_like();
        let dx = self.backprop(cfg, cache, upstream, Some(&mut grads))?;
        Ok((grads, dx))
    }

    /// Gradient with respect to the input only; skips weight gradients.
    pub fn input_grad(&self, cfg: &MlpConfig, cache: &ForwardCache<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        self.backprop(cfg, cache, upstream, None)
    }

    fn backprop(
        &self,
        cfg: &MlpConfig,
        cache: &ForwardCache<T>,
        upstream: &Tensor<T>,
        mut grads: Option<&mut MlpParams<T>>,
    ) -> Result<Tensor<T>> {
        if !cache.kept || cache.layer_dims != cfg.layer_dims() || cache.layer_norm != cfg.layer_norm {
            return Err(Error::StaleCache);
        }
        if upstream.shape() != [cache.batch, cfg.output_dim] {
            return Err(Error::StaleCache);
        }
        self.check(cfg)?;
        let batch = cache.batch;
        let n_hidden = self.layers.len() - 1;

        let mut delta = upstream.clone();
        if let OutputActivation::TanhScaled(m) = cfg.output_activation {
            let m = T::from_f64(m);
            for (d, &y) in delta.data_mut().iter_mut().zip(cache.output.data()) {
                let t = y / m;
                *d *= m * (T::one() - t * t);
            }
        }

        let mut layer_input = &cache.head_input;
        for i in (0..=n_hidden).rev() {
            let layer = &self.layers[i];
            if let Some(g) = grads.as_deref_mut() {
                linear_param_grads(&delta, layer_input, &mut g.layers[i], batch);
            }
            let dx = linear_input_grad(layer, &delta, batch);
            if i == 0 {
                dx.ensure_finite("input gradient")?;
                return Ok(dx);
            }
            // back through the hidden block that produced `layer_input`
            let block = &cache.hidden[i - 1];
            let mut d = dx;
            for (dv, &a) in d.data_mut().iter_mut().zip(layer_input.data()) {
                *dv = if a > T::zero() { *dv } else { T::zero() };
            }
            if let Some(norm_cache) = &block.normalized {
                let norm = &self.norms[i - 1];
                let gn = grads.as_deref_mut().map(|g| &mut g.norms[i - 1]);
                d = layer_norm_backward(&d, norm, norm_cache, gn);
            }
            delta = d;
            layer_input = &block.input;
        }
        unreachable!("loop returns at layer 0")
    }
}

/// Intermediates retained by [`MlpParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    hidden: Vec<HiddenCache<T>>,
    head_input: Tensor<T>,
    output: Tensor<T>,
    batch: usize,
    layer_dims: Vec<(usize, usize)>,
    layer_norm: bool,
    kept: bool,
}

#[derive(Debug, Clone)]
struct HiddenCache<T> {
    /// Input of this block's linear layer.
    input: Tensor<T>,
    normalized: Option<Normalized<T>>,
}

#[derive(Debug, Clone)]
struct Normalized<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

fn linear_forward<T: Real>(layer: &Linear<T>, x: &Tensor<T>, batch: usize) -> Tensor<T> {
    let (fan_out, fan_in) = (layer.weight.shape()[0], layer.weight.shape()[1]);
    let mut y = Vec::with_capacity(batch * fan_out);
    for _ in 0..batch {
        y.extend_from_slice(layer.bias.data());
    }
    gemm(
        batch,
        fan_in,
        fan_out,
        T::one(),
        x.data(),
        Trans::No,
        layer.weight.data(),
        Trans::Yes,
        T::one(),
        &mut y,
    );
    Tensor::new(alloc::vec![batch, fan_out], y).expect("sized above")
}

fn linear_param_grads<T: Real>(delta: &Tensor<T>, input: &Tensor<T>, grad: &mut Linear<T>, batch: usize) {
    let (fan_out, fan_in) = (grad.weight.shape()[0], grad.weight.shape()[1]);
    gemm(
        fan_out,
        batch,
        fan_in,
        T::one(),
        delta.data(),
        Trans::Yes,
        input.data(),
        Trans::No,
        T::zero(),
        grad.weight.data_mut(),
    );
    let gb = grad.bias.data_mut();
    gb.fill(T::zero());
    for r in 0..batch {
        for (b, &d) in gb.iter_mut().zip(delta.row(r)) {
            *b += d;
        }
    }
}

fn linear_input_grad<T: Real>(layer: &Linear<T>, delta: &Tensor<T>, batch: usize) -> Tensor<T> {
    let (fan_out, fan_in) = (layer.weight.shape()[0], layer.weight.shape()[1]);
    let mut dx = Tensor::zeros(&[batch, fan_in]);
    gemm(
        batch,
        fan_out,
        fan_in,
        T::one(),
        delta.data(),
        Trans::No,
        layer.weight.data(),
        Trans::No,
        T::zero(),
        dx.data_mut(),
    );
    dx
}

/// Row-wise layer normalisation with biased (divide-by-`d`) variance:
/// `gain * (x - mean) / sqrt(var + eps) + offset`.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, offset: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let d = x.cols();
    if d == 0 || gain.len() != d || offset.len() != d {
        return Err(Error::shape("layer_norm", d, (gain.len(), offset.len())));
    }
    let mut xhat = x.clone();
    standardize_rows(&mut xhat, eps);
    let y = affine_rows(&xhat, gain, offset);
    y.ensure_finite("layer_norm")?;
    Ok(y)
}

/// Standardises every row in place; returns the per-row `1 / sqrt(var + eps)`.
fn standardize_rows<T: Real>(x: &mut Tensor<T>, eps: T) -> Vec<T> {
    let d = x.cols();
    let inv_d = T::one() / T::from_f64(d as f64);
    let mut inv_std = Vec::with_capacity(x.rows());
    for row in x.data_mut().chunks_exact_mut(d) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let is = T::one() / (var + eps).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * is);
        inv_std.push(is);
    }
    inv_std
}

fn affine_rows<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, offset: &Tensor<T>) -> Tensor<T> {
    let (g, o) = (gain.data(), offset.data());
    let mut y = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(g.len()) {
        y.extend(row.iter().zip(g).zip(o).map(|((&v, &g), &o)| g * v + o));
    }
    Tensor::new(x.shape().to_vec(), y).expect("same shape as input")
}

fn layer_norm_backward<T: Real>(
    dy: &Tensor<T>,
    norm: &LayerNormParams<T>,
    cache: &Normalized<T>,
    grads: Option<&mut LayerNormParams<T>>,
) -> Tensor<T> {
    let d = dy.cols();
    let inv_d = T::one() / T::from_f64(d as f64);
    if let Some(g) = grads {
        let (gg, go) = (g.gain.data_mut(), g.offset.data_mut());
        gg.fill(T::zero());
        go.fill(T::zero());
        for (row, xh) in dy.data().chunks_exact(d).zip(cache.xhat.data().chunks_exact(d)) {
            for (((gj, oj), &dv), &x) in gg.iter_mut().zip(go.iter_mut()).zip(row).zip(xh) {
                *gj += dv * x;
                *oj += dv;
            }
        }
    }
    let mut dx = dy.clone();
    let gain = norm.gain.data();
    let rows = dx.data_mut().chunks_exact_mut(d).zip(cache.xhat.data().chunks_exact(d));
    for ((row, xh), &is) in rows.zip(&cache.inv_std) {
        row.iter_mut().zip(gain).for_each(|(v, &w)| *v *= w);
        let (mut sum, mut dot) = (T::zero(), T::zero());
        for (&a, &b) in row.iter().zip(xh) {
            sum += a;
            dot += a * b;
        }
        let (mean_g, mean_gx) = (sum * inv_d, dot * inv_d);
        row.iter_mut().zip(xh).for_each(|(v, &b)| *v = is * (*v - mean_g - b * mean_gx));
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one_unit_chain() -> (MlpConfig, MlpParams<f64>) {
        let cfg = MlpConfig::new(1, 1).hidden(&[1]);
        let params = MlpParams {
            layers: vec![
                Linear {
                    weight: Tensor::from_rows(&[&[1.0]]).unwrap(),
                    bias: Tensor::vector(vec![0.0]),
                },
                Linear {
                    weight: Tensor::from_rows(&[&[1.0]]).unwrap(),
                    bias: Tensor::vector(vec![0.0]),
                },
            ],
            norms: vec![],
        };
        (cfg, params)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = MlpConfig::new(3, 2).hidden(&[4, 5]);
        let p = MlpParams::<f64>::seeded(&cfg, 1).unwrap().zeros_like();
        let x = Tensor::from_rows(&[&[1.0, -2.0, 3.0], &[0.5, 0.1, -7.0]]).unwrap();
        let y = p.predict(&cfg, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_unit_chain_passes_value_through() {
        let (cfg, p) = one_unit_chain();
        let x = Tensor::from_rows(&[&[2.0]]).unwrap();
        let (y, cache) = p.forward(&cfg, &x).unwrap();
        assert_eq!(cache.hidden[0].input.data(), &[2.0]);
        assert_eq!(cache.head_input.data(), &[2.0]);
        assert_eq!(y.data(), &[2.0]);
    }

    #[test]
    fn tanh_head_saturates_inside_bounds() {
        let (cfg, p) = one_unit_chain();
        let cfg = cfg.activation(OutputActivation::TanhScaled(1.0));
        let y = p.predict(&cfg, &Tensor::from_rows(&[&[1000.0]]).unwrap()).unwrap();
        let v = y.data()[0];
        assert!(v > 0.999 && v <= 1.0, "{v}");
    }

    #[test]
    fn layer_norm_examples() {
        let one3 = Tensor::filled(&[3], 1.0f64);
        let zero3 = Tensor::zeros(&[3]);
        let c = Tensor::from_rows(&[&[4.0, 4.0, 4.0]]).unwrap();
        let y = layer_norm(&c, &one3, &zero3, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let x = Tensor::from_rows(&[&[1.0, 3.0]]).unwrap();
        let y = layer_norm(&x, &Tensor::filled(&[2], 1.0), &Tensor::zeros(&[2]), 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);

        let offset = Tensor::vector(vec![0.3, -0.7, 2.0]);
        let x = Tensor::from_rows(&[&[1.0, 9.0, -4.0], &[0.1, 0.2, 0.3]]).unwrap();
        let y = layer_norm(&x, &Tensor::zeros(&[3]), &offset, 1e-5).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), offset.data());
        }
    }

    #[test]
    fn layer_norm_rejects_bad_gain() {
        let x = Tensor::<f64>::from_rows(&[&[1.0, 2.0]]).unwrap();
        assert!(layer_norm(&x, &Tensor::filled(&[3], 1.0), &Tensor::zeros(&[2]), 1e-5).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = MlpConfig::new(3, 2).hidden(&[4, 4]).layer_norm(true);
        let p = MlpParams::<f64>::seeded(&cfg, 3).unwrap();
        let x = Tensor::from_rows(&[&[0.3, -0.2, 0.9]]).unwrap();
        let (_, cache) = p.forward(&cfg, &x).unwrap();
        let (g, dx) = p.backward(&cfg, &cache, &Tensor::zeros(&[1, 2])).unwrap();
        assert!(g.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let cfg = MlpConfig::new(3, 1).hidden(&[4]);
        let other = MlpConfig::new(3, 1).hidden(&[5]);
        let p = MlpParams::<f64>::seeded(&cfg, 0).unwrap();
        let (_, cache) = p.forward(&cfg, &Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(
            p.backward(&other, &cache, &Tensor::zeros(&[2, 1])).unwrap_err(),
            Error::StaleCache
        );
        assert_eq!(
            p.backward(&cfg, &cache, &Tensor::zeros(&[3, 1])).unwrap_err(),
            Error::StaleCache
        );
        let no_cache = p.run(&cfg, &Tensor::zeros(&[2, 3]), false).unwrap().1;
        assert_eq!(
            p.backward(&cfg, &no_cache, &Tensor::zeros(&[2, 1])).unwrap_err(),
            Error::StaleCache
        );
    }

    #[test]
    fn input_shape_is_checked() {
        let cfg = MlpConfig::new(3, 1).hidden(&[4]);
        let p = MlpParams::<f64>::seeded(&cfg, 0).unwrap();
        assert!(matches!(
            p.predict(&cfg, &Tensor::zeros(&[2, 4])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn seeded_init_is_deterministic_and_bounded() {
        let cfg = MlpConfig::new(4, 2).hidden(&[16, 16]).layer_norm(true);
        let a = MlpParams::<f32>::seeded(&cfg, 42).unwrap();
        let b = MlpParams::<f32>::seeded(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, MlpParams::<f32>::seeded(&cfg, 43).unwrap());
        a.check(&cfg).unwrap();
        for l in &a.layers {
            let bound = 1.0 / (l.weight.shape()[1] as f32).sqrt();
            assert!(l.weight.data().iter().all(|w| w.abs() <= bound));
        }
        assert!(a.norms.iter().all(|n| n.gain.data().iter().all(|&g| g == 1.0)));
    }

    #[test]
    fn depth_limits() {
        assert!(MlpConfig::new(2, 1).with_depth(6).validate().is_ok());
        assert!(MlpConfig::new(2, 1).with_depth(7).validate().is_err());
        assert!(MlpConfig::new(2, 1).with_depth(0).validate().is_err());
    }

    #[test]
    fn small_net_matches_finite_differences() {
        for ln in [false, true] {
            let cfg = MlpConfig::new(2, 1).hidden(&[3]).layer_norm(ln);
            let p = MlpParams::<f64>::seeded(&cfg, 11).unwrap();
            let x = Tensor::from_rows(&[&[0.4, -0.9], &[1.2, 0.3]]).unwrap();
            let report = gradcheck::check_mlp(&cfg, &p, &x, 1e-6).unwrap();
            assert!(report.max_rel_error < 1e-5, "ln={ln}: {report:?}");
        }
    }

    proptest! {
        #[test]
        fn layer_norm_rows_are_standardised(
            row in proptest::collection::vec(-50.0f64..50.0, 2..32)
        ) {
            let d = row.len();
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            prop_assume!(var > 1e-2);
            let x = Tensor::matrix(1, d, row).unwrap();
            let y = layer_norm(&x, &Tensor::filled(&[d], 1.0), &Tensor::zeros(&[d]), 1e-5).unwrap();
            let m = y.mean();
            let v = y.data().iter().map(|a| (a - m).powi(2)).sum::<f64>() / d as f64;
            prop_assert!(m.abs() < 1e-6);
            prop_assert!((v - var / (var + 1e-5)).abs() < 1e-9);
        }

        #[test]
        fn tanh_head_stays_in_bounds(seed in 0u64..1000, scale in 0.1f64..3.0, mag in 0.0f64..1e4) {
            let cfg = MlpConfig::new(3, 2).hidden(&[8]).activation(OutputActivation::TanhScaled(scale));
            let p = MlpParams::<f64>::seeded(&cfg, seed).unwrap();
            let x = Tensor::from_rows(&[&[mag, -mag, 0.5 * mag]]).unwrap();
            let y = p.predict(&cfg, &x).unwrap();
            prop_assert!(y.data().iter().all(|v| v.abs() <= scale));
        }
    }

    #[test]
    fn forward_is_bit_identical_across_calls() {
        let cfg = MlpConfig::new(5, 3).hidden(&[32, 32]).layer_norm(true);
        let p = MlpParams::<f32>::seeded(&cfg, 9).unwrap();
        let x = Tensor::<f32>::from_rows(&[&[0.1, 0.2, 0.3, 0.4, 0.5], &[1.0, -1.0, 0.0, 2.0, 3.0]]).unwrap();
        let a = p.predict(&cfg, &x).unwrap();
        let b = MlpParams::<f32>::seeded(&cfg, 9).unwrap().predict(&cfg, &x).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(a.max_abs_diff(&b), 0.0);
    }
}
