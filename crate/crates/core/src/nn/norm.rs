//! Per-channel affine normalisation layers.
//!
//! [`InstanceNorm`] normalises each channel of each item over its spatial
//! extent. [`ChannelNorm`] normalises the channel vector at every spatial
//! position independently, so its output at a pixel depends only on that
//! pixel's inputs; receptive fields of the layers around it are unchanged.

use super::{Layer, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::SimRng;

const EPS: f64 = 1e-5;

fn affine_params<T: Scalar>(channels: usize) -> (Param<T>, Param<T>) {
    (
        Param::new("gamma", Tensor::full(&[channels], T::one())),
        Param::new("beta", Tensor::zeros(&[channels])),
    )
}

/// Normalises `len` values read at `idx(0..len)` and returns `(xhat, inv_std)`.
fn normalize_group<T: Scalar>(values: impl Iterator<Item = T> + Clone, len: usize) -> (Vec<T>, T) {
    let n = T::from_usize(len).unwrap();
    let mean = values.clone().sum::<T>() / n;
    let var = values.clone().map(|v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + T::from_f64_lossy(EPS)).sqrt();
    (values.map(|v| (v - mean) * inv_std).collect(), inv_std)
}

/// Input gradient of `xhat = (x - mean) * inv_std` given `dxhat`.
fn normalize_backward<T: Scalar>(dxhat: &[T], xhat: &[T], inv_std: T) -> Vec<T> {
    let n = T::from_usize(dxhat.len()).unwrap();
    let sum_d: T = dxhat.iter().copied().sum();
    let sum_dx: T = dxhat.iter().zip(xhat).map(|(&d, &x)| d * x).sum();
    dxhat
        .iter()
        .zip(xhat)
        .map(|(&d, &x)| inv_std / n * (n * d - sum_d - x * sum_dx))
        .collect()
}

pub struct InstanceNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    cache: Option<(Vec<usize>, Vec<T>, Vec<T>)>,
    frozen: bool,
}

impl<T: Scalar> InstanceNorm<T> {
    pub fn new(channels: usize) -> Self {
        let (gamma, beta) = affine_params(channels);
        InstanceNorm {
            gamma,
            beta,
            cache: None,
            frozen: false,
        }
    }
}

impl<T: Scalar> Layer<T> for InstanceNorm<T> {
    fn forward(&mut self, x: &Tensor<T>, _rng: &mut SimRng) -> Tensor<T> {
        let s = x.shape().to_vec();
        let c = s[1];
        assert_eq!(c, self.gamma.value.len(), "instance norm: channel mismatch");
        let plane: usize = s[2..].iter().product();
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv = Vec::with_capacity(s[0] * c);
        let mut out = Tensor::zeros(&s);
        for (i, chunk) in x.data().chunks(plane).enumerate() {
            let (h, is) = normalize_group(chunk.iter().copied(), plane);
            let (g, b) = (self.gamma.value.data()[i % c], self.beta.value.data()[i % c]);
            for (o, &v) in out.data_mut()[i * plane..(i + 1) * plane].iter_mut().zip(&h) {
                *o = g * v + b;
            }
            xhat.extend(h);
            inv.push(is);
        }
        self.cache = Some((s, xhat, inv));
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let (s, xhat, inv) = self.cache.as_ref().expect("instance norm: backward before forward");
        let c = s[1];
        let plane: usize = s[2..].iter().product();
        let mut gx = Tensor::zeros(s);
        for (i, g) in grad.data().chunks(plane).enumerate() {
            let ch = i % c;
            let h = &xhat[i * plane..(i + 1) * plane];
            if !self.frozen {
                self.gamma.grad.data_mut()[ch] += g.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>();
                self.beta.grad.data_mut()[ch] += g.iter().copied().sum::<T>();
            }
            let gamma = self.gamma.value.data()[ch];
            let dxhat: Vec<T> = g.iter().map(|&v| v * gamma).collect();
            gx.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(&normalize_backward(&dxhat, h, inv[i]));
        }
        gx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}

pub struct ChannelNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    cache: Option<(Vec<usize>, Vec<T>, Vec<T>)>,
    frozen: bool,
}

impl<T: Scalar> ChannelNorm<T> {
    pub fn new(channels: usize) -> Self {
        let (gamma, beta) = affine_params(channels);
        ChannelNorm {
            gamma,
            beta,
            cache: None,
            frozen: false,
        }
    }
}

impl<T: Scalar> Layer<T> for ChannelNorm<T> {
    fn forward(&mut self, x: &Tensor<T>, _rng: &mut SimRng) -> Tensor<T> {
        let s = x.shape().to_vec();
        let c = s[1];
        assert_eq!(c, self.gamma.value.len(), "channel norm: channel mismatch");
        let plane: usize = s[2..].iter().product();
        // xhat is stored in the input layout; inv_std per (item, position).
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv = vec![T::zero(); s[0] * plane];
        let mut out = Tensor::zeros(&s);
        for n in 0..s[0] {
            let item = x.item(n);
            for p in 0..plane {
                let (h, is) = normalize_group((0..c).map(|ch| item[ch * plane + p]), c);
                inv[n * plane + p] = is;
                for (ch, &v) in h.iter().enumerate() {
                    let idx = n * c * plane + ch * plane + p;
                    xhat[idx] = v;
                    out.data_mut()[idx] = self.gamma.value.data()[ch] * v + self.beta.value.data()[ch];
                }
            }
        }
        self.cache = Some((s, xhat, inv));
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let (s, xhat, inv) = self.cache.as_ref().expect("channel norm: backward before forward");
        let c = s[1];
        let plane: usize = s[2..].iter().product();
        let mut gx = Tensor::zeros(s);
        let gamma = self.gamma.value.data().to_vec();
        for n in 0..s[0] {
            let base = n * c * plane;
            for p in 0..plane {
                let idx = |ch: usize| base + ch * plane + p;
                let h: Vec<T> = (0..c).map(|ch| xhat[idx(ch)]).collect();
                let g: Vec<T> = (0..c).map(|ch| grad.data()[idx(ch)]).collect();
                if !self.frozen {
                    for ch in 0..c {
                        self.gamma.grad.data_mut()[ch] += g[ch] * h[ch];
                        self.beta.grad.data_mut()[ch] += g[ch];
                    }
                }
                let dxhat: Vec<T> = g.iter().zip(&gamma).map(|(&a, &b)| a * b).collect();
                for (ch, v) in normalize_backward(&dxhat, &h, inv[n * plane + p]).into_iter().enumerate() {
                    gx.data_mut()[idx(ch)] = v;
                }
            }
        }
        gx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn instance_norm_output_has_zero_mean_unit_variance() {
        let mut rng = SimRng::seed_from_u64(0);
        let mut norm = InstanceNorm::<f64>::new(2);
        let x = Tensor::from_vec(&[1, 2, 2, 3], (0..12).map(|v| (v * v) as f64).collect());
        let y = norm.forward(&x, &mut rng);
        for plane in y.data().chunks(6) {
            let mean: f64 = plane.iter().sum::<f64>() / 6.0;
            let var: f64 = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn channel_norm_is_pointwise() {
        let mut rng = SimRng::seed_from_u64(0);
        let mut norm = ChannelNorm::<f64>::new(3);
        let mut x = Tensor::from_vec(&[1, 3, 2, 2], (0..12).map(|v| (v as f64 * 1.3).sin()).collect());
        let y0 = norm.forward(&x, &mut rng);
        x.data_mut()[0] += 5.0; // channel 0, position 0
        let y1 = norm.forward(&x, &mut rng);
        for p in 1..4 {
            for ch in 0..3 {
                assert_eq!(y0.data()[ch * 4 + p], y1.data()[ch * 4 + p]);
            }
        }
    }
}
