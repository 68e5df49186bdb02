//! Minimal layer library with explicit forward/backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`, and
//! `backward` both returns the input gradient and accumulates parameter
//! gradients (unless the layer is frozen). Layers operate on whole batches
//! laid out as `[N, C, H, W]` (or `[N, F]` for dense layers).

mod activation;
pub mod checkpoint;
mod conv;
mod linear;
mod norm;
mod optim;

pub use activation::{sigmoid, Dropout, GlobalAvgPool, LeakyRelu, Relu, Sigmoid, Tanh};
pub use conv::{col2im, im2col, Conv2d, ConvGeom, ConvTranspose2d};
pub use linear::Linear;
pub use norm::{ChannelNorm, InstanceNorm};
pub use optim::{Adam, AdamConfig};

use rand::Rng as _;

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::SimRng;

/// A named trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    /// Uniform initialisation in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut SimRng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
            .collect();
        Param::new(name, Tensor::from_vec(shape, data))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, x: &Tensor<T>, rng: &mut SimRng) -> Tensor<T>;

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// A frozen layer still propagates input gradients but leaves its own
    /// parameter gradients untouched.
    fn set_frozen(&mut self, _frozen: bool) {}
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, rng: &mut SimRng) -> Tensor<T> {
        let mut layers = self.layers.iter_mut();
        let Some(first) = layers.next() else {
            return x.clone();
        };
        let mut out = first.forward(x, rng);
        for layer in layers {
            out = layer.forward(&out, rng);
        }
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.layers.iter_mut().for_each(|l| l.set_frozen(frozen));
    }
}

pub fn zero_grads<T: Scalar>(params: Vec<&mut Param<T>>) {
    params.into_iter().for_each(Param::zero_grad);
}


/// Prefixes every parameter name of `layer` with `prefix.`.
pub fn prefixed<T: Scalar, L: Layer<T>>(mut layer: L, prefix: &str) -> L {
    for p in layer.params_mut() {
        p.name = format!("{prefix}.{}", p.name);
    }
    layer
}
