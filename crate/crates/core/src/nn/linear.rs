use super::{Layer, Param};
use crate::scalar::{matmul, matmul_at, matmul_bt, Scalar};
use crate::tensor::Tensor;
use crate::SimRng;

/// Fully connected layer, `y = x Wᵀ + b` over `[N, in]` inputs.
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
    frozen: bool,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut SimRng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Linear {
            weight: Param::uniform("weight", &[out_features, in_features], bound, rng),
            bias: Param::uniform("bias", &[out_features], bound, rng),
            input: None,
            frozen: false,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, _rng: &mut SimRng) -> Tensor<T> {
        let n = x.batch();
        let (fin, fout) = (self.in_features(), self.out_features());
        assert_eq!(x.item_len(), fin, "linear: expected {fin} input features");
        let mut out = Tensor::zeros(&[n, fout]);
        for row in out.data_mut().chunks_mut(fout) {
            row.copy_from_slice(self.bias.value.data());
        }
        matmul_bt(n, fin, fout, x.data(), self.weight.value.data(), out.data_mut(), true);
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("linear: backward before forward");
        let n = x.batch();
        let (fin, fout) = (self.in_features(), self.out_features());
        if !self.frozen {
            matmul_at(fout, n, fin, grad.data(), x.data(), self.weight.grad.data_mut(), true);
            let gb = self.bias.grad.data_mut();
            for row in grad.data().chunks(fout) {
                for (b, &g) in gb.iter_mut().zip(row) {
                    *b += g;
                }
            }
        }
        let mut gx = Tensor::zeros(x.shape());
        matmul(n, fout, fin, grad.data(), self.weight.value.data(), gx.data_mut(), false);
        gx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}
