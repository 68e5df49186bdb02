//! Conditional GAN from CSI to frames: a dropout-noised decoder and a
//! PatchGAN discriminator whose patches all see the full CSI vector.

mod discriminator;
mod generator;
mod train;

pub use discriminator::{
    patch_grid, receptive_field, receptive_window, Discriminator, DiscriminatorConfig, TiledConditionConv,
    CONV_STACK, DISCRIMINATOR_KIND,
};
pub use generator::{Generator, GeneratorConfig, GENERATOR_KIND, SEED_HEIGHT, SEED_WIDTH};
pub use train::{
    generate_frames, generate_sequence, train_gan, write_metrics_csv, GanEpoch, GanRun, GanTrainConfig,
};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `ln(1 + eˣ)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy of `logits` against an all-real or all-fake
/// target, with its gradient.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, real: bool) -> (T, Tensor<T>) {
    let n = T::from_usize(logits.len().max(1)).unwrap();
    let target = if real { T::one() } else { T::zero() };
    let loss = logits
        .data()
        .iter()
        .map(|&x| if real { softplus(-x) } else { softplus(x) })
        .sum::<T>()
        / n;
    let grad = logits.map(|x| (crate::nn::sigmoid(x) - target) / n);
    (loss, grad)
}

/// `(d_loss, g_adv)`: `−E[log σ(real)] − E[log(1 − σ(fake))]` and the
/// non-saturating `−E[log σ(fake)]`, each averaged over the patch grid.
pub fn cgan_losses<T: Scalar>(real_logits: &Tensor<T>, fake_logits: &Tensor<T>) -> (T, T) {
    assert_eq!(real_logits.shape(), fake_logits.shape(), "logit grids differ in shape");
    let (lr, _) = bce_with_logits(real_logits, true);
    let (lf, _) = bce_with_logits(fake_logits, false);
    let (g, _) = bce_with_logits(fake_logits, true);
    (lr + lf, g)
}

/// Mean absolute error with its (sub)gradient, zero where the inputs agree.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (T, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape(), "l1: shape mismatch");
    let n = T::from_usize(pred.len().max(1)).unwrap();
    let mut loss = T::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.abs();
            if d > T::zero() {
                T::one() / n
            } else if d < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    (loss / n, Tensor::from_vec(pred.shape(), grad))
}

/// Generator objective `g_adv + λ · L1` given the discriminator's logits on
/// the generated pair.
pub fn generator_loss<T: Scalar>(fake_logits: &Tensor<T>, generated: &Tensor<T>, target: &Tensor<T>, lambda_l1: f64) -> T {
    let (g, _) = bce_with_logits(fake_logits, true);
    if lambda_l1 > 0.0 {
        g + T::from_f64_lossy(lambda_l1) * l1_loss(generated, target).0
    } else {
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_give_log_two_losses() {
        let z = Tensor::zeros(&[2, 1, 13, 18]);
        let (d, g) = cgan_losses::<f64>(&z, &z);
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_limit() {
        let real = Tensor::full(&[1, 1, 2, 2], 800.0f64);
        let fake = Tensor::full(&[1, 1, 2, 2], -800.0f64);
        let (d, g) = cgan_losses(&real, &fake);
        assert!(d < 1e-300);
        assert!((g - 800.0).abs() < 1e-9);
    }

    #[test]
    fn l1_term_vanishes_on_exact_output() {
        let logits = Tensor::from_vec(&[1, 1, 1, 3], vec![0.3f64, -1.0, 2.0]);
        let y = Tensor::full(&[1, 3, 2, 2], 0.25f64);
        let adv = bce_with_logits(&logits, true).0;
        assert_eq!(generator_loss(&logits, &y, &y, 100.0), adv);
        let y2 = Tensor::full(&[1, 3, 2, 2], 0.5f64);
        assert!((generator_loss(&logits, &y2, &y, 100.0) - adv - 25.0).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_matches_difference_quotient() {
        let logits = Tensor::from_vec(&[1, 4], vec![-3.0f64, -0.2, 0.4, 5.0]);
        for real in [true, false] {
            let (_, g) = bce_with_logits(&logits, real);
            for i in 0..4 {
                let h = 1e-6;
                let mut a = logits.clone();
                a.data_mut()[i] += h;
                let mut b = logits.clone();
                b.data_mut()[i] -= h;
                let fd = (bce_with_logits(&a, real).0 - bce_with_logits(&b, real).0) / (2.0 * h);
                assert!((fd - g.data()[i]).abs() < 1e-8);
            }
        }
    }
}
