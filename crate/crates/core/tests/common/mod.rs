#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use wifi2vision::cgan::{
    bce_with_logits, l1_loss, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
};
use wifi2vision::csi::CsiStandardizer;
use wifi2vision::nn::{zero_grads, Param};
use wifi2vision::supervised::{mse_loss, BoxRegressor, RegressorConfig};
use wifi2vision::{SimRng, Tensor};

/// Central-difference step used by every gradient check. The losses are
/// piecewise smooth (ReLU, LeakyReLU, L1); larger steps straddle kinks
/// often enough to show up in the summed norm parameters.
pub const FD_STEP: f64 = 1e-7;
/// Gradients smaller than this are compared on an absolute scale: one ulp
/// of a loss near 4 over `2 · FD_STEP` is already 2e-9.
pub const FD_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Compares analytic gradients with central differences at `count`
/// parameter entries, cycling through the tensors and picking a random
/// entry in each. `loss` must be a pure function of the
/// current parameter values; `params` exposes them in a fixed order.
/// Returns the worst relative error.
pub fn check_params<M>(
    model: &mut M,
    params: impl Fn(&mut M) -> Vec<&mut Param<f64>>,
    loss: impl Fn(&mut M) -> f64,
    analytic: &[Vec<f64>],
    count: usize,
    seed: u64,
) -> f64 {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let pi = i % analytic.len();
        let flat = rng.random_range(0..analytic[pi].len());
        let orig = params(model)[pi].value.data()[flat];
        params(model)[pi].value.data_mut()[flat] = orig + FD_STEP;
        let up = loss(model);
        params(model)[pi].value.data_mut()[flat] = orig - FD_STEP;
        let down = loss(model);
        params(model)[pi].value.data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[pi][flat], numeric));
    }
    worst
}

pub fn grads(params: Vec<&Param<f64>>) -> Vec<Vec<f64>> {
    params.iter().map(|p| p.grad.data().to_vec()).collect()
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut SimRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Parameter entries sampled per model.
pub const SAMPLED: usize = 120;
pub const TOLERANCE: f64 = 1e-3;

/// A non-trivial input standardizer so its backward pass is exercised.
fn standardizer() -> CsiStandardizer {
    let mut rng = SimRng::seed_from_u64(13);
    let rows = random_tensor(&[6, 224], 0.0, 1.0, &mut rng);
    let rows: Vec<&[f64]> = rows.data().chunks(224).collect();
    CsiStandardizer::fit(&rows).unwrap()
}

fn reduced_generator() -> Generator<f64> {
    let mut g = Generator::new(&GeneratorConfig {
        widths: vec![8, 8, 8, 8],
        dropout: 0.5,
        seed: 11,
    })
    .unwrap();
    g.set_standardizer(standardizer()).unwrap();
    g
}

fn reduced_discriminator() -> Discriminator<f64> {
    let mut d = Discriminator::new(&DiscriminatorConfig {
        embed_channels: 8,
        widths: vec![8, 8, 8, 8],
        seed: 12,
    })
    .unwrap();
    d.set_standardizer(standardizer()).unwrap();
    d
}

/// Fixed dropout masks: every evaluation replays the same noise stream.
fn noise() -> SimRng {
    SimRng::seed_from_u64(99)
}

/// Worst relative error over the sampled regressor parameters.
pub fn regressor_check() -> f64 {
    let mut m = BoxRegressor::<f64>::new(&RegressorConfig {
        widths: vec![8, 8],
        seed: 4,
        ..RegressorConfig::default()
    })
    .unwrap();
    let mut rng = SimRng::seed_from_u64(1);
    // Move the head off zero so every parameter receives gradient.
    for p in m.params_mut() {
        if p.name.starts_with("head") {
            *p = Param::new(p.name.clone(), random_tensor(p.value.shape(), -0.5, 0.5, &mut rng));
        }
    }
    let x = random_tensor(&[3, 224], 0.0, 1.0, &mut rng);
    let t = random_tensor(&[3, 4], 0.1, 0.9, &mut rng);
    let loss = |m: &mut BoxRegressor<f64>| mse_loss(&m.forward(&x), &t).0;
    zero_grads(m.params_mut());
    let (_, g) = mse_loss(&m.forward(&x), &t);
    m.backward(&g);
    let analytic = grads(m.params());
    check_params(&mut m, |m| m.params_mut(), loss, &analytic, SAMPLED, 2)
}

fn d_loss(d: &mut Discriminator<f64>, x: &Tensor<f64>, real: &Tensor<f64>, fake: &Tensor<f64>) -> f64 {
    bce_with_logits(&d.forward(x, real).unwrap(), true).0 + bce_with_logits(&d.forward(x, fake).unwrap(), false).0
}

/// Worst relative error of `d_loss` gradients over sampled parameters.
pub fn discriminator_check() -> f64 {
    let mut rng = SimRng::seed_from_u64(3);
    let mut g = reduced_generator();
    let mut d = reduced_discriminator();
    let x = random_tensor(&[2, 224], 0.0, 1.0, &mut rng);
    let real = random_tensor(&[2, 3, 120, 160], 0.0, 1.0, &mut rng);
    let fake = g.forward(&x, &mut noise());
    zero_grads(d.params_mut());
    let (_, gr) = bce_with_logits(&d.forward(&x, &real).unwrap(), true);
    d.backward(&gr);
    let (_, gf) = bce_with_logits(&d.forward(&x, &fake).unwrap(), false);
    d.backward(&gf);
    let analytic = grads(d.params());
    check_params(
        &mut d,
        |d| d.params_mut(),
        |d| d_loss(d, &x, &real, &fake),
        &analytic,
        SAMPLED,
        4,
    )
}

/// Worst relative error of `g_loss` (with `λ = 100`) gradients over
/// sampled generator parameters, backpropagated through a frozen
/// discriminator.
pub fn generator_check() -> f64 {
    let mut rng = SimRng::seed_from_u64(5);
    let mut g = reduced_generator();
    let mut d = reduced_discriminator();
    let x = random_tensor(&[2, 224], 0.0, 1.0, &mut rng);
    // Keep every residual 0.02 away from the L1 kink; a larger offset
    // inflates the loss and with it the difference quotient's roundoff.
    let y0 = g.forward(&x, &mut noise());
    let signs = random_tensor(y0.shape(), -1.0, 1.0, &mut rng);
    let target = Tensor::from_vec(
        y0.shape(),
        y0.data().iter().zip(signs.data()).map(|(&v, &s)| v + 0.02 * s.signum()).collect(),
    );
    let lambda = 100.0;
    let loss = |g: &mut Generator<f64>, d: &mut Discriminator<f64>| {
        let y = g.forward(&x, &mut noise());
        bce_with_logits(&d.forward(&x, &y).unwrap(), true).0 + lambda * l1_loss(&y, &target).0
    };
    zero_grads(g.params_mut());
    d.set_frozen(true);
    let y = g.forward(&x, &mut noise());
    let (_, ga) = bce_with_logits(&d.forward(&x, &y).unwrap(), true);
    let (_, mut gy) = d.backward(&ga);
    let (_, gl1) = l1_loss(&y, &target);
    for (a, &b) in gy.data_mut().iter_mut().zip(gl1.data()) {
        *a += lambda * b;
    }
    g.backward(&gy);
    let analytic = grads(g.params());
    let mut pair = (g, d);
    check_params(
        &mut pair,
        |(g, _)| g.params_mut(),
        |(g, d)| loss(g, d),
        &analytic,
        SAMPLED,
        6,
    )
}
