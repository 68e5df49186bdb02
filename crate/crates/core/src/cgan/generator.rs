use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiStandardizer, CSI_LEN};
use crate::error::{Error, Result};
use crate::frame::{FRAME_HEIGHT, FRAME_WIDTH};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{prefixed, Conv2d, ConvTranspose2d, Dropout, InstanceNorm, Layer, Linear, Param, Relu, Sequential, Tanh};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::SimRng;

pub const GENERATOR_KIND: &str = "gan-generator";

/// Seed grid the decoder starts from; three doublings reach 120×160.
pub const SEED_HEIGHT: usize = 15;
pub const SEED_WIDTH: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Seed channels followed by the output width of each of the three
    /// upsample stages.
    pub widths: Vec<usize>,
    /// Dropout rate, active at training and inference (the noise `z`).
    pub dropout: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            widths: vec![256, 128, 64, 32],
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.widths.contains(&0) {
            return Err(Error::Config(
                "generator widths must list 4 positive channel counts (seed + 3 upsample stages)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("generator dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `(x + 1) / 2`, mapping tanh output to `[0, 1]`.
struct UnitRange;

impl<T: Scalar> Layer<T> for UnitRange {
    fn forward(&mut self, x: &Tensor<T>, _rng: &mut SimRng) -> Tensor<T> {
        let half = T::from_f64_lossy(0.5);
        x.map(|v| (v + T::one()) * half)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let half = T::from_f64_lossy(0.5);
        grad.map(|g| g * half)
    }
}

/// CSI → frame decoder: linear seed, three transposed-conv doublings with
/// instance norm, ReLU and dropout, then a 1×1 conv and tanh.
pub struct Generator<T: Scalar> {
    cfg: GeneratorConfig,
    input: CsiStandardizer,
    seed: Sequential<T>,
    decoder: Sequential<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SimRng::seed_from_u64(cfg.seed);
        let w = &cfg.widths;
        let mut seed = Sequential::new();
        seed.push(prefixed(Linear::new(CSI_LEN, w[0] * SEED_HEIGHT * SEED_WIDTH, &mut rng), "seed"))
            .push(Relu::new());
        let mut decoder = Sequential::new();
        for stage in 0..3 {
            let (cin, cout) = (w[stage], w[stage + 1]);
            decoder
                .push(prefixed(
                    ConvTranspose2d::new(cin, cout, (4, 4), (2, 2), (1, 1), &mut rng),
                    &format!("up{stage}.conv"),
                ))
                .push(prefixed(InstanceNorm::new(cout), &format!("up{stage}.norm")))
                .push(Relu::new())
                .push(Dropout::new(cfg.dropout));
        }
        decoder
            .push(prefixed(Conv2d::new(w[3], 3, (1, 1), (1, 1), (0, 0), &mut rng), "out"))
            .push(Tanh::new())
            .push(UnitRange);
        Ok(Generator {
            cfg: cfg.clone(),
            input: CsiStandardizer::default(),
            seed,
            decoder,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn standardizer(&self) -> &CsiStandardizer {
        &self.input
    }

    /// Replaces the input standardizer (identity by default).
    pub fn set_standardizer(&mut self, input: CsiStandardizer) -> Result<()> {
        input.validate()?;
        self.input = input;
        Ok(())
    }

    /// `[N, 224]` normalised CSI to `[N, 3, 120, 160]` frames in `[0, 1]`.
    /// Dropout masks are drawn from `rng`.
    pub fn forward(&mut self, csi: &Tensor<T>, rng: &mut SimRng) -> Tensor<T> {
        let n = csi.batch();
        assert_eq!(csi.item_len(), CSI_LEN, "generator expects 224 CSI values per item");
        let x = self.input.apply(&csi.clone().reshape(&[n, CSI_LEN]));
        let s = self.seed.forward(&x, rng).reshape(&[n, self.cfg.widths[0], SEED_HEIGHT, SEED_WIDTH]);
        let y = self.decoder.forward(&s, rng);
        debug_assert_eq!(y.shape(), &[n, 3, FRAME_HEIGHT, FRAME_WIDTH]);
        y
    }

    /// Gradient with respect to the `[N, 224]` CSI input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let n = grad.batch();
        let g = self.decoder.backward(grad);
        let g = g.reshape(&[n, self.cfg.widths[0] * SEED_HEIGHT * SEED_WIDTH]);
        self.input.backward(&self.seed.backward(&g))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.seed.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.seed.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let config = serde_json::json!({ "generator": self.cfg, "input": self.input, "training": extra });
        Checkpoint::from_params(GENERATOR_KIND, config, &self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint, file: &Path) -> Result<Self> {
        ck.expect_kind(GENERATOR_KIND, file)?;
        let cfg: GeneratorConfig = serde_json::from_value(ck.manifest.config["generator"].clone())
            .map_err(|e| Error::checkpoint(file, format!("bad generator config: {e}")))?;
        let mut g = Generator::new(&cfg)?;
        if let Some(v) = ck.manifest.config.get("input") {
            let input: CsiStandardizer = serde_json::from_value(v.clone())
                .map_err(|e| Error::checkpoint(file, format!("bad input standardizer: {e}")))?;
            g.set_standardizer(input).map_err(|e| Error::checkpoint(file, e.to_string()))?;
        }
        ck.restore(g.params_mut(), file)?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Generator::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dropout: f64) -> Generator<f32> {
        Generator::new(&GeneratorConfig {
            widths: vec![8, 8, 4, 4],
            dropout,
            seed: 1,
        })
        .unwrap()
    }

    fn csi(k: f32) -> Tensor<f32> {
        Tensor::from_vec(&[1, 224], (0..224).map(|i| ((i as f32 * k).sin() + 1.0) / 2.0).collect())
    }

    #[test]
    fn output_shape_and_range() {
        let mut g = tiny(0.5);
        let mut rng = SimRng::seed_from_u64(0);
        for k in [0.1, 0.7, 3.0] {
            let y = g.forward(&csi(k), &mut rng);
            assert_eq!(y.shape(), &[1, 3, 120, 160]);
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let extreme = Tensor::from_vec(&[1, 224], vec![1e4f32; 224]);
        assert!(g.forward(&extreme, &mut rng).data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn no_dropout_is_deterministic() {
        let mut g = tiny(0.0);
        let a = g.forward(&csi(0.3), &mut SimRng::seed_from_u64(1));
        let b = g.forward(&csi(0.3), &mut SimRng::seed_from_u64(2));
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_acts_as_noise() {
        let mut g = tiny(0.5);
        let mut rng = SimRng::seed_from_u64(1);
        let a = g.forward(&csi(0.3), &mut rng);
        let b = g.forward(&csi(0.3), &mut rng);
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = GeneratorConfig {
            dropout: 1.0,
            ..GeneratorConfig::default()
        };
        assert!(matches!(Generator::<f32>::new(&bad), Err(Error::Config(_))));
        let bad = GeneratorConfig {
            widths: vec![8, 8],
            ..GeneratorConfig::default()
        };
        assert!(matches!(Generator::<f32>::new(&bad), Err(Error::Config(_))));
    }
}
