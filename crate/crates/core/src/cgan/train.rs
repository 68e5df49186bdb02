use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{bce_with_logits, l1_loss, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::csi::{CsiStandardizer, PairedSample, CSI_LEN};
use crate::dataset::{split_dataset, Dataset};
use crate::error::{Error, Result};
use crate::frame::{pair_grid, save_png, side_by_side, Frame, FRAME_SHAPE};
use crate::nn::{zero_grads, Adam, AdamConfig};
use crate::tensor::Tensor;
use crate::SimRng;

const COLLAPSE_THRESHOLD: f64 = 1e-4;
const COLLAPSE_EPOCHS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub g_learning_rate: f64,
    pub d_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Both learning rates decay linearly to zero over this many final
    /// epochs (0: constant rates).
    pub decay_epochs: usize,
    /// Weight of the L1 reconstruction term; 0 trains the pure adversarial
    /// objective.
    pub lambda_l1: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Write checkpoints every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Write a sample grid every this many epochs (0: only at the end).
    pub sample_every: usize,
    pub sample_count: usize,
    /// Fit a per-entry CSI standardizer on the training split and install
    /// it in both networks.
    pub standardize_csi: bool,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            g_learning_rate: 2e-4,
            d_learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            epochs: 200,
            decay_epochs: 0,
            lambda_l1: 100.0,
            seed: 0,
            train_fraction: 0.8,
            split_seed: 0,
            checkpoint_every: 0,
            sample_every: 10,
            sample_count: 4,
            standardize_csi: true,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::Config(format!("lambda_l1 {} must be non-negative", self.lambda_l1)));
        }
        if !(self.g_learning_rate > 0.0 && self.d_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.decay_epochs > self.epochs {
            return Err(Error::Config(format!(
                "decay_epochs {} exceeds epochs {}",
                self.decay_epochs, self.epochs
            )));
        }
        Ok(())
    }

    /// Multiplier on both learning rates during `epoch` (1-based).
    pub fn lr_factor(&self, epoch: usize) -> f64 {
        let start = self.epochs - self.decay_epochs;
        if epoch <= start {
            1.0
        } else {
            (self.epochs + 1 - epoch) as f64 / (self.decay_epochs + 1) as f64
        }
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub d_loss: f64,
    /// Adversarial term plus `λ · l1`.
    pub g_loss: f64,
    pub l1: f64,
}

pub struct GanRun {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub metrics: Vec<GanEpoch>,
    /// Epochs at which the collapse warning fired.
    pub collapse_warnings: Vec<usize>,
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
}

fn batch(samples: &[&PairedSample]) -> (Tensor<f32>, Tensor<f32>) {
    let csi: Vec<Vec<f32>> = samples.iter().map(|s| s.normalized_csi::<f32>().values).collect();
    let frames: Vec<Vec<f32>> = samples.iter().map(|s| s.frame.to_unit::<f32>()).collect();
    let csi: Vec<&[f32]> = csi.iter().map(Vec::as_slice).collect();
    let frames: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
    (Tensor::stack(&csi, &[CSI_LEN]), Tensor::stack(&frames, &FRAME_SHAPE))
}

pub fn write_metrics_csv(path: &Path, metrics: &[GanEpoch]) -> Result<()> {
    let mut text = String::from("epoch,d_loss,g_loss,l1\n");
    for m in metrics {
        text.push_str(&format!("{},{},{},{}\n", m.epoch, m.d_loss, m.g_loss, m.l1));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn due(every: usize, epoch: usize, last: usize) -> bool {
    epoch == last || (every > 0 && epoch.is_multiple_of(every))
}

/// Alternating updates per batch: one discriminator step on the real and
/// the generated pair, then one generator step through the frozen
/// discriminator. Artifacts go to `out_dir` when given: `generator.ckpt`,
/// `discriminator.ckpt`, `metrics.csv` and `samples/epoch_NNNN.png`.
pub fn train_gan(
    dataset: &Dataset,
    gcfg: &GeneratorConfig,
    dcfg: &DiscriminatorConfig,
    tcfg: &GanTrainConfig,
    out_dir: Option<&Path>,
) -> Result<GanRun> {
    tcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let (train_ids, val_ids) = split_dataset(&dataset.ids(), tcfg.train_fraction, tcfg.split_seed)?;
    let train = dataset.select(&train_ids)?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let preview: Vec<&PairedSample> = if val_ids.is_empty() {
        train.iter().take(tcfg.sample_count).copied().collect()
    } else {
        dataset.select(&val_ids)?.into_iter().take(tcfg.sample_count).collect()
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("samples")).map_err(|e| Error::io(dir, e))?;
    }

    let mut g = Generator::<f32>::new(gcfg)?;
    let mut d = Discriminator::<f32>::new(dcfg)?;
    if tcfg.standardize_csi {
        let rows: Vec<Vec<f32>> = train.iter().map(|s| s.normalized_csi::<f32>().values).collect();
        let rows: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        let input = CsiStandardizer::fit(&rows)?;
        g.set_standardizer(input.clone())?;
        d.set_standardizer(input)?;
    }
    let mut opt_g = Adam::new(tcfg.adam(tcfg.g_learning_rate));
    let mut opt_d = Adam::new(tcfg.adam(tcfg.d_learning_rate));
    let mut order_rng = SimRng::seed_from_u64(tcfg.seed);
    let mut noise_rng = SimRng::seed_from_u64(tcfg.seed);
    noise_rng.set_stream(1);
    let lambda = tcfg.lambda_l1 as f32;
    let extra = serde_json::to_value(tcfg).expect("train config serialises");

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(tcfg.epochs);
    let mut collapse_warnings = Vec::new();
    let mut low_streak = 0;
    for epoch in 1..=tcfg.epochs {
        let f = tcfg.lr_factor(epoch);
        opt_g.set_lr(tcfg.g_learning_rate * f);
        opt_d.set_lr(tcfg.d_learning_rate * f);
        order.shuffle(&mut order_rng);
        let (mut sd, mut sg, mut sl1) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(tcfg.batch_size) {
            let items: Vec<&PairedSample> = chunk.iter().map(|&i| train[i]).collect();
            let (x, y) = batch(&items);
            let fake = g.forward(&x, &mut noise_rng);

            d.set_frozen(false);
            zero_grads(d.params_mut());
            let real_logits = d.forward(&x, &y)?;
            let (lr, gr) = bce_with_logits(&real_logits, true);
            d.backward(&gr);
            let fake_logits = d.forward(&x, &fake)?;
            let (lf, gf) = bce_with_logits(&fake_logits, false);
            d.backward(&gf);
            opt_d.step(d.params_mut());

            d.set_frozen(true);
            zero_grads(g.params_mut());
            let fake_logits = d.forward(&x, &fake)?;
            let (adv, ga) = bce_with_logits(&fake_logits, true);
            let (_, mut g_frame) = d.backward(&ga);
            let (l1, gl1) = l1_loss(&fake, &y);
            if lambda > 0.0 {
                for (a, &b) in g_frame.data_mut().iter_mut().zip(gl1.data()) {
                    *a += lambda * b;
                }
            }
            g.backward(&g_frame);
            opt_g.step(g.params_mut());

            let w = chunk.len() as f64;
            sd += (lr + lf) as f64 * w;
            sg += (adv + lambda * l1) as f64 * w;
            sl1 += l1 as f64 * w;
        }
        let n = train.len() as f64;
        let m = GanEpoch {
            epoch,
            d_loss: sd / n,
            g_loss: sg / n,
            l1: sl1 / n,
        };
        log::info!("gan epoch {epoch}: d {:.5} g {:.5} l1 {:.5}", m.d_loss, m.g_loss, m.l1);
        metrics.push(m);
        low_streak = if m.d_loss < COLLAPSE_THRESHOLD { low_streak + 1 } else { 0 };
        if low_streak >= COLLAPSE_EPOCHS {
            log::warn!(
                "discriminator loss below {COLLAPSE_THRESHOLD} for {low_streak} consecutive epochs (epoch {epoch}); possible collapse"
            );
            collapse_warnings.push(epoch);
        }

        if let Some(dir) = out_dir {
            write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
            if due(tcfg.checkpoint_every, epoch, tcfg.epochs) {
                g.to_checkpoint(extra.clone()).save(&dir.join("generator.ckpt"))?;
                d.to_checkpoint(extra.clone()).save(&dir.join("discriminator.ckpt"))?;
            }
            if due(tcfg.sample_every, epoch, tcfg.epochs) && !preview.is_empty() {
                let csi: Vec<Vec<f32>> = preview.iter().map(|s| s.normalized_csi::<f32>().values).collect();
                let csi: Vec<&[f32]> = csi.iter().map(Vec::as_slice).collect();
                let generated = generate_frames(&mut g, &csi, &mut SimRng::seed_from_u64(tcfg.seed))?;
                let pairs: Vec<(&Frame, &Frame)> = preview.iter().map(|s| &s.frame).zip(&generated).collect();
                save_png(&pair_grid(&pairs), &dir.join("samples").join(format!("epoch_{epoch:04}.png")))?;
            }
        }
    }
    d.set_frozen(false);
    Ok(GanRun {
        generator: g,
        discriminator: d,
        metrics,
        collapse_warnings,
        train_ids,
        val_ids,
    })
}

/// Generates one frame per CSI record, in order.
pub fn generate_frames(g: &mut Generator<f32>, csi: &[&[f32]], rng: &mut SimRng) -> Result<Vec<Frame>> {
    let mut frames = Vec::with_capacity(csi.len());
    for chunk in csi.chunks(16) {
        if let Some(bad) = chunk.iter().find(|c| c.len() != CSI_LEN) {
            return Err(Error::InvalidInput(format!("CSI record has {} values, expected {CSI_LEN}", bad.len())));
        }
        let y = g.forward(&Tensor::stack(chunk, &[CSI_LEN]), rng);
        for i in 0..y.batch() {
            frames.push(Frame::from_unit(y.item(i))?);
        }
    }
    Ok(frames)
}

/// Writes `frame_NNNNNN.png` per record and, when ground truth is given,
/// a `compare_NNNNNN.png` strip of `[truth | generated]`.
pub fn generate_sequence(
    g: &mut Generator<f32>,
    csi: &[&[f32]],
    truth: Option<&[&Frame]>,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<Frame>> {
    if let Some(t) = truth {
        if t.len() != csi.len() {
            return Err(Error::InvalidInput(format!(
                "{} ground-truth frames for {} CSI records",
                t.len(),
                csi.len()
            )));
        }
    }
    let frames = generate_frames(g, csi, &mut SimRng::seed_from_u64(seed))?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        f.save_png(&out_dir.join(format!("frame_{i:06}.png")))?;
        if let Some(t) = truth {
            save_png(&side_by_side(&[t[i], f]), &out_dir.join(format!("compare_{i:06}.png")))?;
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_decay_reaches_zero_after_last_epoch() {
        let cfg = GanTrainConfig {
            epochs: 4,
            decay_epochs: 2,
            ..GanTrainConfig::default()
        };
        let f: Vec<f64> = (1..=4).map(|e| cfg.lr_factor(e)).collect();
        assert_eq!(f[..2], [1.0, 1.0]);
        assert!((f[2] - 2.0 / 3.0).abs() < 1e-15 && (f[3] - 1.0 / 3.0).abs() < 1e-15);
        assert!(GanTrainConfig { decay_epochs: 5, ..cfg }.validate().is_err());
    }
}
