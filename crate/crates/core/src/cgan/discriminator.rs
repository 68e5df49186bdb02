use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiStandardizer, CSI_LEN};
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{prefixed, ChannelNorm, Conv2d, ConvGeom, Layer, LeakyRelu, Linear, Param, Sequential};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::SimRng;

pub const DISCRIMINATOR_KIND: &str = "gan-discriminator";

/// `(kernel, stride, pad)` of every conv in the stack, head included.
pub const CONV_STACK: [(usize, usize, usize); 5] = [(4, 2, 1), (4, 2, 1), (4, 2, 1), (4, 1, 1), (4, 1, 1)];

const LEAK: f64 = 0.2;

/// Receptive field of one output logit: `1 + Σ (kᵢ − 1) · Π_{j<i} sⱼ`.
pub fn receptive_field() -> usize {
    let mut rf = 1;
    let mut jump = 1;
    for (k, s, _) in CONV_STACK {
        rf += (k - 1) * jump;
        jump *= s;
    }
    rf
}

/// Logit grid for an `h × w` frame, each conv mapping
/// `n ↦ ⌊(n + 2p − k) / s⌋ + 1`. A 120×160 frame gives 13×18.
pub fn patch_grid(h: usize, w: usize) -> Option<(usize, usize)> {
    let step = |n: usize, (k, s, p): (usize, usize, usize)| (n + 2 * p).checked_sub(k).map(|v| v / s + 1);
    CONV_STACK
        .iter()
        .try_fold((h, w), |(h, w), &l| Some((step(h, l)?, step(w, l)?)))
}

/// Pixel rows (or columns) `[start, end)` seen by logit index `i` along one
/// axis, before clipping to the image.
pub fn receptive_window(i: usize) -> (isize, isize) {
    let mut start = i as isize;
    let mut end = i as isize + 1;
    for &(k, s, p) in CONV_STACK.iter().rev() {
        start = start * s as isize - p as isize;
        end = (end - 1) * s as isize - p as isize + k as isize;
    }
    (start, end)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    /// Channels of the learned CSI embedding tiled over the image.
    pub embed_channels: usize,
    /// Output widths of the four strided convs before the head.
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            embed_channels: 16,
            widths: vec![64, 128, 256, 512],
            seed: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_channels == 0 || self.widths.len() != 4 || self.widths.contains(&0) {
            return Err(Error::Config(
                "discriminator needs a positive embedding size and 4 positive conv widths".into(),
            ));
        }
        Ok(())
    }
}

/// First conv over `concat(frame, tile(embedding))`.
///
/// The tiled channels are spatially constant, so their contribution at an
/// output position is the sum of `W[:, :, ky, kx] · e` over the taps that
/// land inside the image. This is exactly the convolution of the explicit
/// tile, without building it.
pub struct TiledConditionConv<T: Scalar> {
    pub frame_conv: Conv2d<T>,
    /// `[C_out, E, k, k]`.
    pub csi_weight: Param<T>,
    cache: Option<(ConvGeom, Tensor<T>)>,
    frozen: bool,
}

impl<T: Scalar> TiledConditionConv<T> {
    pub fn new(frame_channels: usize, embed: usize, out: usize, rng: &mut SimRng) -> Self {
        let (k, s, p) = CONV_STACK[0];
        let fan_in = (frame_channels + embed) * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut frame_conv = Conv2d::new(frame_channels, out, (k, k), (s, s), (p, p), rng);
        // Match the fan-in of the equivalent concatenated conv.
        for v in frame_conv.weight.value.data_mut().iter_mut().chain(frame_conv.bias.value.data_mut()) {
            *v = *v * T::from_f64_lossy(bound * ((frame_channels * k * k) as f64).sqrt());
        }
        TiledConditionConv {
            frame_conv: prefixed(frame_conv, "frame"),
            csi_weight: Param::uniform("csi_weight", &[out, embed, k, k], bound, rng),
            cache: None,
            frozen: false,
        }
    }

    fn taps(g: &ConvGeom, o: usize, along_y: bool) -> impl Iterator<Item = usize> + '_ {
        let (k, s, p, n) = if along_y {
            (g.kernel.0, g.stride.0, g.pad.0, g.height)
        } else {
            (g.kernel.1, g.stride.1, g.pad.1, g.width)
        };
        (0..k).filter(move |&t| {
            let i = (o * s + t) as isize - p as isize;
            i >= 0 && (i as usize) < n
        })
    }

    pub fn forward(&mut self, frame: &Tensor<T>, emb: &Tensor<T>, rng: &mut SimRng) -> Tensor<T> {
        let mut out = self.frame_conv.forward(frame, rng);
        let s = frame.shape();
        let geom = self.frame_conv.geometry(s[2], s[3]);
        let w = self.csi_weight.value.shape().to_vec();
        let (cout, e, kh, kw) = (w[0], w[1], w[2], w[3]);
        let wd = self.csi_weight.value.data();
        let plane = geom.out_h * geom.out_w;
        for n in 0..s[0] {
            let en = emb.item(n);
            // v[tap][co] = W[co, :, tap] · e
            let mut v = vec![T::zero(); kh * kw * cout];
            for co in 0..cout {
                for ei in 0..e {
                    let ev = en[ei];
                    for tap in 0..kh * kw {
                        v[tap * cout + co] += wd[(co * e + ei) * kh * kw + tap] * ev;
                    }
                }
            }
            let on = out.item_mut(n);
            for oy in 0..geom.out_h {
                let ys: Vec<usize> = Self::taps(&geom, oy, true).collect();
                for ox in 0..geom.out_w {
                    for kx in Self::taps(&geom, ox, false) {
                        for &ky in &ys {
                            let vt = &v[(ky * kw + kx) * cout..][..cout];
                            for co in 0..cout {
                                on[co * plane + oy * geom.out_w + ox] += vt[co];
                            }
                        }
                    }
                }
            }
        }
        self.cache = Some((geom, emb.clone()));
        out
    }

    /// Returns gradients for the frame and the embedding.
    pub fn backward(&mut self, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let (geom, emb) = self.cache.as_ref().expect("tiled conv: backward before forward");
        let w = self.csi_weight.value.shape().to_vec();
        let (cout, e, kh, kw) = (w[0], w[1], w[2], w[3]);
        let plane = geom.out_h * geom.out_w;
        let mut g_emb = Tensor::zeros(emb.shape());
        for n in 0..grad.batch() {
            let gn = grad.item(n);
            // gt[tap][co] = Σ over positions where the tap is in bounds
            let mut gt = vec![T::zero(); kh * kw * cout];
            for oy in 0..geom.out_h {
                let ys: Vec<usize> = Self::taps(geom, oy, true).collect();
                for ox in 0..geom.out_w {
                    for kx in Self::taps(geom, ox, false) {
                        for &ky in &ys {
                            let t = &mut gt[(ky * kw + kx) * cout..][..cout];
                            for co in 0..cout {
                                t[co] += gn[co * plane + oy * geom.out_w + ox];
                            }
                        }
                    }
                }
            }
            let en = emb.item(n);
            let wd = self.csi_weight.value.data();
            let ge = g_emb.item_mut(n);
            for co in 0..cout {
                for ei in 0..e {
                    let base = (co * e + ei) * kh * kw;
                    let mut acc = T::zero();
                    for tap in 0..kh * kw {
                        acc += wd[base + tap] * gt[tap * cout + co];
                    }
                    ge[ei] += acc;
                }
            }
            if !self.frozen {
                let gw = self.csi_weight.grad.data_mut();
                for co in 0..cout {
                    for ei in 0..e {
                        let base = (co * e + ei) * kh * kw;
                        for tap in 0..kh * kw {
                            gw[base + tap] += gt[tap * cout + co] * en[ei];
                        }
                    }
                }
            }
        }
        (self.frame_conv.backward(grad), g_emb)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.frame_conv.params();
        p.push(&self.csi_weight);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.frame_conv.params_mut();
        p.push(&mut self.csi_weight);
        p
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        self.frame_conv.set_frozen(frozen);
    }
}

/// PatchGAN over `(csi, frame)` pairs. Every logit sees at most a 70×70
/// pixel window and the whole CSI vector through the tiled embedding.
pub struct Discriminator<T: Scalar> {
    cfg: DiscriminatorConfig,
    input: CsiStandardizer,
    embed: Linear<T>,
    first: TiledConditionConv<T>,
    first_act: LeakyRelu<T>,
    body: Sequential<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: &DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SimRng::seed_from_u64(cfg.seed);
        let w = &cfg.widths;
        let embed = prefixed(Linear::new(CSI_LEN, cfg.embed_channels, &mut rng), "embed");
        let mut first = TiledConditionConv::new(3, cfg.embed_channels, w[0], &mut rng);
        for p in first.params_mut() {
            p.name = format!("conv0.{}", p.name);
        }
        let mut body = Sequential::new();
        for i in 1..4 {
            let (k, s, p) = CONV_STACK[i];
            body.push(prefixed(
                Conv2d::new(w[i - 1], w[i], (k, k), (s, s), (p, p), &mut rng),
                &format!("conv{i}"),
            ))
            .push(prefixed(ChannelNorm::new(w[i]), &format!("norm{i}")))
            .push(LeakyRelu::new(LEAK));
        }
        let (k, s, p) = CONV_STACK[4];
        body.push(prefixed(Conv2d::new(w[3], 1, (k, k), (s, s), (p, p), &mut rng), "head"));
        Ok(Discriminator {
            cfg: cfg.clone(),
            input: CsiStandardizer::default(),
            embed,
            first,
            first_act: LeakyRelu::new(LEAK),
            body,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
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

    /// `[N, 224]` CSI and `[N, 3, H, W]` frames to `[N, 1, gh, gw]` logits.
    pub fn forward(&mut self, csi: &Tensor<T>, frame: &Tensor<T>) -> Result<Tensor<T>> {
        let s = frame.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::InvalidInput(format!("discriminator expects [N, 3, H, W] frames, got {s:?}")));
        }
        if csi.batch() != s[0] || csi.item_len() != CSI_LEN {
            return Err(Error::InvalidInput(format!(
                "discriminator expects [{}, {CSI_LEN}] CSI, got {:?}",
                s[0],
                csi.shape()
            )));
        }
        if patch_grid(s[2], s[3]).is_none_or(|(h, w)| h == 0 || w == 0) {
            return Err(Error::InvalidInput(format!("frame {}×{} too small for the patch stack", s[2], s[3])));
        }
        // The discriminator has no stochastic layers.
        let mut rng = SimRng::seed_from_u64(0);
        let x = self.input.apply(&csi.clone().reshape(&[s[0], CSI_LEN]));
        let e = self.embed.forward(&x, &mut rng);
        let h = self.first.forward(frame, &e, &mut rng);
        let h = self.first_act.forward(&h, &mut rng);
        Ok(self.body.forward(&h, &mut rng))
    }

    /// Gradients for the CSI (`[N, 224]`) and the frame.
    pub fn backward(&mut self, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let g = self.body.backward(grad);
        let g = self.first_act.backward(&g);
        let (g_frame, g_emb) = self.first.backward(&g);
        (self.input.backward(&self.embed.backward(&g_emb)), g_frame)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.embed.params();
        p.extend(self.first.params());
        p.extend(self.body.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.embed.params_mut();
        p.extend(self.first.params_mut());
        p.extend(self.body.params_mut());
        p
    }

    /// Frozen parameters receive no gradient; input gradients still flow.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.embed.set_frozen(frozen);
        self.first.set_frozen(frozen);
        self.body.set_frozen(frozen);
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let config = serde_json::json!({ "discriminator": self.cfg, "input": self.input, "training": extra });
        Checkpoint::from_params(DISCRIMINATOR_KIND, config, &self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint, file: &Path) -> Result<Self> {
        ck.expect_kind(DISCRIMINATOR_KIND, file)?;
        let cfg: DiscriminatorConfig = serde_json::from_value(ck.manifest.config["discriminator"].clone())
            .map_err(|e| Error::checkpoint(file, format!("bad discriminator config: {e}")))?;
        let mut d = Discriminator::new(&cfg)?;
        if let Some(v) = ck.manifest.config.get("input") {
            let input: CsiStandardizer = serde_json::from_value(v.clone())
                .map_err(|e| Error::checkpoint(file, format!("bad input standardizer: {e}")))?;
            d.set_standardizer(input).map_err(|e| Error::checkpoint(file, e.to_string()))?;
        }
        ck.restore(d.params_mut(), file)?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Discriminator::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}
