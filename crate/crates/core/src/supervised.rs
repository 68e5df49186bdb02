//! Supervised baseline: a residual convolutional regressor from normalised
//! CSI to a single bounding box, trained with mean-squared error against
//! confidence-filtered teacher boxes.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::csi::{PairedSample, CSI_ROWS};
use crate::dataset::{split_dataset, Dataset};
use crate::error::{Error, Result};
use crate::frame::{BoundingBox, FRAME_HEIGHT, FRAME_WIDTH};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    prefixed, zero_grads, Adam, AdamConfig, Conv2d, GlobalAvgPool, InstanceNorm, Layer, Linear, Param, Relu, Sequential,
    Sigmoid,
};
use crate::scalar::Scalar;
use crate::scene::N_SUBCARRIERS;
use crate::tensor::Tensor;
use crate::SimRng;

pub const CHECKPOINT_KIND: &str = "supervised";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum TeacherSource {
    /// Ground-truth boxes stored with each sample.
    Simulator,
    /// JSON-lines file with one `{"id", "boxes"}` object per sample.
    AnnotationFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    #[serde(flatten)]
    pub source: TeacherSource,
    #[serde(default = "default_threshold")]
    pub confidence_threshold: f64,
}

fn default_threshold() -> f64 {
    0.90
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            source: TeacherSource::Simulator,
            confidence_threshold: default_threshold(),
        }
    }
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub boxes: Vec<AnnotatedBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    #[serde(flatten)]
    pub bbox: BoundingBox,
    #[serde(default = "default_label")]
    pub label: String,
}

fn default_label() -> String {
    "person".into()
}

/// Reads a JSON-lines annotation file into `id → boxes`.
pub fn read_annotations(path: &Path) -> Result<HashMap<u64, Vec<BoundingBox>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        let mut boxes = Vec::with_capacity(rec.boxes.len());
        for b in rec.boxes.into_iter().filter(|b| b.label == "person") {
            b.bbox
                .validate()
                .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
            boxes.push(b.bbox);
        }
        out.insert(rec.id, boxes);
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("annotation serialises"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolves teacher labels for samples.
pub struct Teacher {
    cfg: TeacherConfig,
    annotations: Option<HashMap<u64, Vec<BoundingBox>>>,
}

impl Teacher {
    pub fn new(cfg: TeacherConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.confidence_threshold) {
            return Err(Error::Config(format!(
                "confidence threshold {} outside [0, 1]",
                cfg.confidence_threshold
            )));
        }
        let annotations = match &cfg.source {
            TeacherSource::Simulator => None,
            TeacherSource::AnnotationFile { path } => Some(read_annotations(path)?),
        };
        Ok(Teacher { cfg, annotations })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.cfg
    }

    /// Highest-confidence box strictly above the threshold, if any.
    pub fn label(&self, sample: &PairedSample) -> Result<Option<BoundingBox>> {
        let boxes = match &self.annotations {
            None => &sample.gt_boxes,
            Some(map) => map.get(&sample.sample_id).ok_or_else(|| Error::Labeling {
                sample_id: sample.sample_id,
                message: "no annotation record for this sample".into(),
            })?,
        };
        Ok(boxes
            .iter()
            .filter(|b| b.confidence > self.cfg.confidence_threshold)
            .fold(None, |best: Option<BoundingBox>, b| match best {
                Some(cur) if cur.confidence >= b.confidence => Some(cur),
                _ => Some(*b),
            }))
    }
}

pub fn teacher_boxes(sample: &PairedSample, cfg: &TeacherConfig) -> Result<Option<BoundingBox>> {
    Teacher::new(cfg.clone())?.label(sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    /// Channel width of each residual stage.
    pub widths: Vec<usize>,
    /// Residual blocks per stage.
    pub residual_blocks: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            widths: vec![16, 32, 64, 128],
            residual_blocks: 1,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            train_fraction: 0.8,
            split_seed: 0,
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("regressor widths must be a non-empty list of positive counts".into()));
        }
        if self.residual_blocks == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("residual_blocks, batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

fn conv_1x3<T: Scalar>(cin: usize, cout: usize, stride: usize, rng: &mut SimRng) -> Conv2d<T> {
    Conv2d::new(cin, cout, (1, 3), (1, stride), (0, 1), rng)
}

/// `relu(norm(conv(relu(norm(conv(x))))) + skip(x))`.
pub struct ResidualBlock<T: Scalar> {
    main: Sequential<T>,
    skip: Option<Conv2d<T>>,
    out_relu: Relu<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(cin: usize, cout: usize, stride: usize, rng: &mut SimRng) -> Self {
        let mut main = Sequential::new();
        main.push(prefixed(conv_1x3(cin, cout, stride, rng), "conv1"))
            .push(prefixed(InstanceNorm::new(cout), "norm1"))
            .push(Relu::new())
            .push(prefixed(conv_1x3(cout, cout, 1, rng), "conv2"))
            .push(prefixed(InstanceNorm::new(cout), "norm2"));
        let skip = (cin != cout || stride != 1)
            .then(|| prefixed(Conv2d::new(cin, cout, (1, 1), (1, stride), (0, 0), rng), "skip"));
        ResidualBlock {
            main,
            skip,
            out_relu: Relu::new(),
        }
    }
}

impl<T: Scalar> Layer<T> for ResidualBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, rng: &mut SimRng) -> Tensor<T> {
        let mut y = self.main.forward(x, rng);
        match &mut self.skip {
            Some(s) => y.add_assign(&s.forward(x, rng)),
            None => y.add_assign(x),
        }
        self.out_relu.forward(&y, rng)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let g = self.out_relu.backward(grad);
        let mut gx = self.main.backward(&g);
        match &mut self.skip {
            Some(s) => gx.add_assign(&s.backward(&g)),
            None => gx.add_assign(&g),
        }
        gx
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.main.params();
        if let Some(s) = &self.skip {
            p.extend(s.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.main.params_mut();
        if let Some(s) = &mut self.skip {
            p.extend(s.params_mut());
        }
        p
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.main.set_frozen(frozen);
        if let Some(s) = &mut self.skip {
            s.set_frozen(frozen);
        }
    }
}

/// Residual encoder over the CSI tensor viewed as a 4-channel `1 × 56`
/// image, global average pooling and a sigmoid head producing
/// `(cx, cy, w, h)` in `[0, 1]`.
pub struct BoxRegressor<T: Scalar> {
    cfg: RegressorConfig,
    net: Sequential<T>,
}

impl<T: Scalar> BoxRegressor<T> {
    pub fn new(cfg: &RegressorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SimRng::seed_from_u64(cfg.seed);
        let mut net = Sequential::new();
        let w0 = cfg.widths[0];
        net.push(prefixed(conv_1x3(CSI_ROWS, w0, 1, &mut rng), "stem.conv"))
            .push(prefixed(InstanceNorm::new(w0), "stem.norm"))
            .push(Relu::new());
        let mut cin = w0;
        for (stage, &w) in cfg.widths.iter().enumerate() {
            for b in 0..cfg.residual_blocks {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                net.push(prefixed(ResidualBlock::new(cin, w, stride, &mut rng), &format!("stage{stage}.block{b}")));
                cin = w;
            }
        }
        let mut head = Linear::new(cin, 4, &mut rng);
        head.weight.value.fill(T::zero());
        head.bias.value.fill(T::zero());
        net.push(GlobalAvgPool::new())
            .push(prefixed(head, "head"))
            .push(Sigmoid::new());
        Ok(BoxRegressor { cfg: cfg.clone(), net })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.cfg
    }

    /// `[N, 224]` (or `[N, 4, 1, 56]`) normalised CSI to `[N, 4]` encoded boxes.
    pub fn forward(&mut self, csi: &Tensor<T>) -> Tensor<T> {
        let n = csi.batch();
        assert_eq!(csi.item_len(), CSI_ROWS * N_SUBCARRIERS, "regressor expects 224 CSI values per item");
        let x = csi.clone().reshape(&[n, CSI_ROWS, 1, N_SUBCARRIERS]);
        // No stochastic layers: the rng is never drawn from.
        self.net.forward(&x, &mut SimRng::seed_from_u64(0))
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        self.net.backward(grad)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.net.params_mut()
    }

    pub fn predict(&mut self, csi: &[NormalizedCsiRef<'_, T>]) -> Vec<BoundingBox> {
        if csi.is_empty() {
            return Vec::new();
        }
        let x = Tensor::stack(csi, &[CSI_ROWS * N_SUBCARRIERS]);
        let out = self.forward(&x);
        (0..out.batch()).map(|i| decode_box(out.item(i))).collect()
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let config = serde_json::json!({ "regressor": self.cfg, "training": extra });
        Checkpoint::from_params(CHECKPOINT_KIND, config, &self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint, file: &Path) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND, file)?;
        let cfg: RegressorConfig = serde_json::from_value(ck.manifest.config["regressor"].clone())
            .map_err(|e| Error::checkpoint(file, format!("bad regressor config: {e}")))?;
        let mut model = BoxRegressor::new(&cfg)?;
        ck.restore(model.params_mut(), file)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        BoxRegressor::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

/// Normalised CSI values of one sample.
pub type NormalizedCsiRef<'a, T> = &'a [T];

/// `(cx, cy, w, h)` in `[0, 1]` to a clamped pixel box with confidence 1.
pub fn decode_box<T: Scalar>(out: &[T]) -> BoundingBox {
    let v: Vec<f64> = out.iter().map(|x| x.to_f64_lossy()).collect();
    let (w, h) = (FRAME_WIDTH as f64, FRAME_HEIGHT as f64);
    let xa = ((v[0] - v[2] / 2.0) * w).clamp(0.0, w);
    let xb = ((v[0] + v[2] / 2.0) * w).clamp(0.0, w);
    let ya = ((v[1] - v[3] / 2.0) * h).clamp(0.0, h);
    let yb = ((v[1] + v[3] / 2.0) * h).clamp(0.0, h);
    BoundingBox {
        x1: xa.min(xb),
        y1: ya.min(yb),
        x2: xa.max(xb),
        y2: ya.max(yb),
        confidence: 1.0,
    }
}

/// Pixel box to `(cx, cy, w, h)` normalised by the frame size.
pub fn encode_box(b: &BoundingBox) -> [f64; 4] {
    let (w, h) = (FRAME_WIDTH as f64, FRAME_HEIGHT as f64);
    [
        (b.x1 + b.x2) / 2.0 / w,
        (b.y1 + b.y2) / 2.0 / h,
        b.width() / w,
        b.height() / h,
    ]
}

/// Mean of squared differences over every entry, with its gradient.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (T, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape(), "mse: shape mismatch");
    let n = T::from_usize(pred.len()).unwrap();
    let diff: Vec<T> = pred.data().iter().zip(target.data()).map(|(&p, &t)| p - t).collect();
    let loss = diff.iter().map(|&d| d * d).sum::<T>() / n;
    let two = T::from_f64_lossy(2.0);
    let grad = Tensor::from_vec(pred.shape(), diff.into_iter().map(|d| two * d / n).collect());
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct SupervisedRun {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: BoxRegressor<f32>,
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
}

struct Labeled<'a> {
    csi: Vec<Vec<f32>>,
    targets: Vec<[f64; 4]>,
    _samples: Vec<&'a PairedSample>,
}

fn labeled<'a>(samples: Vec<&'a PairedSample>, teacher: &Teacher) -> Result<Labeled<'a>> {
    let mut out = Labeled {
        csi: Vec::new(),
        targets: Vec::new(),
        _samples: Vec::new(),
    };
    for s in samples {
        if let Some(b) = teacher.label(s)? {
            out.csi.push(s.normalized_csi::<f32>().values);
            out.targets.push(encode_box(&b));
            out._samples.push(s);
        }
    }
    Ok(out)
}

fn batch_tensors(set: &Labeled<'_>, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
    let rows: Vec<&[f32]> = idx.iter().map(|&i| set.csi[i].as_slice()).collect();
    let x = Tensor::stack(&rows, &[CSI_ROWS * N_SUBCARRIERS]);
    let t: Vec<f32> = idx.iter().flat_map(|&i| set.targets[i].map(|v| v as f32)).collect();
    (x, Tensor::from_vec(&[idx.len(), 4], t))
}

fn evaluate_loss(model: &mut BoxRegressor<f32>, set: &Labeled<'_>, batch: usize) -> f64 {
    let idx: Vec<usize> = (0..set.csi.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch) {
        let (x, t) = batch_tensors(set, chunk);
        let (loss, _) = mse_loss(&model.forward(&x), &t);
        total += loss as f64 * chunk.len() as f64;
    }
    total / set.csi.len().max(1) as f64
}

/// Trains the regressor; when `out_dir` is given the best checkpoint is
/// written there as `model.ckpt` each time validation loss improves.
pub fn train_supervised(
    dataset: &Dataset,
    teacher_cfg: &TeacherConfig,
    cfg: &RegressorConfig,
    out_dir: Option<&Path>,
) -> Result<SupervisedRun> {
    cfg.validate()?;
    let teacher = Teacher::new(teacher_cfg.clone())?;
    let (train_ids, val_ids) = split_dataset(&dataset.ids(), cfg.train_fraction, cfg.split_seed)?;
    let train = labeled(dataset.select(&train_ids)?, &teacher)?;
    let val = labeled(dataset.select(&val_ids)?, &teacher)?;
    if train.csi.is_empty() {
        return Err(Error::Config("no labeled training samples after teacher filtering".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut model = BoxRegressor::<f32>::new(cfg)?;
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = SimRng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut order: Vec<usize> = (0..train.csi.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor<f32>>)> = None;
    let extra = serde_json::json!({
        "teacher": teacher_cfg,
        "train_fraction": cfg.train_fraction,
        "split_seed": cfg.split_seed,
    });
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, t) = batch_tensors(&train, chunk);
            zero_grads(model.params_mut());
            let (loss, grad) = mse_loss(&model.forward(&x), &t);
            model.backward(&grad);
            opt.step(model.params_mut());
            sum += loss as f64 * chunk.len() as f64;
        }
        let train_loss = sum / train.csi.len() as f64;
        let val_loss = if val.csi.is_empty() {
            evaluate_loss(&mut model, &train, cfg.batch_size)
        } else {
            evaluate_loss(&mut model, &val, cfg.batch_size)
        };
        log::info!("supervised epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        curve.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.params().iter().map(|p| p.value.clone()).collect()));
            if let Some(dir) = out_dir {
                model.to_checkpoint(extra.clone()).save(&dir.join("model.ckpt"))?;
            }
        }
    }
    let (_, best_epoch, values) = best.expect("at least one epoch ran");
    for (p, v) in model.params_mut().into_iter().zip(values) {
        p.value = v;
    }
    Ok(SupervisedRun {
        model,
        curve,
        best_epoch,
        train_ids,
        val_ids,
    })
}

pub fn write_loss_csv(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for e in curve {
        text.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
