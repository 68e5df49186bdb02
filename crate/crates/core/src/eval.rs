//! Detection metrics: IoU, AP at IoU 0.5 with all-point interpolation,
//! box extraction from generated frames and model evaluation reports.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cgan::{generate_frames, Generator};
use crate::csi::PairedSample;
use crate::error::{Error, Result};
use crate::frame::{BoundingBox, Color, Frame, FRAME_HEIGHT, FRAME_WIDTH};
use crate::supervised::BoxRegressor;
use crate::SimRng;

pub const IOU_THRESHOLD: f64 = 0.5;
/// Smallest foreground component accepted as a detection, in pixels.
pub const MIN_COMPONENT_PIXELS: usize = 20;
/// Default max-channel distance from the background marking foreground;
/// half the distance between the default actor and background colours.
pub const DEFAULT_FOREGROUND_THRESHOLD: u8 = 96;
pub const INTERPOLATION: &str = "all-point";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub sample_id: u64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Intersection over union; 0 when the union has no area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap: f64,
    pub n_images: usize,
    pub n_gt: usize,
    pub n_detections: usize,
    /// `(recall, precision)` after each ranked detection.
    pub pr_curve: Vec<(f64, f64)>,
}

/// Average precision at `iou_threshold`.
///
/// Detections are ranked by descending score (stable, so equal scores keep
/// their input order). Each claims the unmatched ground truth of its image
/// with the highest IoU, ties going to the lower index, and is a true
/// positive when that IoU reaches the threshold. AP is the area under the
/// precision envelope `p̂(r) = max_{r' ≥ r} p(r')`. With no ground truth
/// the AP is 0.
pub fn average_precision(
    detections: &[Detection],
    ground_truths: &BTreeMap<u64, Vec<BoundingBox>>,
    iou_threshold: f64,
) -> Result<ApSummary> {
    let mut seen = HashSet::new();
    for d in detections {
        if !d.score.is_finite() {
            return Err(Error::Validation(format!("detection for sample {} has no finite score", d.sample_id)));
        }
        let key = (d.sample_id, [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2].map(f64::to_bits));
        if !seen.insert(key) {
            return Err(Error::Validation(format!(
                "duplicate detection for sample {} at ({}, {}, {}, {})",
                d.sample_id, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
            )));
        }
    }
    let n_gt: usize = ground_truths.values().map(Vec::len).sum();
    let mut ranked: Vec<&Detection> = detections.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut used: HashMap<u64, Vec<bool>> = ground_truths.iter().map(|(&k, v)| (k, vec![false; v.len()])).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut pr_curve = Vec::with_capacity(ranked.len());
    let mut hits = Vec::with_capacity(ranked.len());
    for d in ranked {
        let mut best: Option<(usize, f64)> = None;
        if let Some(gts) = ground_truths.get(&d.sample_id) {
            let flags = &used[&d.sample_id];
            for (j, g) in gts.iter().enumerate() {
                if flags[j] {
                    continue;
                }
                let v = iou(&d.bbox, g);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
        }
        match best {
            Some((j, v)) if v >= iou_threshold => {
                used.get_mut(&d.sample_id).unwrap()[j] = true;
                tp += 1;
                hits.push(true);
            }
            _ => {
                fp += 1;
                hits.push(false);
            }
        }
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        pr_curve.push((recall, tp as f64 / (tp + fp) as f64));
    }

    // Recall rises by 1/n_gt exactly at each true positive, so the area is
    // a sum of envelope values divided once; a perfect ranking scores 1.
    let mut ap = 0.0;
    if n_gt > 0 {
        let mut envelope = 0.0f64;
        // Walk backwards so the envelope is a running maximum.
        for (&(_, p), &hit) in pr_curve.iter().zip(&hits).rev() {
            envelope = envelope.max(p);
            if hit {
                ap += envelope;
            }
        }
        ap /= n_gt as f64;
    }
    Ok(ApSummary {
        ap,
        n_images: ground_truths.len(),
        n_gt,
        n_detections: detections.len(),
        pr_curve,
    })
}

pub fn ap_iou50(detections: &[Detection], ground_truths: &BTreeMap<u64, Vec<BoundingBox>>) -> Result<ApSummary> {
    average_precision(detections, ground_truths, IOU_THRESHOLD)
}

/// Bounding rectangle of the largest 4-connected foreground component,
/// with `confidence` set to its area over the image area. Foreground means
/// some channel differs from `background` by more than `threshold`.
pub fn extract_box_from_generated(frame: &Frame, background: Color, threshold: u8) -> Option<BoundingBox> {
    let (h, w) = (FRAME_HEIGHT, FRAME_WIDTH);
    let mask: Vec<bool> = (0..h * w)
        .map(|i| {
            let c = frame.color_at(i / w, i % w).0;
            (0..3).any(|k| c[k].abs_diff(background.0[k]) > threshold)
        })
        .collect();
    let mut label = vec![false; h * w];
    let mut best: Option<(usize, [usize; 4])> = None;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask[start] || label[start] {
            continue;
        }
        label[start] = true;
        queue.push_back(start);
        let (mut area, mut ext) = (0, [usize::MAX, usize::MAX, 0, 0]);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            area += 1;
            ext = [ext[0].min(x), ext[1].min(y), ext[2].max(x), ext[3].max(y)];
            let mut visit = |j: usize| {
                if mask[j] && !label[j] {
                    label[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.is_none_or(|(a, _)| area > a) {
            best = Some((area, ext));
        }
    }
    let (area, [x1, y1, x2, y2]) = best.filter(|(a, _)| *a >= MIN_COMPONENT_PIXELS)?;
    Some(BoundingBox {
        x1: x1 as f64,
        y1: y1 as f64,
        x2: (x2 + 1) as f64,
        y2: (y2 + 1) as f64,
        confidence: (area as f64 / (h * w) as f64).clamp(0.0, 1.0),
    })
}

/// Most frequent colour in `frame`; ties go to the smallest RGB value.
pub fn dominant_color(frame: &Frame) -> Color {
    let mut counts: BTreeMap<[u8; 3], usize> = BTreeMap::new();
    for y in 0..FRAME_HEIGHT {
        for x in 0..FRAME_WIDTH {
            *counts.entry(frame.color_at(y, x).0).or_default() += 1;
        }
    }
    let best = counts.iter().fold(None, |best: Option<(&[u8; 3], usize)>, (c, &n)| match best {
        Some((_, m)) if m >= n => best,
        _ => Some((c, n)),
    });
    Color(*best.expect("frame has pixels").0)
}

/// Identifies the samples a report was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub name: String,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub n_samples: usize,
    /// SHA-256 of the comma-joined sample ids in order.
    pub ids_sha256: String,
}

impl SplitInfo {
    pub fn new(name: &str, train_fraction: f64, split_seed: u64, ids: &[u64]) -> Self {
        let joined = ids.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let digest = Sha256::digest(joined.as_bytes());
        SplitInfo {
            name: name.into(),
            train_fraction,
            split_seed,
            n_samples: ids.len(),
            ids_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: String,
    /// Where detections came from: `model-output`, `automatic-extraction`
    /// or `hand-annotation`.
    pub annotation_source: String,
    pub iou_threshold: f64,
    pub interpolation: String,
    pub split: SplitInfo,
    pub ap_iou50: f64,
    pub n_images: usize,
    pub n_gt: usize,
    pub n_detections: usize,
    pub pr_curve: Vec<(f64, f64)>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    fn from_summary(kind: &str, source: &str, split: SplitInfo, s: ApSummary) -> Self {
        EvalReport {
            model_kind: kind.into(),
            annotation_source: source.into(),
            iou_threshold: IOU_THRESHOLD,
            interpolation: INTERPOLATION.into(),
            split,
            ap_iou50: s.ap,
            n_images: s.n_images,
            n_gt: s.n_gt,
            n_detections: s.n_detections,
            pr_curve: s.pr_curve,
            config: serde_json::Value::Null,
        }
    }
}

fn ground_truths(samples: &[&PairedSample]) -> BTreeMap<u64, Vec<BoundingBox>> {
    samples.iter().map(|s| (s.sample_id, s.gt_boxes.clone())).collect()
}

fn non_empty(samples: &[&PairedSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    Ok(())
}

/// Scores arbitrary per-sample detections against the samples' ground truth.
pub fn evaluate_detections(
    kind: &str,
    source: &str,
    samples: &[&PairedSample],
    detections: &[Detection],
    split: SplitInfo,
) -> Result<EvalReport> {
    non_empty(samples)?;
    let summary = ap_iou50(detections, &ground_truths(samples))?;
    Ok(EvalReport::from_summary(kind, source, split, summary))
}

pub fn evaluate_supervised(model: &mut BoxRegressor<f32>, samples: &[&PairedSample], split: SplitInfo) -> Result<EvalReport> {
    non_empty(samples)?;
    let mut detections = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let csi: Vec<Vec<f32>> = chunk.iter().map(|s| s.normalized_csi::<f32>().values).collect();
        let refs: Vec<&[f32]> = csi.iter().map(Vec::as_slice).collect();
        for (s, b) in chunk.iter().zip(model.predict(&refs)) {
            detections.push(Detection {
                sample_id: s.sample_id,
                bbox: b,
                score: b.confidence,
            });
        }
    }
    evaluate_detections("supervised", "model-output", samples, &detections, split)
}

/// Generated-frame evaluation. With `annotations`, their boxes (scored by
/// their confidence) replace the automatic extractor.
pub fn evaluate_gan(
    generator: &mut Generator<f32>,
    samples: &[&PairedSample],
    split: SplitInfo,
    annotations: Option<&HashMap<u64, Vec<BoundingBox>>>,
    background: Color,
    threshold: u8,
    seed: u64,
) -> Result<EvalReport> {
    non_empty(samples)?;
    let mut detections = Vec::new();
    if let Some(ann) = annotations {
        for s in samples {
            for b in ann.get(&s.sample_id).into_iter().flatten() {
                detections.push(Detection {
                    sample_id: s.sample_id,
                    bbox: *b,
                    score: b.confidence,
                });
            }
        }
        return evaluate_detections("gan", "hand-annotation", samples, &detections, split);
    }
    let csi: Vec<Vec<f32>> = samples.iter().map(|s| s.normalized_csi::<f32>().values).collect();
    let refs: Vec<&[f32]> = csi.iter().map(Vec::as_slice).collect();
    let frames = generate_frames(generator, &refs, &mut SimRng::seed_from_u64(seed))?;
    for (s, f) in samples.iter().zip(&frames) {
        if let Some(b) = extract_box_from_generated(f, background, threshold) {
            detections.push(Detection {
                sample_id: s.sample_id,
                bbox: b,
                score: b.confidence,
            });
        }
    }
    evaluate_detections("gan", "automatic-extraction", samples, &detections, split)
}

/// Unsupervised minus supervised AP in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub supervised_ap_iou50: f64,
    pub unsupervised_ap_iou50: f64,
    pub difference_points: f64,
    pub supervised_annotation_source: String,
    pub unsupervised_annotation_source: String,
    pub split: SplitInfo,
}

pub fn compare_reports(supervised: &EvalReport, unsupervised: &EvalReport) -> Result<Comparison> {
    if supervised.split != unsupervised.split {
        return Err(Error::Validation(format!(
            "reports cover different splits ({} {} vs {} {})",
            supervised.split.name, supervised.split.ids_sha256, unsupervised.split.name, unsupervised.split.ids_sha256
        )));
    }
    Ok(Comparison {
        supervised_ap_iou50: supervised.ap_iou50,
        unsupervised_ap_iou50: unsupervised.ap_iou50,
        difference_points: (unsupervised.ap_iou50 - supervised.ap_iou50) * 100.0,
        supervised_annotation_source: supervised.annotation_source.clone(),
        unsupervised_annotation_source: unsupervised.annotation_source.clone(),
        split: supervised.split.clone(),
    })
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: not an evaluation report: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2, 1.0).unwrap()
    }

    fn det(id: u64, bbox: BoundingBox, score: f64) -> Detection {
        Detection { sample_id: id, bbox, score }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &b(1.0, 1.0, 3.0, 3.0)), 1.0 / 7.0);
        let z = b(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&z, &z), 0.0);
    }

    #[test]
    fn hand_enumerated_pr_curve() {
        let gts = BTreeMap::from([(0, vec![b(0.0, 0.0, 10.0, 10.0)]), (1, vec![b(0.0, 0.0, 10.0, 10.0)])]);
        let dets = [det(0, b(0.0, 0.0, 10.0, 10.0), 0.9), det(1, b(50.0, 50.0, 60.0, 60.0), 0.6)];
        let s = ap_iou50(&dets, &gts).unwrap();
        assert_eq!(s.pr_curve, vec![(0.5, 1.0), (0.5, 0.5)]);
        assert_eq!(s.ap, 0.5);
    }

    #[test]
    fn perfect_and_empty_detection_sets() {
        let gts = BTreeMap::from([(0, vec![b(0.0, 0.0, 10.0, 10.0)]), (1, vec![b(3.0, 3.0, 9.0, 9.0)])]);
        let dets: Vec<Detection> = gts.iter().map(|(&k, v)| det(k, v[0], 0.7)).collect();
        assert_eq!(ap_iou50(&dets, &gts).unwrap().ap, 1.0);
        assert_eq!(ap_iou50(&[], &gts).unwrap().ap, 0.0);
    }

    #[test]
    fn duplicate_detections_are_rejected() {
        let gts = BTreeMap::from([(0, vec![b(0.0, 0.0, 10.0, 10.0)])]);
        let d = det(0, b(0.0, 0.0, 10.0, 10.0), 0.9);
        assert!(matches!(ap_iou50(&[d, Detection { score: 0.1, ..d }], &gts), Err(Error::Validation(_))));
    }

    #[test]
    fn extraction_picks_largest_blob() {
        let bg = Color([51, 51, 64]);
        let mut f = Frame::filled(bg);
        assert_eq!(extract_box_from_generated(&f, bg, DEFAULT_FOREGROUND_THRESHOLD), None);
        for y in 10..20 {
            for x in 10..20 {
                f.set(y, x, Color([240, 190, 80]));
            }
        }
        for y in 50..53 {
            for x in 100..110 {
                f.set(y, x, Color([240, 190, 80]));
            }
        }
        let got = extract_box_from_generated(&f, bg, DEFAULT_FOREGROUND_THRESHOLD).unwrap();
        assert_eq!((got.x1, got.y1, got.x2, got.y2), (10.0, 10.0, 20.0, 20.0));
        assert_eq!(got.confidence, 100.0 / 19200.0);
    }

    #[test]
    fn tiny_blobs_are_ignored() {
        let bg = Color([0, 0, 0]);
        let mut f = Frame::filled(bg);
        for x in 0..19 {
            f.set(5, x, Color([255, 255, 255]));
        }
        assert_eq!(extract_box_from_generated(&f, bg, 10), None);
        f.set(6, 0, Color([255, 255, 255]));
        assert!(extract_box_from_generated(&f, bg, 10).is_some());
    }

    #[test]
    fn comparison_is_signed_points() {
        let split = SplitInfo::new("val", 0.8, 0, &[1, 2, 3]);
        let mk = |ap| EvalReport {
            ap_iou50: ap,
            ..EvalReport::from_summary(
                "x",
                "y",
                split.clone(),
                ApSummary {
                    ap,
                    n_images: 1,
                    n_gt: 1,
                    n_detections: 1,
                    pr_curve: vec![],
                },
            )
        };
        let c = compare_reports(&mk(0.74), &mk(0.92)).unwrap();
        assert!((c.difference_points - 18.0).abs() < 1e-9);
        assert!((compare_reports(&mk(0.8), &mk(0.5)).unwrap().difference_points + 30.0).abs() < 1e-9);
        assert_eq!(compare_reports(&mk(0.6), &mk(0.6)).unwrap().difference_points, 0.0);
        let mut other = mk(0.6);
        other.split = SplitInfo::new("val", 0.8, 1, &[1, 2, 4]);
        assert!(matches!(compare_reports(&mk(0.6), &other), Err(Error::Validation(_))));
    }
}
