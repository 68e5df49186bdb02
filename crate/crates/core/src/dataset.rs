//! On-disk paired dataset.
//!
//! ```text
//! DIR/index.json           version, sample count, frame shape, per-record metadata
//! DIR/csi.bin              f32 LE, 224 values (4 rows × 56 subcarriers) per record
//! DIR/frames/NNNNNN.png    160×120 RGB, lossless
//! ```
//!
//! Record `i` of the index owns bytes `[896 i, 896 (i + 1))` of `csi.bin`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiTensor, PairedSample, CSI_LEN};
use crate::error::{Error, Result};
use crate::frame::{BoundingBox, Frame, FRAME_SHAPE};
use crate::SimRng;

pub const INDEX_FILE: &str = "index.json";
pub const CSI_FILE: &str = "csi.bin";
pub const FRAMES_DIR: &str = "frames";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes per CSI record.
pub const CSI_RECORD_BYTES: usize = CSI_LEN * 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub id: u64,
    pub timestamp: f64,
    pub frame: String,
    pub gt_boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub n_samples: usize,
    pub frame_shape: [usize; 3],
    pub records: Vec<IndexRecord>,
}

pub fn frame_file_name(id: u64) -> String {
    format!("{FRAMES_DIR}/{id:06}.png")
}

/// A loaded dataset. Records keep their on-disk order.
#[derive(Debug, Clone)]
pub struct Dataset {
    dir: PathBuf,
    samples: Vec<PairedSample>,
}

impl Dataset {
    pub fn from_samples(dir: PathBuf, samples: Vec<PairedSample>) -> Self {
        Dataset { dir, samples }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[PairedSample] {
        &self.samples
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.sample_id).collect()
    }

    pub fn get(&self, id: u64) -> Option<&PairedSample> {
        // Simulated datasets use ids 0..n in order.
        match self.samples.get(id as usize) {
            Some(s) if s.sample_id == id => Some(s),
            _ => self.samples.iter().find(|s| s.sample_id == id),
        }
    }

    /// Samples for `ids`, in the given order.
    pub fn select(&self, ids: &[u64]) -> Result<Vec<&PairedSample>> {
        ids.iter()
            .map(|&id| {
                self.get(id)
                    .ok_or_else(|| Error::Validation(format!("sample {id} not in dataset {}", self.dir.display())))
            })
            .collect()
    }
}

fn check_unique(samples: &[PairedSample]) -> Result<()> {
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if !seen.insert(s.sample_id) {
            return Err(Error::InvalidInput(format!("duplicate sample_id {}", s.sample_id)));
        }
    }
    Ok(())
}

fn write_into(samples: &[PairedSample], dir: &Path) -> Result<()> {
    let frames = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    let mut csi = Vec::with_capacity(samples.len() * CSI_RECORD_BYTES);
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        for v in s.csi.values() {
            csi.extend_from_slice(&v.to_le_bytes());
        }
        let name = frame_file_name(s.sample_id);
        s.frame.save_png(&dir.join(&name))?;
        records.push(IndexRecord {
            id: s.sample_id,
            timestamp: s.timestamp,
            frame: name,
            gt_boxes: s.gt_boxes.clone(),
        });
    }
    let csi_path = dir.join(CSI_FILE);
    fs::write(&csi_path, &csi).map_err(|e| Error::io(&csi_path, e))?;
    let index = DatasetIndex {
        version: FORMAT_VERSION,
        n_samples: samples.len(),
        frame_shape: FRAME_SHAPE,
        records,
    };
    let index_path = dir.join(INDEX_FILE);
    let text = serde_json::to_string_pretty(&index).expect("index serialises");
    fs::write(&index_path, text).map_err(|e| Error::io(&index_path, e))
}

/// Writes `samples` to `out_dir`.
///
/// Output is staged in a sibling directory and moved into place only when
/// complete; on failure the staging directory is removed. An existing
/// `out_dir` is replaced only if it is empty or already holds a dataset.
pub fn save_dataset(samples: &[PairedSample], out_dir: &Path) -> Result<()> {
    check_unique(samples)?;
    if out_dir.exists() {
        let empty = fs::read_dir(out_dir).map_err(|e| Error::io(out_dir, e))?.next().is_none();
        if !empty && !out_dir.join(INDEX_FILE).exists() {
            return Err(Error::Config(format!(
                "refusing to overwrite non-dataset directory {}",
                out_dir.display()
            )));
        }
    }
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let staging = out_dir.with_file_name(format!(".{name}.partial-{}", std::process::id()));
    if let Some(parent) = staging.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let _ = fs::remove_dir_all(&staging);
    let result = write_into(samples, &staging).and_then(|_| {
        if out_dir.exists() {
            fs::remove_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        }
        fs::rename(&staging, out_dir).map_err(|e| Error::io(out_dir, e))
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

/// Reads and validates a dataset written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
    }
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(&index_path, None, "index file missing"),
        _ => Error::io(&index_path, e),
    })?;
    let index: DatasetIndex =
        serde_json::from_str(&text).map_err(|e| Error::format(&index_path, None, format!("corrupt index: {e}")))?;
    if index.version != FORMAT_VERSION {
        return Err(Error::format(&index_path, None, format!("unsupported version {}", index.version)));
    }
    if index.n_samples != index.records.len() {
        return Err(Error::format(
            &index_path,
            None,
            format!("n_samples {} but {} records", index.n_samples, index.records.len()),
        ));
    }
    if index.frame_shape != FRAME_SHAPE {
        return Err(Error::format(&index_path, None, format!("unsupported frame shape {:?}", index.frame_shape)));
    }
    let csi_path = dir.join(CSI_FILE);
    let csi = fs::read(&csi_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(&csi_path, None, "CSI file missing"),
        _ => Error::io(&csi_path, e),
    })?;
    if csi.len() != index.records.len() * CSI_RECORD_BYTES {
        return Err(Error::format(
            &csi_path,
            None,
            format!(
                "expected {} bytes for {} records, found {}",
                index.records.len() * CSI_RECORD_BYTES,
                index.records.len(),
                csi.len()
            ),
        ));
    }
    let mut seen = HashSet::new();
    let mut samples = Vec::with_capacity(index.records.len());
    for (rec, raw) in index.records.into_iter().zip(csi.chunks_exact(CSI_RECORD_BYTES)) {
        if !seen.insert(rec.id) {
            return Err(Error::format(&index_path, Some(rec.id), "duplicate record id"));
        }
        for b in &rec.gt_boxes {
            b.validate().map_err(|e| Error::format(&index_path, Some(rec.id), e.to_string()))?;
        }
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let csi = CsiTensor::from_values(values).map_err(|e| Error::format(&csi_path, Some(rec.id), e.to_string()))?;
        let frame_path = dir.join(&rec.frame);
        let frame = Frame::load_png(&frame_path).map_err(|e| {
            let msg = match &e {
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "frame file missing".to_string(),
                other => format!("unreadable frame: {other}"),
            };
            Error::format(&frame_path, Some(rec.id), msg)
        })?;
        samples.push(PairedSample {
            sample_id: rec.id,
            timestamp: rec.timestamp,
            csi,
            frame,
            gt_boxes: rec.gt_boxes,
        });
    }
    Ok(Dataset::from_samples(dir.to_path_buf(), samples))
}

/// Deterministic shuffled split into `(train, validation)` ids.
pub fn split_dataset(ids: &[u64], train_fraction: f64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {train_fraction} must lie in (0, 1)")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut SimRng::seed_from_u64(seed));
    let n_train = (ids.len() as f64 * train_fraction).round() as usize;
    let val = shuffled.split_off(n_train.min(ids.len()));
    Ok((shuffled, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let ids: Vec<u64> = (0..100).collect();
        let (tr, va) = split_dataset(&ids, 0.8, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (80, 20));
        let mut all: Vec<u64> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, ids);
        assert_eq!(split_dataset(&ids, 0.8, 7).unwrap(), (tr.clone(), va));
        assert_ne!(split_dataset(&ids, 0.8, 8).unwrap().0, tr);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        assert!(split_dataset(&[1, 2], 0.0, 0).is_err());
        assert!(split_dataset(&[1, 2], 1.0, 0).is_err());
    }

    #[test]
    fn half_split_of_a_thousand() {
        let ids: Vec<u64> = (0..1000).collect();
        let (tr, va) = split_dataset(&ids, 0.5, 3).unwrap();
        let tr: HashSet<u64> = tr.into_iter().collect();
        let va: HashSet<u64> = va.into_iter().collect();
        assert!(tr.is_disjoint(&va));
        assert!(ids.iter().all(|i| tr.contains(i) ^ va.contains(i)));
    }
}
