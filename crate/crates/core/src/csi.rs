//! CSI tensor packing and per-sample min/max normalisation.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{BoundingBox, Frame};
use crate::scalar::Scalar;
use crate::scene::N_SUBCARRIERS;
use crate::tensor::Tensor;

pub const CSI_ROWS: usize = 4;
pub const CSI_LEN: usize = CSI_ROWS * N_SUBCARRIERS;
/// Tensor shape `[rows, 1, subcarriers]`.
pub const CSI_SHAPE: [usize; 3] = [CSI_ROWS, 1, N_SUBCARRIERS];

/// Real I/Q tensor of shape `[4, 1, 56]`.
///
/// Rows: I of antenna 1, Q of antenna 1, I of antenna 2, Q of antenna 2.
/// Columns: subcarriers in ascending frequency order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTensor<T> {
    values: Vec<T>,
}

impl<T: Scalar> CsiTensor<T> {
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.len() != CSI_LEN {
            return Err(Error::InvalidInput(format!(
                "CSI tensor needs {CSI_LEN} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("CSI tensor contains non-finite values".into()));
        }
        Ok(CsiTensor { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, row: usize, subcarrier: usize) -> T {
        self.values[row * N_SUBCARRIERS + subcarrier]
    }

    /// Inverse of [`pack_csi`].
    pub fn unpack(&self) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
        let row = |r: usize| &self.values[r * N_SUBCARRIERS..(r + 1) * N_SUBCARRIERS];
        let join = |re: &[T], im: &[T]| re.iter().zip(im).map(|(&a, &b)| Complex::new(a, b)).collect();
        (join(row(0), row(1)), join(row(2), row(3)))
    }

    pub fn cast<U: Scalar>(&self) -> CsiTensor<U> {
        CsiTensor {
            values: self.values.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

/// Packs two per-antenna complex responses into a CSI tensor.
pub fn pack_csi<S: Scalar, T: Scalar>(antenna1: &[Complex<S>], antenna2: &[Complex<S>]) -> Result<CsiTensor<T>> {
    for (i, a) in [antenna1, antenna2].iter().enumerate() {
        if a.len() != N_SUBCARRIERS {
            return Err(Error::InvalidInput(format!(
                "antenna {} vector has length {}, expected {N_SUBCARRIERS}",
                i + 1,
                a.len()
            )));
        }
    }
    let conv = |v: S| T::from_f64_lossy(v.to_f64_lossy());
    let mut values = Vec::with_capacity(CSI_LEN);
    for a in [antenna1, antenna2] {
        values.extend(a.iter().map(|c| conv(c.re)));
        values.extend(a.iter().map(|c| conv(c.im)));
    }
    CsiTensor::from_values(values)
}

/// CSI affinely mapped onto `[0, 1]` using the tensor's own extremes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCsi<T> {
    pub values: Vec<T>,
    pub source_min: T,
    pub source_max: T,
}

/// `(x - min) / (max - min)` over all 224 entries; a constant tensor maps
/// to all zeros.
pub fn normalize_minmax<T: Scalar>(csi: &CsiTensor<T>) -> Result<NormalizedCsi<T>> {
    let v = csi.values();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("cannot normalise non-finite CSI".into()));
    }
    let lo = v.iter().copied().fold(T::infinity(), T::min);
    let hi = v.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    let values = if span > T::zero() {
        // Clamp guards the last ulp; the map itself is monotone.
        v.iter().map(|&x| ((x - lo) / span).min(T::one())).collect()
    } else {
        vec![T::zero(); v.len()]
    };
    Ok(NormalizedCsi {
        values,
        source_min: lo,
        source_max: hi,
    })
}

/// Per-entry `(x - mean) * scale` applied in front of a model's first
/// linear layer.
///
/// Min/max normalised CSI is dominated by the static room response shared
/// by every sample; centring on training-split statistics leaves the first
/// layer with the position-dependent part only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiStandardizer {
    pub mean: Vec<f64>,
    /// Reciprocal standard deviation.
    pub scale: Vec<f64>,
}

impl Default for CsiStandardizer {
    fn default() -> Self {
        CsiStandardizer {
            mean: vec![0.0; CSI_LEN],
            scale: vec![1.0; CSI_LEN],
        }
    }
}

impl CsiStandardizer {
    /// Entries with standard deviation below `1e-6` are only centred.
    pub fn fit<T: Scalar>(rows: &[&[T]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("cannot fit a standardizer on zero rows".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != CSI_LEN) {
            return Err(Error::InvalidInput(format!("expected {CSI_LEN} CSI values, got {}", r.len())));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; CSI_LEN];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v.to_f64_lossy() / n;
            }
        }
        let mut var = vec![0.0; CSI_LEN];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v.to_f64_lossy() - m).powi(2) / n;
            }
        }
        let scale = var.iter().map(|&v| if v.sqrt() < 1e-6 { 1.0 } else { 1.0 / v.sqrt() }).collect();
        Ok(CsiStandardizer { mean, scale })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != CSI_LEN || self.scale.len() != CSI_LEN {
            return Err(Error::Config(format!("standardizer must hold {CSI_LEN} means and scales")));
        }
        if self.mean.iter().chain(&self.scale).any(|v| !v.is_finite()) {
            return Err(Error::Config("standardizer holds non-finite values".into()));
        }
        Ok(())
    }

    /// `[N, 224]` in, `[N, 224]` out.
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        for row in y.data_mut().chunks_mut(CSI_LEN) {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - T::from_f64_lossy(m)) * T::from_f64_lossy(s);
            }
        }
        y
    }

    pub fn backward<T: Scalar>(&self, grad: &Tensor<T>) -> Tensor<T> {
        let mut g = grad.clone();
        for row in g.data_mut().chunks_mut(CSI_LEN) {
            for (v, &s) in row.iter_mut().zip(&self.scale) {
                *v = *v * T::from_f64_lossy(s);
            }
        }
        g
    }
}

/// One synchronised CSI/frame observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub sample_id: u64,
    /// Seconds.
    pub timestamp: f64,
    pub csi: CsiTensor<f32>,
    pub frame: Frame,
    pub gt_boxes: Vec<BoundingBox>,
}

impl PairedSample {
    pub fn normalized_csi<T: Scalar>(&self) -> NormalizedCsi<T> {
        normalize_minmax(&self.csi.cast::<T>()).expect("stored CSI is finite")
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn standardizer_centres_and_scales() {
        let a: Vec<f64> = (0..CSI_LEN).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..CSI_LEN).map(|i| if i == 0 { 0.0 } else { i as f64 + 2.0 }).collect();
        let s = CsiStandardizer::fit(&[&a, &b]).unwrap();
        assert_eq!(s.mean[5], 6.0);
        assert_eq!(s.scale[5], 1.0);
        // Constant entry: centred, not scaled.
        assert_eq!(s.scale[0], 1.0);
        let x = Tensor::from_vec(&[2, CSI_LEN], a.iter().chain(&b).copied().collect());
        let y = s.apply(&x);
        assert_eq!(y.data()[5], -1.0);
        assert_eq!(y.data()[CSI_LEN + 5], 1.0);
        assert_eq!(y.data()[0], 0.0);
        assert!(CsiStandardizer::fit::<f64>(&[]).is_err());
    }

    #[test]
    fn rows_follow_antenna_iq_order() {
        let a1 = vec![Complex64::new(1.0, 0.0); 56];
        let a2 = vec![Complex64::new(0.0, 1.0); 56];
        let t: CsiTensor<f64> = pack_csi(&a1, &a2).unwrap();
        for k in 0..56 {
            assert_eq!([t.get(0, k), t.get(1, k), t.get(2, k), t.get(3, k)], [1.0, 0.0, 0.0, 1.0]);
        }
        let mut b = a1.clone();
        b[0] = Complex64::new(3.0, -4.0);
        let t: CsiTensor<f64> = pack_csi(&b, &a2).unwrap();
        assert_eq!((t.get(0, 0), t.get(1, 0)), (3.0, -4.0));
    }

    #[test]
    fn wrong_length_is_rejected() {
        let a = vec![Complex64::new(1.0, 0.0); 55];
        let b = vec![Complex64::new(1.0, 0.0); 56];
        assert!(matches!(pack_csi::<f64, f32>(&a, &b), Err(Error::InvalidInput(_))));
        assert!(matches!(pack_csi::<f64, f32>(&b, &a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn affine_endpoints() {
        let mut v = vec![3.0f64; 224];
        v[0] = 2.0;
        v[1] = 6.0;
        v[2] = 4.0;
        let n = normalize_minmax(&CsiTensor::from_values(v).unwrap()).unwrap();
        assert_eq!((n.values[0], n.values[1], n.values[2]), (0.0, 1.0, 0.5));
        assert_eq!((n.source_min, n.source_max), (2.0, 6.0));
    }

    #[test]
    fn constant_tensor_normalises_to_zeros() {
        let n = normalize_minmax(&CsiTensor::from_values(vec![7.3f32; 224]).unwrap()).unwrap();
        assert!(n.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut v = vec![0.0f64; 224];
        v[5] = f64::NAN;
        assert!(CsiTensor::from_values(v).is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(re in prop::collection::vec(-1e3f64..1e3, 112), im in prop::collection::vec(-1e3f64..1e3, 112)) {
            let a1: Vec<Complex64> = (0..56).map(|k| Complex64::new(re[k], im[k])).collect();
            let a2: Vec<Complex64> = (0..56).map(|k| Complex64::new(re[56 + k], im[56 + k])).collect();
            let t: CsiTensor<f64> = pack_csi(&a1, &a2).unwrap();
            let (b1, b2) = t.unpack();
            prop_assert_eq!(b1, a1);
            prop_assert_eq!(b2, a2);
        }

        #[test]
        fn normalisation_is_idempotent(v in prop::collection::vec(-50.0f64..50.0, 224)) {
            let once = normalize_minmax(&CsiTensor::from_values(v).unwrap()).unwrap();
            prop_assume!(once.source_max > once.source_min);
            let twice = normalize_minmax(&CsiTensor::from_values(once.values.clone()).unwrap()).unwrap();
            for (a, b) in once.values.iter().zip(&twice.values) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
