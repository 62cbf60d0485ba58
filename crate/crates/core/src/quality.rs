//! Four-class quality maps and the binary masks they are derived from.
//!
//! A quality map labels every pixel of an unchecked mask against the ground
//! truth: `TP` (claimed and correct), `FP` (claimed but wrong), `TN` (left out
//! and correct) and `FN` (missed). The mapping is a bijection between mask
//! pairs and quality maps, so either side can be recovered from the other.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// One of the four panoramic quality classes.
///
/// The discriminant is the channel index used by assessment logits
/// (`TP, FP, TN, FN`). Raster palettes use a different order, see
/// [`PqmClass::palette_index`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum PqmClass {
    Tp = 0,
    Fp = 1,
    Tn = 2,
    Fn = 3,
}

impl PqmClass {
    /// All classes in logit channel order.
    pub const ALL: [PqmClass; 4] = [PqmClass::Tp, PqmClass::Fp, PqmClass::Tn, PqmClass::Fn];

    pub fn from_pair(gt: bool, pred: bool) -> Self {
        match (pred, gt) {
            (true, true) => PqmClass::Tp,
            (true, false) => PqmClass::Fp,
            (false, false) => PqmClass::Tn,
            (false, true) => PqmClass::Fn,
        }
    }

    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn from_channel(c: usize) -> Option<Self> {
        Self::ALL.get(c).copied()
    }

    /// Index in the serialized palette: 0=TN, 1=TP, 2=FP, 3=FN.
    pub fn palette_index(self) -> u8 {
        match self {
            PqmClass::Tn => 0,
            PqmClass::Tp => 1,
            PqmClass::Fp => 2,
            PqmClass::Fn => 3,
        }
    }

    pub fn from_palette_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(PqmClass::Tn),
            1 => Some(PqmClass::Tp),
            2 => Some(PqmClass::Fp),
            3 => Some(PqmClass::Fn),
            _ => None,
        }
    }

    /// Foreground in the ground truth (TP or FN).
    pub fn gt_positive(self) -> bool {
        matches!(self, PqmClass::Tp | PqmClass::Fn)
    }

    /// Foreground in the unchecked mask (TP or FP).
    pub fn pred_positive(self) -> bool {
        matches!(self, PqmClass::Tp | PqmClass::Fp)
    }

    pub fn is_error(self) -> bool {
        matches!(self, PqmClass::Fp | PqmClass::Fn)
    }

    pub fn name(self) -> &'static str {
        match self {
            PqmClass::Tp => "TP",
            PqmClass::Fp => "FP",
            PqmClass::Tn => "TN",
            PqmClass::Fn => "FN",
        }
    }
}

impl fmt::Display for PqmClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-major H×W grid over {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, false)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, true)
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value as u8; height * width],
        }
    }

    /// Builds a mask from 0/1 values. Any other value is rejected.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "mask dimensions must be positive".into(),
            ));
        }
        if data.len() != height * width {
            return Err(Error::Shape {
                expected: format!("{} values", height * width),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask value {v} is not 0 or 1"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Thresholds arbitrary 8-bit values: anything nonzero is foreground.
    pub fn from_threshold(height: usize, width: usize, raw: &[u8]) -> Result<Self> {
        Self::from_vec(height, width, raw.iter().map(|&v| (v != 0) as u8).collect())
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != width) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::from_vec(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(y, x) as u8;
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// 0/255 encoding used on disk.
    pub fn to_u8_255(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v * 255).collect()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn ensure_same_dims(&self, other_dims: (usize, usize)) -> Result<()> {
        if self.dims() != other_dims {
            return Err(shape_err(self.dims(), other_dims));
        }
        Ok(())
    }
}

/// One-pixel-wide object boundaries; a [`BinaryMask`] with edge semantics.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeMap(pub BinaryMask);

impl EdgeMap {
    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    pub fn into_mask(self) -> BinaryMask {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn count(&self) -> usize {
        self.0.count_ones()
    }
}

/// Row-major H×W grid of [`PqmClass`] labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QualityMap {
    height: usize,
    width: usize,
    labels: Vec<PqmClass>,
}

impl QualityMap {
    pub fn filled(height: usize, width: usize, class: PqmClass) -> Self {
        assert!(height > 0 && width > 0, "map dimensions must be positive");
        Self {
            height,
            width,
            labels: vec![class; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, labels: Vec<PqmClass>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "map dimensions must be positive".into(),
            ));
        }
        if labels.len() != height * width {
            return Err(Error::Shape {
                expected: format!("{} labels", height * width),
                actual: format!("{} labels", labels.len()),
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn from_rows(rows: &[&[PqmClass]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::from_vec(
            height,
            width,
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[PqmClass] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> PqmClass {
        self.labels[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Indicator mask of a single class.
    pub fn indicator(&self, class: PqmClass) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.labels.iter().map(|&c| (c == class) as u8).collect(),
        }
    }

    pub fn counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for &c in &self.labels {
            counts[c.channel()] += 1;
        }
        counts
    }

    pub fn to_palette_indices(&self) -> Vec<u8> {
        self.labels.iter().map(|c| c.palette_index()).collect()
    }

    pub fn from_palette_indices(height: usize, width: usize, indices: &[u8]) -> Result<Self> {
        let labels = indices
            .iter()
            .map(|&i| {
                PqmClass::from_palette_index(i).ok_or_else(|| {
                    Error::InvalidArgument(format!("palette index {i} out of range"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_vec(height, width, labels)
    }

    /// One-hot encoding in logit channel order, `4 × H × W`.
    pub fn to_one_hot(&self) -> Vec<f32> {
        let n = self.labels.len();
        let mut out = vec![0f32; 4 * n];
        for (i, c) in self.labels.iter().enumerate() {
            out[c.channel() * n + i] = 1.0;
        }
        out
    }
}

/// Labels each pixel of `pred` against `gt`.
pub fn derive_quality_map(gt: &BinaryMask, pred: &BinaryMask) -> Result<QualityMap> {
    gt.ensure_same_dims(pred.dims())?;
    let labels = gt
        .data
        .iter()
        .zip(&pred.data)
        .map(|(&g, &p)| PqmClass::from_pair(g != 0, p != 0))
        .collect();
    Ok(QualityMap {
        height: gt.height,
        width: gt.width,
        labels,
    })
}

/// Inverse of [`derive_quality_map`]: returns `(gt, pred)`.
pub fn reconstruct_masks(q: &QualityMap) -> (BinaryMask, BinaryMask) {
    let gt = q.labels.iter().map(|c| c.gt_positive() as u8).collect();
    let pred = q.labels.iter().map(|c| c.pred_positive() as u8).collect();
    (
        BinaryMask {
            height: q.height,
            width: q.width,
            data: gt,
        },
        BinaryMask {
            height: q.height,
            width: q.width,
            data: pred,
        },
    )
}

/// Per-class pixel percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub pct_tp: f64,
    pub pct_fp: f64,
    pub pct_tn: f64,
    pub pct_fn: f64,
}

impl ClassDistribution {
    pub fn from_counts(counts: [usize; 4]) -> Self {
        let total: usize = counts.iter().sum();
        let pct = |c: usize| {
            if total == 0 {
                0.0
            } else {
                100.0 * c as f64 / total as f64
            }
        };
        Self {
            pct_tp: pct(counts[0]),
            pct_fp: pct(counts[1]),
            pct_tn: pct(counts[2]),
            pct_fn: pct(counts[3]),
        }
    }

    pub fn sum(&self) -> f64 {
        self.pct_tp + self.pct_fp + self.pct_tn + self.pct_fn
    }

    pub fn get(&self, class: PqmClass) -> f64 {
        match class {
            PqmClass::Tp => self.pct_tp,
            PqmClass::Fp => self.pct_fp,
            PqmClass::Tn => self.pct_tn,
            PqmClass::Fn => self.pct_fn,
        }
    }
}

pub fn class_distribution(q: &QualityMap) -> ClassDistribution {
    ClassDistribution::from_counts(q.counts())
}

#[cfg(test)]
mod tests {
    use super::PqmClass::*;
    use super::*;

    #[test]
    fn truth_table_fixture() {
        let gt = BinaryMask::from_rows(&[[1, 0], [1, 0]]).unwrap();
        let pred = BinaryMask::from_rows(&[[1, 1], [0, 0]]).unwrap();
        let q = derive_quality_map(&gt, &pred).unwrap();
        let expected = QualityMap::from_rows(&[&[Tp, Fp], &[Fn, Tn]]).unwrap();
        assert_eq!(q, expected);
        assert_eq!(reconstruct_masks(&expected), (gt, pred));
    }

    #[test]
    fn empty_and_full_scenes() {
        let z = BinaryMask::zeros(3, 5);
        let o = BinaryMask::ones(3, 5);
        assert_eq!(
            derive_quality_map(&z, &z).unwrap(),
            QualityMap::filled(3, 5, Tn)
        );
        assert_eq!(
            derive_quality_map(&o, &o).unwrap(),
            QualityMap::filled(3, 5, Tp)
        );
        assert_eq!(
            reconstruct_masks(&QualityMap::filled(3, 5, Tn)),
            (z.clone(), z.clone())
        );
        assert_eq!(reconstruct_masks(&QualityMap::filled(3, 5, Fn)), (o, z));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = BinaryMask::zeros(2, 3);
        let b = BinaryMask::zeros(3, 2);
        assert!(matches!(
            derive_quality_map(&a, &b),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn non_binary_values_are_rejected() {
        assert!(BinaryMask::from_vec(1, 2, vec![0, 2]).is_err());
        assert_eq!(
            BinaryMask::from_threshold(1, 3, &[0, 255, 7])
                .unwrap()
                .as_slice(),
            &[0, 1, 1]
        );
    }

    #[test]
    fn distribution_fixtures() {
        let d = class_distribution(&QualityMap::filled(4, 4, Tn));
        assert_eq!(
            (d.pct_tp, d.pct_fp, d.pct_tn, d.pct_fn),
            (0.0, 0.0, 100.0, 0.0)
        );

        let q = QualityMap::from_rows(&[&[Tp, Fp], &[Fn, Tn]]).unwrap();
        let d = class_distribution(&q);
        assert_eq!(
            (d.pct_tp, d.pct_fp, d.pct_tn, d.pct_fn),
            (25.0, 25.0, 25.0, 25.0)
        );

        let mut labels = vec![Tp; 60];
        labels.extend([Fp; 5]);
        labels.extend([Tn; 30]);
        labels.extend([Fn; 5]);
        let q = QualityMap::from_vec(10, 10, labels).unwrap();
        let d = class_distribution(&q);
        assert_eq!(
            (d.pct_tp, d.pct_fp, d.pct_tn, d.pct_fn),
            (60.0, 5.0, 30.0, 5.0)
        );
        assert!((d.sum() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn palette_round_trip() {
        for c in PqmClass::ALL {
            assert_eq!(PqmClass::from_palette_index(c.palette_index()), Some(c));
            assert_eq!(PqmClass::from_channel(c.channel()), Some(c));
        }
        assert_eq!(PqmClass::from_palette_index(4), None);
    }
}
