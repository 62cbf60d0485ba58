//! Per-class confusion counts, F1/IoU scores and report aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::quality::{BinaryMask, PqmClass, QualityMap};

/// Two-class confusion counts for one PQM class treated as foreground.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

pub fn per_class_confusion(
    pred_q: &QualityMap,
    gt_q: &QualityMap,
    class: PqmClass,
) -> Result<BinaryConfusion> {
    if pred_q.dims() != gt_q.dims() {
        return Err(shape_err(gt_q.dims(), pred_q.dims()));
    }
    let mut cm = BinaryConfusion::default();
    for (&p, &g) in pred_q.labels().iter().zip(gt_q.labels()) {
        match (p == class, g == class) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// A ratio that may be 0/0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Percentage; 0 when undefined.
    pub value: f64,
    pub defined: bool,
}

impl Score {
    fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Score {
                value: 0.0,
                defined: false,
            }
        } else {
            Score {
                value: 100.0 * num / den,
                defined: true,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Score,
    pub recall: Score,
    pub f1: Score,
    pub iou: Score,
}

pub fn scores_from_confusion(cm: &BinaryConfusion) -> ClassScores {
    let tp = cm.tp as f64;
    let fp = cm.fp as f64;
    let fn_ = cm.fn_ as f64;
    let precision = Score::ratio(tp, tp + fp);
    let recall = Score::ratio(tp, tp + fn_);
    // Harmonic mean of precision and recall. Written in count form so the
    // value stays defined (and 0) when tp == 0 but fp + fn > 0.
    let f1 = if precision.defined && recall.defined {
        let (p, r) = (precision.value, recall.value);
        if p + r == 0.0 {
            Score {
                value: 0.0,
                defined: true,
            }
        } else {
            Score {
                value: 2.0 * p * r / (p + r),
                defined: true,
            }
        }
    } else {
        Score::ratio(2.0 * tp, 2.0 * tp + fp + fn_)
    };
    let iou = Score::ratio(tp, tp + fp + fn_);
    ClassScores {
        precision,
        recall,
        f1,
        iou,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub per_class: BTreeMap<PqmClass, ClassScores>,
    pub mf1: f64,
    pub miou: f64,
}

impl AssessmentReport {
    pub fn from_confusions(cms: &[BinaryConfusion; 4]) -> Self {
        let per_class: BTreeMap<_, _> = PqmClass::ALL
            .iter()
            .map(|&c| (c, scores_from_confusion(&cms[c.channel()])))
            .collect();
        Self::from_scores(per_class)
    }

    pub fn from_scores(per_class: BTreeMap<PqmClass, ClassScores>) -> Self {
        let mf1 = mean_of(per_class.values().map(|s| s.f1.value));
        let miou = mean_of(per_class.values().map(|s| s.iou.value));
        Self {
            per_class,
            mf1,
            miou,
        }
    }

    pub fn f1(&self, c: PqmClass) -> f64 {
        self.per_class[&c].f1.value
    }

    pub fn iou(&self, c: PqmClass) -> f64 {
        self.per_class[&c].iou.value
    }

    /// Values in the fixed report column order.
    pub fn row(&self) -> [f64; 10] {
        use PqmClass::*;
        [
            self.f1(Tp),
            self.iou(Tp),
            self.f1(Fp),
            self.iou(Fp),
            self.f1(Tn),
            self.iou(Tn),
            self.f1(Fn),
            self.iou(Fn),
            self.mf1,
            self.miou,
        ]
    }
}

/// Arithmetic mean of per-class values (mF1 / mIoU).
pub fn mean_of(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn confusions(pred_q: &QualityMap, gt_q: &QualityMap) -> Result<[BinaryConfusion; 4]> {
    let mut out = [BinaryConfusion::default(); 4];
    for c in PqmClass::ALL {
        out[c.channel()] = per_class_confusion(pred_q, gt_q, c)?;
    }
    Ok(out)
}

pub fn assessment_report(pred_q: &QualityMap, gt_q: &QualityMap) -> Result<AssessmentReport> {
    Ok(AssessmentReport::from_confusions(&confusions(
        pred_q, gt_q,
    )?))
}

/// How scores are combined over several images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum confusion counts over all images, then score once.
    #[default]
    Pooled,
    /// Score each image, then average per-class values.
    PerImage,
}

/// Accumulates (prediction, reference) pairs into one report.
#[derive(Clone, Debug, Default)]
pub struct ReportAccumulator {
    pooled: [BinaryConfusion; 4],
    per_image: Vec<AssessmentReport>,
}

impl ReportAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred_q: &QualityMap, gt_q: &QualityMap) -> Result<AssessmentReport> {
        let cms = confusions(pred_q, gt_q)?;
        for (acc, cm) in self.pooled.iter_mut().zip(cms.iter()) {
            *acc = acc.merge(cm);
        }
        let report = AssessmentReport::from_confusions(&cms);
        self.per_image.push(report.clone());
        Ok(report)
    }

    pub fn len(&self) -> usize {
        self.per_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_image.is_empty()
    }

    pub fn per_image(&self) -> &[AssessmentReport] {
        &self.per_image
    }

    pub fn finish(&self, mode: Aggregation) -> Result<AssessmentReport> {
        if self.per_image.is_empty() {
            return Err(Error::InvalidArgument("no images accumulated".into()));
        }
        Ok(match mode {
            Aggregation::Pooled => AssessmentReport::from_confusions(&self.pooled),
            Aggregation::PerImage => {
                let n = self.per_image.len() as f64;
                let mut per_class = BTreeMap::new();
                for c in PqmClass::ALL {
                    let avg = |get: fn(&ClassScores) -> Score| {
                        let sum: f64 = self
                            .per_image
                            .iter()
                            .map(|r| get(&r.per_class[&c]).value)
                            .sum();
                        let defined = self.per_image.iter().any(|r| get(&r.per_class[&c]).defined);
                        Score {
                            value: sum / n,
                            defined,
                        }
                    };
                    per_class.insert(
                        c,
                        ClassScores {
                            precision: avg(|s| s.precision),
                            recall: avg(|s| s.recall),
                            f1: avg(|s| s.f1),
                            iou: avg(|s| s.iou),
                        },
                    );
                }
                AssessmentReport::from_scores(per_class)
            }
        })
    }
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "F1_TP", "IoU_TP", "F1_FP", "IoU_FP", "F1_TN", "IoU_TN", "F1_FN", "IoU_FN", "mF1", "mIoU",
];

/// Tab-delimited table, one row per labelled report, two decimals.
pub fn format_report_table<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a AssessmentReport)>,
) -> String {
    let mut out = String::from("name");
    for c in REPORT_COLUMNS {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    for (name, report) in rows {
        out.push_str(name);
        for v in report.row() {
            let _ = write!(out, "\t{v:.2}");
        }
        out.push('\n');
    }
    out
}

/// Mean of foreground and background IoU between two binary masks.
pub fn mask_miou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    gt.ensure_same_dims(pred.dims())?;
    let mut inter = [0u64; 2];
    let mut union = [0u64; 2];
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        for cls in 0..2u8 {
            let (pi, gi) = (p == cls, g == cls);
            inter[cls as usize] += (pi && gi) as u64;
            union[cls as usize] += (pi || gi) as u64;
        }
    }
    let iou = |c: usize| {
        if union[c] == 0 {
            0.0
        } else {
            100.0 * inter[c] as f64 / union[c] as f64
        }
    };
    Ok((iou(0) + iou(1)) / 2.0)
}

/// Sample Pearson correlation. `None` when either series has zero variance.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: format!("{} values", x.len()),
            actual: format!("{} values", y.len()),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two observations".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::PqmClass::*;
    use super::*;

    #[test]
    fn confusion_fixtures() {
        let q = QualityMap::from_rows(&[&[Tp, Tp, Fp], &[Tn, Fn, Tp]]).unwrap();
        let cm = per_class_confusion(&q, &q, Tp).unwrap();
        assert_eq!(
            cm,
            BinaryConfusion {
                tp: 3,
                fp: 0,
                fn_: 0,
                tn: 3
            }
        );

        let gt = QualityMap::filled(3, 3, Tn);
        let pred = QualityMap::filled(3, 3, Fp);
        let cm = per_class_confusion(&pred, &gt, Fp).unwrap();
        assert_eq!(
            cm,
            BinaryConfusion {
                tp: 0,
                fp: 9,
                fn_: 0,
                tn: 0
            }
        );

        assert!(per_class_confusion(&QualityMap::filled(2, 2, Tn), &gt, Tn).is_err());
    }

    #[test]
    fn score_fixtures() {
        let s = scores_from_confusion(&BinaryConfusion {
            tp: 5,
            fp: 0,
            fn_: 0,
            tn: 10,
        });
        for v in [s.precision, s.recall, s.f1, s.iou] {
            assert_eq!(v.value, 100.0);
        }

        let s = scores_from_confusion(&BinaryConfusion {
            tp: 1,
            fp: 1,
            fn_: 1,
            tn: 1,
        });
        assert!((s.f1.value - 50.0).abs() < 1e-12);
        assert!((s.iou.value - 100.0 / 3.0).abs() < 1e-12);

        let s = scores_from_confusion(&BinaryConfusion {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 4,
        });
        for v in [s.precision, s.recall, s.f1, s.iou] {
            assert_eq!(v.value, 0.0);
            assert!(!v.defined);
        }

        // tp = 0 with errors present: precision defined (0), recall undefined, F1 = 0.
        let s = scores_from_confusion(&BinaryConfusion {
            tp: 0,
            fp: 3,
            fn_: 0,
            tn: 1,
        });
        assert!(s.precision.defined && !s.recall.defined);
        assert!(s.f1.defined && s.f1.value == 0.0);
    }

    #[test]
    fn perfect_prediction_report() {
        let q = QualityMap::from_rows(&[&[Tp, Fp], &[Fn, Tn]]).unwrap();
        let r = assessment_report(&q, &q).unwrap();
        assert_eq!(r.mf1, 100.0);
        assert_eq!(r.miou, 100.0);
    }

    #[test]
    fn mask_miou_fixtures() {
        let gt = BinaryMask::from_rows(&[[1, 1], [0, 0]]).unwrap();
        assert_eq!(mask_miou(&gt, &gt).unwrap(), 100.0);
        assert_eq!(mask_miou(&gt.complement(), &gt).unwrap(), 0.0);

        // fg: |P∩G| = 2, |P∪G| = 6; bg: 6 ∩, 10 ∪ → (1/3 + 3/5) / 2.
        let gt = BinaryMask::from_fn(3, 4, |y, _| y == 0);
        let pred = BinaryMask::from_fn(3, 4, |y, x| (y == 0 && x >= 2) || (y == 1 && x < 2));
        let v = mask_miou(&pred, &gt).unwrap();
        assert!((v - 100.0 * (1.0 / 3.0 + 3.0 / 5.0) / 2.0).abs() < 1e-12);
        assert!((v - 46.67).abs() < 0.005);
    }

    #[test]
    fn pearson_fixtures() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_correlation(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_correlation(&x, &y).unwrap().unwrap() + 1.0).abs() < 1e-12);
        let r = pearson_correlation(&x, &[2.0, 1.0, 4.0, 3.0])
            .unwrap()
            .unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        assert_eq!(pearson_correlation(&x, &[1.0; 4]).unwrap(), None);
        assert!(pearson_correlation(&x, &[1.0; 3]).is_err());
    }

    #[test]
    fn table_has_fixed_columns() {
        let q = QualityMap::filled(2, 2, Tp);
        let r = assessment_report(&q, &q).unwrap();
        let t = format_report_table([("a", &r)]);
        let mut lines = t.lines();
        assert_eq!(
            lines.next().unwrap(),
            "name\tF1_TP\tIoU_TP\tF1_FP\tIoU_FP\tF1_TN\tIoU_TN\tF1_FN\tIoU_FN\tmF1\tmIoU"
        );
        assert!(lines.next().unwrap().starts_with("a\t100.00\t100.00\t0.00"));
    }

    #[test]
    fn per_image_vs_pooled_aggregation() {
        let a = QualityMap::from_rows(&[&[Tp, Tn]]).unwrap();
        let b = QualityMap::from_rows(&[&[Tp, Tp]]).unwrap();
        let mut acc = ReportAccumulator::new();
        acc.add(&a, &a).unwrap();
        acc.add(&b, &a).unwrap();
        let pooled = acc.finish(Aggregation::Pooled).unwrap();
        let per_image = acc.finish(Aggregation::PerImage).unwrap();
        // Pooled TP: tp=2, fp=1 → F1 = 4/5.
        assert!((pooled.f1(Tp) - 80.0).abs() < 1e-12);
        // Per-image TP F1: (100 + 2/3·100) / 2.
        assert!((per_image.f1(Tp) - (100.0 + 200.0 / 3.0) / 2.0).abs() < 1e-12);
    }
}
