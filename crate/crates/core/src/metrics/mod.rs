//! Binary per-class segmentation metrics.
//!
//! For one class, a pixel is a true positive when both masks carry the class,
//! a false positive when only the prediction does, a false negative when only
//! the ground truth does, and a true negative otherwise. Ratios with a zero
//! denominator are undefined (`None`), never 0 or 1.

mod aggregate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use aggregate::{
    aggregate, aggregate_rows, format_mean_std, AggregateReport, AggregationMode, EvalRow, Metric,
    MetricStats, Stats,
};

use crate::dataset::{ClassId, ClassTaxonomy, LabelMask};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts with prediction and ground truth exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tp,
            fp: self.fn_,
            tn: self.tn,
            fn_: self.fp,
        }
    }

    /// The class appears in neither mask.
    pub fn is_absent(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn check_dims(pred: &LabelMask, gt: &LabelMask) -> Result<()> {
    if pred.dimensions() != gt.dimensions() {
        return Err(Error::validation(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dimensions(),
            gt.dimensions()
        )));
    }
    Ok(())
}

pub fn confusion(pred: &LabelMask, gt: &LabelMask, class: ClassId) -> Result<ConfusionCounts> {
    check_dims(pred, gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        match (p == class, g == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[inline]
fn ratio(num: u64, den: u64) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

/// Jaccard index `TP / (TP + FN + FP)`.
pub fn iou(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_ + c.fp)
}

/// Precision `TP / (TP + FP)`.
pub fn ppv(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp)
}

/// Recall `TP / (TP + FN)`.
pub fn sensitivity(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_)
}

/// `TN / (TN + FP)`.
pub fn specificity(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tn, c.tn + c.fp)
}

/// Mean of sensitivity and specificity; undefined if either input is.
pub fn balanced_accuracy(se: Option<f64>, sp: Option<f64>) -> Option<f64> {
    Some((se? + sp?) / 2.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub iou: Option<f64>,
    pub ppv: Option<f64>,
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub bac: Option<f64>,
}

impl MetricValues {
    pub const UNDEFINED: MetricValues = MetricValues {
        iou: None,
        ppv: None,
        se: None,
        sp: None,
        bac: None,
    };

    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let se = sensitivity(c);
        let sp = specificity(c);
        Self {
            iou: iou(c),
            ppv: ppv(c),
            se,
            sp,
            bac: balanced_accuracy(se, sp),
        }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Iou => self.iou,
            Metric::Se => self.se,
            Metric::Sp => self.sp,
            Metric::Bac => self.bac,
            Metric::Ppv => self.ppv,
        }
    }
}

/// Counts and metrics of one food class on one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassEvaluation {
    pub counts: ConfusionCounts,
    pub metrics: MetricValues,
}

/// Scores every food class of the taxonomy on one prediction.
///
/// Classes present in neither mask get all-undefined metrics.
pub fn evaluate_image(
    pred: &LabelMask,
    gt: &LabelMask,
    taxonomy: &ClassTaxonomy,
) -> Result<BTreeMap<ClassId, ClassEvaluation>> {
    check_dims(pred, gt)?;
    pred.check_taxonomy(taxonomy)?;
    gt.check_taxonomy(taxonomy)?;

    // one pass: joint histogram of (pred, gt) labels
    let k = taxonomy.num_labels();
    let mut joint = vec![0u64; k * k];
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        joint[usize::from(p) * k + usize::from(g)] += 1;
    }
    let total = pred.len() as u64;

    Ok(taxonomy
        .food_ids()
        .map(|class| {
            let c = usize::from(class);
            let tp = joint[c * k + c];
            let pred_pos: u64 = joint[c * k..(c + 1) * k].iter().sum();
            let gt_pos: u64 = (0..k).map(|p| joint[p * k + c]).sum();
            let counts = ConfusionCounts {
                tp,
                fp: pred_pos - tp,
                fn_: gt_pos - tp,
                tn: total + tp - pred_pos - gt_pos,
            };
            let metrics = if counts.is_absent() {
                MetricValues::UNDEFINED
            } else {
                MetricValues::from_counts(&counts)
            };
            (class, ClassEvaluation { counts, metrics })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(w: u32, h: u32, v: &[u8]) -> LabelMask {
        LabelMask::from_values(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn absent_class_is_all_true_negative() {
        let m = LabelMask::new(3, 3);
        assert_eq!(confusion(&m, &m, 1).unwrap(), ConfusionCounts::new(0, 0, 9, 0));
    }

    #[test]
    fn left_column_vs_top_row() {
        // gt: class 1 in left column; pred: class 1 in top row
        let gt = mask(2, 2, &[1, 0, 1, 0]);
        let pred = mask(2, 2, &[1, 1, 0, 0]);
        assert_eq!(confusion(&pred, &gt, 1).unwrap(), ConfusionCounts::new(1, 1, 1, 1));
    }

    #[test]
    fn perfect_match_has_no_errors() {
        let m = mask(2, 2, &[2, 2, 0, 1]);
        let c = confusion(&m, &m, 2).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(confusion(&LabelMask::new(2, 2), &LabelMask::new(2, 3), 1).is_err());
    }

    #[test]
    fn metric_arithmetic() {
        assert_eq!(iou(&ConfusionCounts::new(6, 2, 0, 4)), Some(0.5));
        assert_eq!(iou(&ConfusionCounts::new(0, 0, 5, 0)), None);
        assert_eq!(ppv(&ConfusionCounts::new(3, 1, 0, 0)), Some(0.75));
        assert_eq!(ppv(&ConfusionCounts::new(0, 0, 3, 2)), None);
        assert_eq!(sensitivity(&ConfusionCounts::new(4, 0, 0, 1)), Some(0.8));
        assert_eq!(sensitivity(&ConfusionCounts::new(0, 3, 3, 0)), None);
        assert_eq!(specificity(&ConfusionCounts::new(0, 1, 9, 0)), Some(0.9));
        // all-foreground: no negatives at all
        assert_eq!(specificity(&ConfusionCounts::new(4, 0, 0, 0)), None);
        assert_eq!(specificity(&ConfusionCounts::new(0, 0, 4, 0)), Some(1.0));
    }

    #[test]
    fn balanced_accuracy_cases() {
        let bac = balanced_accuracy(Some(0.81), Some(0.99)).unwrap();
        assert!((bac - 0.90).abs() < 0.005);
        assert_eq!(balanced_accuracy(Some(1.0), Some(1.0)), Some(1.0));
        assert_eq!(balanced_accuracy(Some(0.0), Some(1.0)), Some(0.5));
        assert_eq!(balanced_accuracy(None, Some(1.0)), None);
    }

    #[test]
    fn perfect_prediction_scores_ones() {
        let t = ClassTaxonomy::brazilian_food();
        let gt = LabelMask::from_fn(6, 6, |x, y| if x < 3 { 2 } else if y < 2 { 7 } else { 0 });
        let eval = evaluate_image(&gt, &gt, &t).unwrap();
        for (class, e) in &eval {
            if *class == 2 || *class == 7 {
                for m in Metric::ALL {
                    assert_eq!(e.metrics.get(m), Some(1.0), "class {class} {m:?}");
                }
            } else {
                assert_eq!(e.metrics, MetricValues::UNDEFINED);
            }
        }
    }

    #[test]
    fn total_miss() {
        let t = ClassTaxonomy::brazilian_food();
        let gt = LabelMask::from_fn(4, 4, |x, _| if x < 2 { 2 } else { 0 });
        let eval = evaluate_image(&LabelMask::new(4, 4), &gt, &t).unwrap();
        let m = eval[&2].metrics;
        assert_eq!(m.iou, Some(0.0));
        assert_eq!(m.se, Some(0.0));
        assert_eq!(m.ppv, None);
    }

    #[test]
    fn class_covering_both_masks() {
        let t = ClassTaxonomy::brazilian_food();
        let full = LabelMask::filled(4, 4, 3);
        let eval = evaluate_image(&full, &full, &t).unwrap();
        assert_eq!(eval[&3].counts, ConfusionCounts::new(16, 0, 0, 0));
        assert_eq!(eval[&3].metrics.sp, None);
        let half = LabelMask::from_fn(4, 4, |x, _| if x < 2 { 3 } else { 0 });
        let eval = evaluate_image(&full, &half, &t).unwrap();
        assert_eq!(eval[&3].counts, ConfusionCounts::new(8, 8, 0, 0));
    }

    fn arb_pair() -> impl Strategy<Value = (LabelMask, LabelMask)> {
        (1u32..=16, 1u32..=16).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                proptest::collection::vec(0u8..=9, n),
                proptest::collection::vec(0u8..=9, n),
            )
                .prop_map(move |(a, b)| {
                    (
                        LabelMask::from_values(w, h, a).unwrap(),
                        LabelMask::from_values(w, h, b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn metric_invariants((pred, gt) in arb_pair(), class in 1u8..=9) {
            let c = confusion(&pred, &gt, class).unwrap();
            prop_assert_eq!(c.total(), pred.len() as u64);
            let m = MetricValues::from_counts(&c);
            for v in [m.iou, m.ppv, m.se, m.sp, m.bac].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let (Some(i), Some(p)) = (m.iou, m.ppv) { prop_assert!(i <= p); }
            if let (Some(i), Some(s)) = (m.iou, m.se) { prop_assert!(i <= s); }
            if let (Some(se), Some(sp), Some(bac)) = (m.se, m.sp, m.bac) {
                prop_assert_eq!(bac, (se + sp) / 2.0);
            }
        }

        #[test]
        fn swapping_masks_swaps_errors((pred, gt) in arb_pair(), class in 1u8..=9) {
            let ab = confusion(&pred, &gt, class).unwrap();
            let ba = confusion(&gt, &pred, class).unwrap();
            prop_assert_eq!(ba, ab.swapped());
            prop_assert_eq!(iou(&ab), iou(&ba));
            prop_assert_eq!(ppv(&ab), sensitivity(&ba));
            prop_assert_eq!(sensitivity(&ab), ppv(&ba));
        }

        #[test]
        fn evaluate_image_matches_confusion((pred, gt) in arb_pair()) {
            let t = ClassTaxonomy::brazilian_food();
            let eval = evaluate_image(&pred, &gt, &t).unwrap();
            for (class, e) in eval {
                let c = confusion(&pred, &gt, class).unwrap();
                prop_assert_eq!(e.counts, c);
                if !c.is_absent() {
                    prop_assert_eq!(e.metrics, MetricValues::from_counts(&c));
                }
            }
        }
    }
}
