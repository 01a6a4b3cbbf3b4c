use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ConfusionCounts, MetricValues};
use crate::dataset::ClassId;

/// The five reported metrics, in report column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Iou,
    Se,
    Sp,
    Bac,
    Ppv,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Iou, Metric::Se, Metric::Sp, Metric::Bac, Metric::Ppv];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Iou => "IoU",
            Metric::Se => "SE",
            Metric::Sp => "SP",
            Metric::Bac => "BAC",
            Metric::Ppv => "PPV",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Metric::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// Mean and population standard deviation over `n` defined samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stats {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

/// Per-metric statistics plus the number of undefined samples left out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    stats: [Option<Stats>; 5],
    undefined: [usize; 5],
}

impl MetricStats {
    pub fn get(&self, metric: Metric) -> Option<Stats> {
        self.stats[metric.index()]
    }

    pub fn undefined(&self, metric: Metric) -> usize {
        self.undefined[metric.index()]
    }

    fn from_samples<'a>(samples: impl Iterator<Item = &'a MetricValues> + Clone) -> Self {
        let mut out = MetricStats::default();
        for metric in Metric::ALL {
            let defined: Vec<f64> = samples.clone().filter_map(|m| m.get(metric)).collect();
            out.undefined[metric.index()] = samples.clone().count() - defined.len();
            out.stats[metric.index()] = Stats::from_values(&defined);
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub per_class: BTreeMap<ClassId, MetricStats>,
    pub overall: MetricStats,
    /// Number of (image, class) samples that went in.
    pub samples: usize,
}

/// Pools per-(image, class) samples: each metric's mean and population std
/// are taken over its defined samples only.
pub fn aggregate(samples: &[(ClassId, MetricValues)]) -> AggregateReport {
    let mut by_class: BTreeMap<ClassId, Vec<MetricValues>> = BTreeMap::new();
    for (class, values) in samples {
        by_class.entry(*class).or_default().push(*values);
    }
    AggregateReport {
        per_class: by_class
            .iter()
            .map(|(c, v)| (*c, MetricStats::from_samples(v.iter())))
            .collect(),
        overall: MetricStats::from_samples(samples.iter().map(|(_, v)| v)),
        samples: samples.len(),
    }
}

/// One evaluated (image, class) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image_id: String,
    pub class_id: ClassId,
    pub counts: ConfusionCounts,
    pub metrics: MetricValues,
}

/// How per-image results are pooled into the overall figure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    /// Every (image, class) sample counts once.
    #[default]
    ImageClass,
    /// Classes are averaged within each image first; statistics run over images.
    PerImage,
    /// Confusion counts are summed per class over all images; statistics run
    /// over classes.
    PooledPixels,
}

impl std::str::FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "image-class" => Ok(Self::ImageClass),
            "per-image" => Ok(Self::PerImage),
            "pooled-pixels" => Ok(Self::PooledPixels),
            _ => Err(format!(
                "unknown aggregation {s:?} (image-class, per-image, pooled-pixels)"
            )),
        }
    }
}

pub fn aggregate_rows(rows: &[EvalRow], mode: AggregationMode) -> AggregateReport {
    let samples: Vec<(ClassId, MetricValues)> = rows.iter().map(|r| (r.class_id, r.metrics)).collect();
    match mode {
        AggregationMode::ImageClass => aggregate(&samples),
        AggregationMode::PerImage => {
            let mut by_image: BTreeMap<&str, Vec<MetricValues>> = BTreeMap::new();
            for r in rows {
                by_image.entry(&r.image_id).or_default().push(r.metrics);
            }
            let image_means: Vec<MetricValues> = by_image
                .values()
                .map(|v| {
                    let mean = |m: Metric| {
                        let d: Vec<f64> = v.iter().filter_map(|x| x.get(m)).collect();
                        Stats::from_values(&d).map(|s| s.mean)
                    };
                    MetricValues {
                        iou: mean(Metric::Iou),
                        ppv: mean(Metric::Ppv),
                        se: mean(Metric::Se),
                        sp: mean(Metric::Sp),
                        bac: mean(Metric::Bac),
                    }
                })
                .collect();
            AggregateReport {
                overall: MetricStats::from_samples(image_means.iter()),
                ..aggregate(&samples)
            }
        }
        AggregationMode::PooledPixels => {
            let mut sums: BTreeMap<ClassId, ConfusionCounts> = BTreeMap::new();
            for r in rows {
                let e = sums.entry(r.class_id).or_default();
                *e = *e + r.counts;
            }
            let per_class: Vec<(ClassId, MetricValues)> = sums
                .into_iter()
                .map(|(c, counts)| {
                    let m = if counts.is_absent() {
                        MetricValues::UNDEFINED
                    } else {
                        MetricValues::from_counts(&counts)
                    };
                    (c, m)
                })
                .collect();
            AggregateReport {
                samples: rows.len(),
                ..aggregate(&per_class)
            }
        }
    }
}

/// Renders `mean(std)`: mean to two decimals, std to one significant digit.
/// Undefined statistics render as `n/a`.
pub fn format_mean_std(stats: Option<Stats>) -> String {
    match stats {
        None => "n/a".to_string(),
        Some(s) => format!("{:.2}({})", s.mean, format_std(s.std)),
    }
}

fn format_std(std: f64) -> String {
    // below this it is accumulated rounding, not spread
    if std.is_nan() || std <= 1e-9 {
        return "0.0".to_string();
    }
    let decimals = |x: f64| (-x.log10().floor()).max(1.0) as i32;
    let d = decimals(std);
    let scale = 10f64.powi(d);
    let rounded = (std * scale).round() / scale;
    // rounding can carry into the next digit (0.096 -> 0.10 -> 0.1)
    format!("{:.*}", decimals(rounded) as usize, rounded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iou_only(v: f64) -> MetricValues {
        MetricValues {
            iou: Some(v),
            ..MetricValues::UNDEFINED
        }
    }

    #[test]
    fn constant_samples() {
        let r = aggregate(&[(1, iou_only(0.7)), (2, iou_only(0.7)), (1, iou_only(0.7))]);
        let s = r.overall.get(Metric::Iou).unwrap();
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert!(s.std.abs() < 1e-12);
        assert_eq!(format_mean_std(Some(s)), "0.70(0.0)");
    }

    #[test]
    fn two_samples() {
        let r = aggregate(&[(1, iou_only(0.6)), (1, iou_only(0.8))]);
        let s = r.overall.get(Metric::Iou).unwrap();
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert!((s.std - 0.1).abs() < 1e-12);
        assert_eq!(s.n, 2);
        assert_eq!(format_mean_std(Some(s)), "0.70(0.1)");
        assert_eq!(r.overall.undefined(Metric::Se), 2);
        assert_eq!(r.overall.get(Metric::Se), None);
    }

    #[test]
    fn empty_is_undefined() {
        let r = aggregate(&[]);
        for m in Metric::ALL {
            assert_eq!(r.overall.get(m), None);
        }
        assert_eq!(format_mean_std(None), "n/a");
    }

    #[test]
    fn std_formatting_follows_table_style() {
        let f = |mean, std| format_mean_std(Some(Stats { mean, std, n: 2 }));
        assert_eq!(f(0.99, 0.02), "0.99(0.02)");
        assert_eq!(f(0.87, 0.091), "0.87(0.09)");
        assert_eq!(f(0.9, 0.0999999), "0.90(0.1)");
        assert_eq!(f(0.5, 0.26), "0.50(0.3)");
        assert_eq!(f(0.5, 0.0096), "0.50(0.01)");
    }

    fn row(image: &str, class: ClassId, counts: ConfusionCounts) -> EvalRow {
        EvalRow {
            image_id: image.into(),
            class_id: class,
            counts,
            metrics: MetricValues::from_counts(&counts),
        }
    }

    #[test]
    fn aggregation_modes_differ_as_expected() {
        let rows = vec![
            row("a", 1, ConfusionCounts::new(1, 0, 3, 0)), // iou 1
            row("a", 2, ConfusionCounts::new(0, 1, 3, 0)), // iou 0
            row("b", 1, ConfusionCounts::new(1, 1, 0, 2)), // iou 0.25
        ];
        let ic = aggregate_rows(&rows, AggregationMode::ImageClass);
        assert!((ic.overall.get(Metric::Iou).unwrap().mean - 1.25 / 3.0).abs() < 1e-12);
        let pi = aggregate_rows(&rows, AggregationMode::PerImage);
        // image a: 0.5, image b: 0.25
        assert!((pi.overall.get(Metric::Iou).unwrap().mean - 0.375).abs() < 1e-12);
        let pp = aggregate_rows(&rows, AggregationMode::PooledPixels);
        // class 1 pooled: tp 2, fp 1, fn 2 -> 0.4 ; class 2: 0
        assert!((pp.overall.get(Metric::Iou).unwrap().mean - 0.2).abs() < 1e-12);
        assert_eq!(pp.overall.get(Metric::Iou).unwrap().n, 2);
    }
}
