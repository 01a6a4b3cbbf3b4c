use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, ClassTaxonomy};
use crate::metrics::{format_mean_std, AggregateReport, AggregationMode, ConfusionCounts, EvalRow, Metric, MetricStats, MetricValues, Stats};
use crate::{Error, Result};

use super::Exception;

/// Identifies a run in every report it produces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub model: String,
    pub digest: String,
    pub split: String,
    pub seed: u64,
    pub aggregation: AggregationMode,
}

/// Per-class IoU for bar charts. `iou` is `None` when the class has no
/// defined sample (no data), which is distinct from a mean of 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBreakdown {
    pub name: String,
    pub iou: Option<Stats>,
}

pub fn per_class_breakdown(rows: &[EvalRow], taxonomy: &ClassTaxonomy) -> BTreeMap<ClassId, ClassBreakdown> {
    taxonomy
        .food_ids()
        .map(|class| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.class_id == class)
                .filter_map(|r| r.metrics.iou)
                .collect();
            let name = class_name(taxonomy, class);
            (class, ClassBreakdown { name, iou: Stats::from_values(&values) })
        })
        .collect()
}

const ROW_HEADER: [&str; 11] = ["image_id", "class", "tp", "fp", "tn", "fn", "iou", "ppv", "se", "sp", "bac"];

/// Writes one line per (image, class) with raw counts; metrics are derived
/// from the counts again on read.
pub fn write_rows(path: &Path, rows: &[EvalRow], taxonomy: &ClassTaxonomy) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ROW_HEADER)?;
    for r in rows {
        let c = &r.counts;
        let m = &r.metrics;
        w.write_record([
            r.image_id.clone(),
            class_name(taxonomy, r.class_id),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            fixed(m.iou),
            fixed(m.ppv),
            fixed(m.se),
            fixed(m.sp),
            fixed(m.bac),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows(path: &Path, taxonomy: &ClassTaxonomy) -> Result<Vec<EvalRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let entry = || format!("{}:{}", path.display(), i + 2);
        let field = |k: usize| record.get(k).unwrap_or("");
        let count = |k: usize| {
            field(k).parse::<u64>().map_err(|e| Error::Parse {
                entry: entry(),
                message: format!("{}: {e}", ROW_HEADER[k]),
            })
        };
        let class_id = taxonomy.id_of(field(1)).ok_or_else(|| Error::Taxonomy {
            names: vec![field(1).to_string()],
        })?;
        let counts = ConfusionCounts::new(count(2)?, count(3)?, count(4)?, count(5)?);
        let metrics = if counts.is_absent() {
            MetricValues::UNDEFINED
        } else {
            MetricValues::from_counts(&counts)
        };
        rows.push(EvalRow {
            image_id: field(0).to_string(),
            class_id,
            counts,
            metrics,
        });
    }
    Ok(rows)
}

/// `model,class,metric,mean,std,n`, one line per class and metric, then the
/// overall lines.
pub fn render_report_csv(header: &ReportHeader, report: &AggregateReport, taxonomy: &ClassTaxonomy) -> String {
    let mut out = String::from("model,class,metric,mean,std,n\n");
    let mut emit = |class: &str, stats: &MetricStats| {
        for m in Metric::ALL {
            let s = stats.get(m);
            let (mean, std, n) = match s {
                Some(s) => (format!("{:.6}", s.mean), format!("{:.6}", s.std), s.n),
                None => (String::new(), String::new(), 0),
            };
            let _ = writeln!(out, "{},{},{},{},{},{}", csv_field(&header.model), csv_field(class), m.label(), mean, std, n);
        }
    };
    for (class, stats) in &report.per_class {
        emit(&class_name(taxonomy, *class), stats);
    }
    emit("overall", &report.overall);
    out
}

/// Human-readable report: run header, the summary table, a per-class table
/// and the exceptions list.
pub fn render_report_text(
    header: &ReportHeader,
    report: &AggregateReport,
    rows: &[EvalRow],
    exceptions: &[Exception],
    taxonomy: &ClassTaxonomy,
) -> String {
    let images: BTreeSet<&str> = rows.iter().map(|r| r.image_id.as_str()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "model:       {}", header.model);
    let _ = writeln!(out, "digest:      {}", header.digest);
    let _ = writeln!(out, "split:       {}", header.split);
    let _ = writeln!(out, "seed:        {}", header.seed);
    let _ = writeln!(out, "aggregation: {}", aggregation_label(header.aggregation));
    let _ = writeln!(out, "images:      {}", images.len());
    let _ = writeln!(out, "samples:     {}", report.samples);
    out.push('\n');

    let metric_cells = |stats: &MetricStats| Metric::ALL.map(|m| format_mean_std(stats.get(m)));
    let mut summary = vec![header_row("Model")];
    summary.push(
        std::iter::once(header.model.clone())
            .chain(metric_cells(&report.overall))
            .collect(),
    );
    out.push_str(&table(&summary));
    out.push('\n');

    let mut per_class = vec![header_row("Class")];
    per_class[0].push("n".into());
    for class in taxonomy.food_ids() {
        let mut row = vec![class_name(taxonomy, class)];
        match report.per_class.get(&class) {
            Some(stats) => {
                row.extend(metric_cells(stats));
                row.push(stats.get(Metric::Iou).map_or(0, |s| s.n).to_string());
            }
            None => {
                row.extend(Metric::ALL.map(|_| "n/a".to_string()));
                row.push("0".into());
            }
        }
        per_class.push(row);
    }
    out.push_str(&table(&per_class));

    if !exceptions.is_empty() {
        out.push_str("\nExceptions\n");
        for e in exceptions {
            let _ = writeln!(out, "- {}: {}", e.image_id, e.reason);
        }
    }
    out
}

/// `class,iou_mean,iou_std,n,status`; status is `no-data` when no sample of
/// the class had a defined IoU.
pub fn render_per_class_csv(rows: &[EvalRow], taxonomy: &ClassTaxonomy) -> String {
    let mut out = String::from("class,iou_mean,iou_std,n,status\n");
    for b in per_class_breakdown(rows, taxonomy).values() {
        let _ = match b.iou {
            Some(s) => writeln!(out, "{},{:.6},{:.6},{},ok", csv_field(&b.name), s.mean, s.std, s.n),
            None => writeln!(out, "{},,,0,no-data", csv_field(&b.name)),
        };
    }
    out
}

fn header_row(first: &str) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain(Metric::ALL.map(|m| m.label().to_string()))
        .collect()
}

fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-|-"));
            out.push('\n');
        }
    }
    out
}

fn aggregation_label(mode: AggregationMode) -> &'static str {
    match mode {
        AggregationMode::ImageClass => "image-class",
        AggregationMode::PerImage => "per-image",
        AggregationMode::PooledPixels => "pooled-pixels",
    }
}

fn class_name(taxonomy: &ClassTaxonomy, class: ClassId) -> String {
    taxonomy.name(class).map_or_else(|| format!("class{class}"), str::to_string)
}

fn fixed(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
