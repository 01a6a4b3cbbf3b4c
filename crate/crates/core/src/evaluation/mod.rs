//! Running predictors over a dataset split and reporting the results.

mod grade;
mod overlay;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{Dataset, Split};
use crate::metrics::{aggregate_rows, evaluate_image, AggregateReport, AggregationMode, EvalRow};
use crate::modelhub::PredictorHandle;
use crate::{Error, Result};

pub use grade::{
    comparison_table, grade_prediction, grade_split, read_grades, write_grades, Grade, GradeValue, SystemGrades,
    DEFAULT_MIN_OVERLAP,
};
pub use overlay::{palette, render_overlay};
pub use report::{
    per_class_breakdown, read_rows, render_per_class_csv, render_report_csv, render_report_text, write_rows,
    ClassBreakdown, ReportHeader,
};

pub const ROWS_FILE: &str = "rows.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const PER_CLASS_CSV: &str = "per_class.csv";
pub const OVERLAY_DIR: &str = "overlays";

/// One evaluation run: which predictor, on which split, written where.
#[derive(Clone, Debug)]
pub struct ExperimentSpec<'a> {
    pub predictor: &'a PredictorHandle,
    pub split: Split,
    pub dataset: &'a Dataset,
    pub output_path: PathBuf,
    /// Recorded in the report; predictors are deterministic so it does not
    /// change the result.
    pub seed: u64,
    pub aggregation: AggregationMode,
    pub overlays: bool,
}

impl<'a> ExperimentSpec<'a> {
    pub fn new(predictor: &'a PredictorHandle, dataset: &'a Dataset, split: Split, output_path: impl Into<PathBuf>) -> Self {
        Self {
            predictor,
            split,
            dataset,
            output_path: output_path.into(),
            seed: 0,
            aggregation: AggregationMode::default(),
            overlays: false,
        }
    }
}

/// An image left out of the run, with the reason.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exception {
    pub image_id: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: AggregateReport,
    /// Ordered by image id, then class id.
    pub rows: Vec<EvalRow>,
    pub exceptions: Vec<Exception>,
    pub header: ReportHeader,
}

enum ImageResult {
    Rows(Vec<EvalRow>),
    Skipped(Exception),
}

/// Evaluates every image of the split and writes `rows.csv`, `report.csv`,
/// `report.txt`, `per_class.csv` and optionally `overlays/` to the output path.
///
/// Images whose ground-truth mask is missing are listed as exceptions and
/// excluded; predictor failures abort the run.
pub fn run_experiment(spec: &ExperimentSpec<'_>) -> Result<ExperimentOutcome> {
    let dataset = spec.dataset;
    let taxonomy = dataset.taxonomy();
    let records: Vec<_> = dataset.index.in_split(spec.split).collect();
    if records.is_empty() {
        return Err(Error::validation(format!("split {} has no images", spec.split)));
    }
    let out = &spec.output_path;
    create_dir(out)?;
    if spec.overlays {
        create_dir(&out.join(OVERLAY_DIR))?;
    }

    let results = records
        .par_iter()
        .map(|record| {
            let id = &record.image_id;
            let mask_path = dataset.mask_path(id);
            if !mask_path.exists() {
                return Ok(ImageResult::Skipped(Exception {
                    image_id: id.clone(),
                    reason: format!("missing mask {}", mask_path.display()),
                }));
            }
            let gt = dataset.load_mask(id)?;
            let image = match dataset.load_image(id) {
                Ok(image) => image,
                Err(e) => {
                    return Ok(ImageResult::Skipped(Exception {
                        image_id: id.clone(),
                        reason: format!("unreadable image: {e}"),
                    }))
                }
            };
            let pred = spec.predictor.predict(&image)?;
            if spec.overlays {
                let overlay = render_overlay(&image, &pred, taxonomy)?;
                overlay.save(out.join(OVERLAY_DIR).join(format!("{id}.png")))?;
            }
            let rows = evaluate_image(&pred.label_mask, &gt, taxonomy)?
                .into_iter()
                .map(|(class_id, e)| EvalRow {
                    image_id: id.clone(),
                    class_id,
                    counts: e.counts,
                    metrics: e.metrics,
                })
                .collect();
            Ok(ImageResult::Rows(rows))
        })
        .collect::<Result<Vec<_>>>()?;

    // records are sorted by id, and par_iter().collect() keeps their order
    let mut rows = Vec::new();
    let mut exceptions = Vec::new();
    for r in results {
        match r {
            ImageResult::Rows(r) => rows.extend(r),
            ImageResult::Skipped(e) => {
                log::warn!("skipping {}: {}", e.image_id, e.reason);
                exceptions.push(e);
            }
        }
    }

    let header = ReportHeader {
        model: spec.predictor.name().to_string(),
        digest: spec.predictor.digest(),
        split: spec.split.to_string(),
        seed: spec.seed,
        aggregation: spec.aggregation,
    };
    let report = aggregate_rows(&rows, spec.aggregation);
    write_outputs(out, &header, &report, &rows, &exceptions, taxonomy)?;
    Ok(ExperimentOutcome {
        report,
        rows,
        exceptions,
        header,
    })
}

/// Re-aggregates persisted rows without running inference again.
pub fn replay_rows(
    rows_path: &Path,
    header: &ReportHeader,
    taxonomy: &crate::dataset::ClassTaxonomy,
) -> Result<(AggregateReport, String)> {
    let rows = read_rows(rows_path, taxonomy)?;
    let report = aggregate_rows(&rows, header.aggregation);
    let text = render_report_text(header, &report, &rows, &[], taxonomy);
    Ok((report, text))
}

fn write_outputs(
    out: &Path,
    header: &ReportHeader,
    report: &AggregateReport,
    rows: &[EvalRow],
    exceptions: &[Exception],
    taxonomy: &crate::dataset::ClassTaxonomy,
) -> Result<()> {
    write_rows(&out.join(ROWS_FILE), rows, taxonomy)?;
    write_text(&out.join(REPORT_CSV), &render_report_csv(header, report, taxonomy))?;
    write_text(
        &out.join(REPORT_TXT),
        &render_report_text(header, report, rows, exceptions, taxonomy),
    )?;
    write_text(&out.join(PER_CLASS_CSV), &render_per_class_csv(rows, taxonomy))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
