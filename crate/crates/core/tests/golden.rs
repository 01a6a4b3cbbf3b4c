//! Byte-level regression checks against committed files.
//!
//! Set `UPDATE_GOLDEN=1` to regenerate the files under `fixtures/golden`,
//! then review the diff before committing.

use std::path::{Path, PathBuf};

use image::RgbImage;
use myfood_core::dataset::synthetic::{generate, write_fixture, SyntheticConfig};
use myfood_core::dataset::{split_dataset, ClassTaxonomy, LabelMask, Split, SplitRatios};
use myfood_core::evaluation::{render_overlay, replay_rows, run_experiment, ExperimentSpec, ReportHeader, REPORT_TXT, ROWS_FILE};
use myfood_core::metrics::AggregationMode;
use myfood_core::modelhub::{oracle_predictor, PredictionOutput, Predictor, PredictorHandle, PredictorKind};
use myfood_core::Result;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden")
}

fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

/// Oracle output moved right by a few pixels, so the metrics are not trivial.
struct Shifted(PredictorHandle);

impl Predictor for Shifted {
    fn predict(&self, image: &RgbImage) -> Result<PredictionOutput> {
        let m = self.0.predict(image)?.label_mask;
        Ok(PredictionOutput::from_mask(LabelMask::from_fn(m.width(), m.height(), |x, y| {
            if x >= 3 {
                m.get(x - 3, y)
            } else {
                0
            }
        })))
    }

    fn digest(&self) -> String {
        "fixture".into()
    }
}

fn header() -> ReportHeader {
    ReportHeader {
        model: "shifted-oracle".into(),
        digest: "fixture".into(),
        split: "test".into(),
        seed: 0,
        aggregation: AggregationMode::ImageClass,
    }
}

#[test]
fn replayed_rows_reproduce_the_report() {
    let dir = golden_dir();
    let taxonomy = ClassTaxonomy::brazilian_food();
    if updating() {
        let tmp = tempfile::tempdir().unwrap();
        let config = SyntheticConfig {
            count: 12,
            side: 64,
            seed: 11,
            ..SyntheticConfig::default()
        };
        let mut ds = write_fixture(&tmp.path().join("data"), &taxonomy, &config).unwrap();
        ds.index = split_dataset(&ds.index, SplitRatios::new(0.25, 0.25, 0.5).unwrap(), 0).unwrap();
        let oracle = oracle_predictor(&ds).unwrap();
        let shifted = PredictorHandle::new("shifted-oracle", PredictorKind::Oracle, None, Shifted(oracle));
        let spec = ExperimentSpec::new(&shifted, &ds, Split::Test, tmp.path().join("out"));
        run_experiment(&spec).unwrap();
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::copy(tmp.path().join("out").join(ROWS_FILE), dir.join("rows.csv")).unwrap();
        std::fs::copy(tmp.path().join("out").join(REPORT_TXT), dir.join("report.txt")).unwrap();
    }
    let (_, text) = replay_rows(&dir.join("rows.csv"), &header(), &taxonomy).unwrap();
    let golden = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    assert_eq!(text, golden);
}

#[test]
fn oracle_overlay_matches_the_committed_render() {
    let taxonomy = ClassTaxonomy::brazilian_food();
    let config = SyntheticConfig {
        count: 1,
        side: 128,
        seed: 5,
        min_shapes: 3,
        max_shapes: 3,
        ..SyntheticConfig::default()
    };
    let (index, images) = generate(&taxonomy, &config).unwrap();
    let pred = PredictionOutput::from_mask(index.records[0].ground_truth());
    let overlay = render_overlay(&images[0].1, &pred, &taxonomy).unwrap();

    let path = golden_dir().join("overlay.png");
    if updating() {
        overlay.save(&path).unwrap();
    }
    let golden = image::open(&path).unwrap().into_rgb8();
    assert!(golden == overlay, "overlay differs from {}", path.display());
}
