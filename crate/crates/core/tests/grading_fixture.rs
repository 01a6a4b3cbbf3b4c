//! Detection grading over the committed 12-image set in `fixtures/grading`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::RgbImage;
use myfood_core::dataset::synthetic::{write_fixture, SyntheticConfig};
use myfood_core::dataset::{ClassTaxonomy, Dataset, LabelMask, Split, BACKGROUND};
use myfood_core::evaluation::{comparison_table, grade_split, GradeValue, DEFAULT_MIN_OVERLAP};
use myfood_core::modelhub::{oracle_predictor, PredictionOutput, Predictor, PredictorHandle, PredictorKind};
use myfood_core::Result;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/grading")
}

/// Ground truth reduced to its lowest food class.
struct FirstFood(PredictorHandle);

impl Predictor for FirstFood {
    fn predict(&self, image: &RgbImage) -> Result<PredictionOutput> {
        let m = self.0.predict(image)?.label_mask;
        let first = m.classes_present().into_iter().find(|&c| c != BACKGROUND);
        Ok(PredictionOutput::from_mask(LabelMask::from_fn(m.width(), m.height(), |x, y| {
            let c = m.get(x, y);
            if Some(c) == first {
                c
            } else {
                BACKGROUND
            }
        })))
    }

    fn digest(&self) -> String {
        "first-food".into()
    }
}

#[test]
fn fixture_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = SyntheticConfig {
        count: 12,
        side: 64,
        seed: 12,
        ..Default::default()
    };
    write_fixture(dir.path(), &ClassTaxonomy::brazilian_food(), &config).unwrap();
    let read = |root: &Path| std::fs::read_to_string(root.join("annotations.json")).unwrap();
    assert_eq!(read(dir.path()), read(&fixture_dir()));
}

#[test]
fn tally_over_twelve_images() {
    let ds = Dataset::open(fixture_dir()).unwrap();
    let oracle = oracle_predictor(&ds).unwrap();
    let first = PredictorHandle::new("first-food", PredictorKind::Oracle, None, FirstFood(oracle.clone()));

    let (images, oracle_grades) = grade_split(&oracle, &ds, Split::Unassigned, DEFAULT_MIN_OVERLAP).unwrap();
    let (same, first_grades) = grade_split(&first, &ds, Split::Unassigned, DEFAULT_MIN_OVERLAP).unwrap();
    assert_eq!(images.len(), 12);
    assert_eq!(images, same);
    assert!(oracle_grades.iter().all(|g| g.value == GradeValue::Great));

    // one food found out of however many distinct foods the image shows
    let mut tally = BTreeMap::new();
    for (id, g) in images.iter().zip(&first_grades) {
        let foods: BTreeSet<_> = ds.index.record(id).unwrap().regions.iter().map(|r| r.class_id).collect();
        let want = match foods.len() {
            1 => GradeValue::Great,
            2 => GradeValue::Good,
            _ => GradeValue::Bad,
        };
        assert_eq!((g.value, g.detected, g.total), (want, 1, foods.len()), "{id}");
        *tally.entry(want).or_insert(0) += 1;
    }
    assert_eq!(tally.len(), 3, "the fixture should exercise every grade: {tally:?}");

    let grades = BTreeMap::from([("oracle".to_string(), oracle_grades), ("first-food".to_string(), first_grades)]);
    let table = comparison_table(&images, &grades).unwrap();
    let row = |system: &str| {
        table
            .lines()
            .rev()
            .find(|l| l.starts_with(system))
            .unwrap()
            .split('|')
            .skip(1)
            .map(|c| c.trim().parse::<usize>().unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(row("oracle"), [0, 0, 12]);
    assert_eq!(row("first-food"), GradeValue::ALL.map(|v| tally[&v]));
}
