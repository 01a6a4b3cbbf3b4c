use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::dataset::{rasterize, ClassId, Dataset, RegionAnnotation, Split};
use crate::metrics::{confusion, iou};
use crate::modelhub::{PredictionOutput, PredictorHandle};
use crate::{Error, Result};

pub const DEFAULT_MIN_OVERLAP: f64 = 0.1;

/// Grades per system, in image order.
pub type SystemGrades = BTreeMap<String, Vec<Grade>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradeValue {
    Bad,
    Good,
    Great,
}

impl GradeValue {
    pub const ALL: [GradeValue; 3] = [GradeValue::Bad, GradeValue::Good, GradeValue::Great];

    pub fn as_str(self) -> &'static str {
        match self {
            GradeValue::Bad => "bad",
            GradeValue::Good => "good",
            GradeValue::Great => "great",
        }
    }
}

impl fmt::Display for GradeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradeValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bad" => Ok(GradeValue::Bad),
            "good" => Ok(GradeValue::Good),
            "great" => Ok(GradeValue::Great),
            _ => Err(Error::validation(format!("unknown grade {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub value: GradeValue,
    pub detected: usize,
    pub total: usize,
}

impl Grade {
    /// All foods found is great; at least half is good (exactly half
    /// included); fewer is bad.
    pub fn from_counts(detected: usize, total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::validation("cannot grade an image without foods"));
        }
        if detected > total {
            return Err(Error::validation(format!("{detected} of {total} foods detected")));
        }
        let value = if detected == total {
            GradeValue::Great
        } else if 2 * detected >= total {
            GradeValue::Good
        } else {
            GradeValue::Bad
        };
        Ok(Self { value, detected, total })
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}/{})", self.value, self.detected, self.total)
    }
}

/// Grades one prediction against the annotated regions of its image.
///
/// Regions of the same class form one food, measured where it is visible in
/// the rasterized ground truth. A food is detected when the predicted mask of
/// its class has IoU of at least `min_overlap` with that area. Foods hidden
/// entirely by later regions are ignored.
pub fn grade_prediction(pred: &PredictionOutput, gt_regions: &[RegionAnnotation], min_overlap: f64) -> Result<Grade> {
    if !(min_overlap > 0.0 && min_overlap <= 1.0) {
        return Err(Error::validation(format!("min_overlap must be in (0, 1], got {min_overlap}")));
    }
    let (w, h) = pred.label_mask.dimensions();
    let gt = rasterize(gt_regions, w, h);
    let classes: BTreeSet<ClassId> = gt_regions.iter().map(|r| r.class_id).collect();

    let mut total = 0;
    let mut detected = 0;
    for class in classes {
        if gt.pixel_count(class) == 0 {
            log::warn!("class {class} has no visible pixels; not graded");
            continue;
        }
        total += 1;
        let counts = confusion(&pred.label_mask, &gt, class)?;
        if iou(&counts).is_some_and(|v| v >= min_overlap) {
            detected += 1;
        }
    }
    Grade::from_counts(detected, total)
}

/// Renders images as rows and systems as columns, followed by per-system
/// grade counts. Every system needs exactly one grade per image.
pub fn comparison_table(images: &[String], grades: &BTreeMap<String, Vec<Grade>>) -> Result<String> {
    if grades.is_empty() {
        return Err(Error::validation("no systems to compare"));
    }
    if let Some((system, g)) = grades.iter().find(|(_, g)| g.len() != images.len()) {
        return Err(Error::validation(format!(
            "{system} has {} grades for {} images",
            g.len(),
            images.len()
        )));
    }

    let mut rows = vec![std::iter::once("image".to_string()).chain(grades.keys().cloned()).collect::<Vec<_>>()];
    for (i, image) in images.iter().enumerate() {
        rows.push(
            std::iter::once(image.clone())
                .chain(grades.values().map(|g| g[i].value.to_string()))
                .collect(),
        );
    }
    let mut tally = vec![std::iter::once("system".to_string())
        .chain(GradeValue::ALL.map(|v| v.to_string()))
        .collect::<Vec<_>>()];
    for (system, g) in grades {
        tally.push(
            std::iter::once(system.clone())
                .chain(GradeValue::ALL.map(|v| g.iter().filter(|x| x.value == v).count().to_string()))
                .collect(),
        );
    }
    Ok(format!("{}\n{}", render(&rows), render(&tally)))
}

/// `grades.csv`: `image_id,system,grade,detected,total`.
pub fn write_grades(path: &Path, images: &[String], grades: &BTreeMap<String, Vec<Grade>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image_id", "system", "grade", "detected", "total"])?;
    for (i, image) in images.iter().enumerate() {
        for (system, g) in grades {
            let g = g
                .get(i)
                .ok_or_else(|| Error::validation(format!("{system} has no grade for {image}")))?;
            w.write_record([
                image.as_str(),
                system.as_str(),
                g.value.as_str(),
                &g.detected.to_string(),
                &g.total.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `grades.csv`. Images keep their first-seen order; each system
/// must grade each image exactly once.
pub fn read_grades(path: &Path) -> Result<(Vec<String>, SystemGrades)> {
    #[derive(Deserialize)]
    struct Row {
        image_id: String,
        system: String,
        grade: GradeValue,
        detected: usize,
        total: usize,
    }
    let mut images: Vec<String> = Vec::new();
    let mut cells: BTreeMap<String, BTreeMap<String, Grade>> = BTreeMap::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let row: Row = row?;
        let grade = Grade::from_counts(row.detected, row.total)?;
        if grade.value != row.grade {
            return Err(Error::validation(format!(
                "{}: {} of {} foods is {}, file says {}",
                row.image_id, row.detected, row.total, grade.value, row.grade
            )));
        }
        if !images.contains(&row.image_id) {
            images.push(row.image_id.clone());
        }
        if cells.entry(row.system.clone()).or_default().insert(row.image_id.clone(), grade).is_some() {
            return Err(Error::validation(format!("{} graded twice by {}", row.image_id, row.system)));
        }
    }
    let mut grades = BTreeMap::new();
    for (system, by_image) in cells {
        let g = images
            .iter()
            .map(|i| {
                by_image
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::validation(format!("{system} has no grade for {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        grades.insert(system, g);
    }
    Ok((images, grades))
}

/// Grades every image of a split that has at least one food region.
pub fn grade_split(
    predictor: &PredictorHandle,
    dataset: &Dataset,
    split: Split,
    min_overlap: f64,
) -> Result<(Vec<String>, Vec<Grade>)> {
    let mut records: Vec<_> = dataset.index.in_split(split).collect();
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if records.is_empty() {
        return Err(Error::validation(format!("split {split} is empty")));
    }
    let graded: Vec<Option<(String, Grade)>> = records
        .par_iter()
        .map(|r| {
            if r.regions.is_empty() {
                log::warn!("{}: no foods annotated, not graded", r.image_id);
                return Ok(None);
            }
            let pred = predictor.predict(&dataset.load_image(&r.image_id)?)?;
            Ok(Some((r.image_id.clone(), grade_prediction(&pred, &r.regions, min_overlap)?)))
        })
        .collect::<Result<_>>()?;
    Ok(graded.into_iter().flatten().unzip())
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabelMask, Polygon};
    use proptest::prelude::*;

    fn square(class: ClassId, x: f64, y: f64, s: f64) -> RegionAnnotation {
        RegionAnnotation {
            polygon: Polygon::new(vec![(x, y), (x + s, y), (x + s, y + s), (x, y + s)]).unwrap(),
            class_id: class,
        }
    }

    fn regions() -> Vec<RegionAnnotation> {
        vec![square(1, 0.0, 0.0, 8.0), square(2, 8.0, 0.0, 8.0), square(3, 0.0, 8.0, 8.0)]
    }

    fn predicting(classes: &[ClassId]) -> PredictionOutput {
        let gt = rasterize(&regions(), 16, 16);
        PredictionOutput::from_mask(LabelMask::from_fn(16, 16, |x, y| {
            let c = gt.get(x, y);
            if classes.contains(&c) {
                c
            } else {
                0
            }
        }))
    }

    #[test]
    fn rubric() {
        let cases: [(&[ClassId], GradeValue); 4] = [
            (&[1, 2, 3], GradeValue::Great),
            (&[1, 2], GradeValue::Good),
            (&[1], GradeValue::Bad),
            (&[], GradeValue::Bad),
        ];
        for (classes, want) in cases {
            let g = grade_prediction(&predicting(classes), &regions(), DEFAULT_MIN_OVERLAP).unwrap();
            assert_eq!(g.value, want, "{classes:?}");
            assert_eq!((g.detected, g.total), (classes.len(), 3));
        }
    }

    #[test]
    fn half_is_good() {
        assert_eq!(Grade::from_counts(1, 2).unwrap().value, GradeValue::Good);
        assert_eq!(Grade::from_counts(2, 4).unwrap().value, GradeValue::Good);
        assert_eq!(Grade::from_counts(1, 3).unwrap().value, GradeValue::Bad);
        assert_eq!(Grade::from_counts(0, 1).unwrap().value, GradeValue::Bad);
    }

    #[test]
    fn grades_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grades.csv");
        let images = vec!["b".to_string(), "a".to_string()];
        let g = |d, t| Grade::from_counts(d, t).unwrap();
        let grades = BTreeMap::from([("x".to_string(), vec![g(1, 2), g(0, 3)]), ("y".to_string(), vec![g(2, 2), g(3, 3)])]);
        write_grades(&path, &images, &grades).unwrap();
        assert_eq!(read_grades(&path).unwrap(), (images, grades));

        std::fs::write(&path, "image_id,system,grade,detected,total\na,x,great,1,2\n").unwrap();
        assert!(read_grades(&path).is_err());
        std::fs::write(&path, "image_id,system,grade,detected,total\na,x,good,1,2\nb,x,good,1,2\nb,y,bad,0,2\n").unwrap();
        assert!(read_grades(&path).unwrap_err().to_string().contains("y has no grade for a"));
    }

    #[test]
    fn no_foods_is_an_error() {
        let pred = predicting(&[]);
        assert!(matches!(grade_prediction(&pred, &[], 0.1), Err(Error::Validation(_))));
        assert!(Grade::from_counts(0, 0).is_err());
        assert!(Grade::from_counts(3, 2).is_err());
    }

    #[test]
    fn min_overlap_bounds() {
        let pred = predicting(&[1]);
        for bad in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(grade_prediction(&pred, &regions(), bad).is_err(), "{bad}");
        }
        assert!(grade_prediction(&pred, &regions(), 1.0).is_ok());
    }

    #[test]
    fn small_overlap_counts_only_above_threshold() {
        // food 1 is 64 px; predicting 8 of them gives IoU 0.125
        let gt = regions();
        let pred = PredictionOutput::from_mask(LabelMask::from_fn(16, 16, |x, y| u8::from(x < 8 && y == 0)));
        let g = grade_prediction(&pred, &gt[..1], 0.1).unwrap();
        assert_eq!(g.detected, 1);
        let g = grade_prediction(&pred, &gt[..1], 0.2).unwrap();
        assert_eq!(g.detected, 0);
    }

    #[test]
    fn regions_of_one_class_are_one_food() {
        let gt = vec![square(1, 0.0, 0.0, 4.0), square(1, 10.0, 10.0, 4.0)];
        let pred = PredictionOutput::from_mask(rasterize(&gt, 16, 16));
        let g = grade_prediction(&pred, &gt, 0.1).unwrap();
        assert_eq!((g.detected, g.total), (1, 1));
    }

    #[test]
    fn table_and_tally() {
        let images = vec!["a".to_string()];
        let mut grades = BTreeMap::new();
        grades.insert("mine".to_string(), vec![Grade::from_counts(1, 1).unwrap()]);
        let t = comparison_table(&images, &grades).unwrap();
        assert_eq!(
            t,
            "image | mine\n------|------\na     | great\n\nsystem | bad | good | great\n-------|-----|------|------\nmine   | 0   | 0    | 1\n"
        );

        grades.insert("other".to_string(), vec![Grade::from_counts(0, 1).unwrap()]);
        let t = comparison_table(&images, &grades).unwrap();
        assert!(t.contains("a     | great | bad"));

        grades.insert("ragged".to_string(), vec![]);
        assert!(matches!(comparison_table(&images, &grades), Err(Error::Validation(_))));
        assert!(comparison_table(&images, &BTreeMap::new()).is_err());
    }

    #[test]
    fn grades_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grades.csv");
        let images = vec!["a".to_string(), "b".to_string()];
        let grades = BTreeMap::from([(
            "mine".to_string(),
            vec![Grade::from_counts(1, 1).unwrap(), Grade::from_counts(1, 3).unwrap()],
        )]);
        write_grades(&path, &images, &grades).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "image_id,system,grade,detected,total\na,mine,great,1,1\nb,mine,bad,1,3\n"
        );
    }

    proptest! {
        #[test]
        fn detecting_more_never_lowers_the_grade(total in 1usize..20, detected in 0usize..20) {
            prop_assume!(detected < total);
            let before = Grade::from_counts(detected, total).unwrap();
            let after = Grade::from_counts(detected + 1, total).unwrap();
            prop_assert!(after.value >= before.value);
        }

        #[test]
        fn oracle_is_always_great(
            min_overlap in 0.001f64..=1.0,
            squares in prop::collection::vec((1u8..=9, 0.0f64..12.0, 0.0f64..12.0, 1.0f64..8.0), 1..6),
        ) {
            let gt: Vec<_> = squares.iter().map(|&(c, x, y, s)| square(c, x, y, s)).collect();
            let pred = PredictionOutput::from_mask(rasterize(&gt, 16, 16));
            prop_assert_eq!(grade_prediction(&pred, &gt, min_overlap).unwrap().value, GradeValue::Great);
        }
    }
}
