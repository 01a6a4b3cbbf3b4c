//! Annotated food images: taxonomy, polygon annotations, label masks,
//! deterministic splits and the on-disk dataset layout.

mod layout;
mod mask;
mod raster;
pub(crate) mod resize;
mod split;
pub mod synthetic;
mod taxonomy;
mod via;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use layout::{build_dataset, validate_dataset, BuildOptions, Dataset, ValidationReport};
pub use mask::LabelMask;
pub use raster::{point_in_polygon, rasterize, rasterize_with_warnings, SkippedRegion};
pub use resize::{resize_image, resize_mask_nearest, resize_pair};
pub use split::{split_dataset, SplitRatios};
pub use taxonomy::{ClassId, ClassTaxonomy, BACKGROUND};
pub use via::{parse_via, parse_via_documents, write_via, ViaOptions};

use crate::error::{Error, Result};

/// Closed polygon in pixel coordinates (x right, y down).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    points: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::validation(format!(
                "polygon needs at least 3 points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|(x, y)| !x.is_finite() || !y.is_finite() || *x < 0.0 || *y < 0.0)
        {
            return Err(Error::validation(format!(
                "polygon point ({}, {}) is not finite and non-negative",
                p.0, p.1
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Intersection with the rectangle `[0,width]x[0,height]`, or `None` when
    /// nothing with area remains. Membership of every point strictly inside
    /// the rectangle is unchanged under the even-odd rule.
    pub fn clipped(&self, width: u32, height: u32) -> Option<Polygon> {
        let (w, h) = (f64::from(width), f64::from(height));
        let mut pts = self.points.clone();
        // Sutherland-Hodgman, one half-plane at a time: (axis, bound, keep <=)
        for (axis, bound, below) in [(0, 0.0, false), (0, w, true), (1, 0.0, false), (1, h, true)] {
            let coord = |p: (f64, f64)| if axis == 0 { p.0 } else { p.1 };
            let inside = |p: (f64, f64)| if below { coord(p) <= bound } else { coord(p) >= bound };
            let mut out = Vec::with_capacity(pts.len() + 4);
            for i in 0..pts.len() {
                let a = pts[i];
                let b = pts[(i + 1) % pts.len()];
                if inside(a) {
                    out.push(a);
                }
                if inside(a) != inside(b) {
                    let t = (bound - coord(a)) / (coord(b) - coord(a));
                    let p = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                    // pin the cut coordinate exactly onto the bound
                    out.push(if axis == 0 { (bound, p.1) } else { (p.0, bound) });
                }
            }
            if out.is_empty() {
                return None;
            }
            pts = out;
        }
        let clipped = Polygon { points: pts };
        (clipped.points.len() >= 3 && !clipped.is_degenerate()).then_some(clipped)
    }

    /// True when all points lie on one line, so no pixel center can be inside.
    pub fn is_degenerate(&self) -> bool {
        let p0 = self.points[0];
        let Some(p1) = self.points.iter().copied().find(|&p| p != p0) else {
            return true;
        };
        self.points
            .iter()
            .all(|&(x, y)| (p1.0 - p0.0) * (y - p0.1) == (p1.1 - p0.1) * (x - p0.0))
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Polygon {
        Polygon {
            points: self.points.iter().map(|&(x, y)| (x * sx, y * sy)).collect(),
        }
    }

    /// Unsigned shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.points.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let (x0, y0) = self.points[i];
                let (x1, y1) = self.points[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        twice.abs() / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    pub polygon: Polygon,
    pub class_id: ClassId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "unassigned" | "" => Ok(Split::Unassigned),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub file_path: String,
    pub width: u32,
    pub height: u32,
    pub regions: Vec<RegionAnnotation>,
    pub split: Split,
}

impl ImageRecord {
    /// Rasterizes this record's regions at its own resolution.
    pub fn ground_truth(&self) -> LabelMask {
        rasterize(&self.regions, self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub taxonomy: ClassTaxonomy,
    pub records: Vec<ImageRecord>,
    pub split_seed: u64,
}

impl DatasetIndex {
    pub fn new(taxonomy: ClassTaxonomy, records: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate image_id {:?}",
                    r.image_id
                )));
            }
        }
        Ok(Self {
            taxonomy,
            records,
            split_seed: 0,
        })
    }

    pub fn record(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub images: usize,
    /// Images containing at least one region of the class, for every food class.
    pub per_class: BTreeMap<ClassId, usize>,
    pub per_split: BTreeMap<Split, usize>,
}

pub fn dataset_stats(index: &DatasetIndex) -> DatasetStats {
    let mut stats = DatasetStats {
        images: index.records.len(),
        per_class: index.taxonomy.food_ids().map(|id| (id, 0)).collect(),
        per_split: [
            Split::Train,
            Split::Validation,
            Split::Test,
            Split::Unassigned,
        ]
        .into_iter()
        .map(|s| (s, 0))
        .collect(),
    };
    for record in &index.records {
        *stats.per_split.entry(record.split).or_default() += 1;
        let classes: HashSet<ClassId> = record.regions.iter().map(|r| r.class_id).collect();
        for class in classes {
            *stats.per_class.entry(class).or_default() += 1;
        }
    }
    stats
}

impl DatasetStats {
    pub fn render(&self, taxonomy: &ClassTaxonomy) -> String {
        use std::fmt::Write as _;
        let mut out = format!("images\t{}\n", self.images);
        for (id, count) in &self.per_class {
            let name = taxonomy.name(*id).unwrap_or("?");
            let _ = writeln!(out, "class\t{name}\t{count}");
        }
        for (split, count) in &self.per_split {
            let _ = writeln!(out, "split\t{split}\t{count}");
        }
        out
    }
}
