//! On-disk dataset layout:
//!
//! ```text
//! <root>/
//!   images/<image_id>.png     normalized RGB images
//!   masks/<image_id>.png      single-channel class-id rasters
//!   taxonomy.txt              `id<TAB>name` per food class
//!   splits.csv                `image_id,split`
//!   annotations.json          VIA export in normalized coordinates
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::{info, warn};
use rayon::prelude::*;

use super::{
    parse_via, parse_via_documents, rasterize, rasterize_with_warnings, resize_image, write_via,
    ClassTaxonomy, DatasetIndex, ImageRecord, LabelMask, Split, ViaOptions,
};
use crate::error::{Error, Result};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const TAXONOMY_FILE: &str = "taxonomy.txt";
pub const SPLITS_FILE: &str = "splits.csv";
const CLASS_KEY: &str = "food";

/// A dataset directory together with its parsed index.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    pub index: DatasetIndex,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let taxonomy_path = root.join(TAXONOMY_FILE);
        let taxonomy = ClassTaxonomy::parse_manifest(&read_text(&taxonomy_path)?)?;
        let annotations = read_text(&root.join(ANNOTATIONS_FILE))?;
        let options = ViaOptions {
            class_key: CLASS_KEY.into(),
            ..ViaOptions::default()
        };
        let mut records = parse_via(&annotations, &taxonomy, &options)?;
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let mut index = DatasetIndex::new(taxonomy, records)?;

        let splits_path = root.join(SPLITS_FILE);
        if splits_path.exists() {
            let splits = read_splits(&splits_path)?;
            for record in &mut index.records {
                record.split = splits
                    .get(&record.image_id)
                    .copied()
                    .unwrap_or(Split::Unassigned);
            }
            if let Some(unknown) = splits.keys().find(|id| index.record(id).is_none()) {
                return Err(Error::Parse {
                    entry: format!("{SPLITS_FILE}: {unknown}"),
                    message: "image_id not in annotations".into(),
                });
            }
        }
        Ok(Self { root, index })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.index.taxonomy
    }

    pub fn image_path(&self, image_id: &str) -> PathBuf {
        self.root.join("images").join(format!("{image_id}.png"))
    }

    pub fn mask_path(&self, image_id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{image_id}.png"))
    }

    pub fn load_image(&self, image_id: &str) -> Result<RgbImage> {
        let path = self.image_path(image_id);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(image::load_from_memory(&bytes)?.into_rgb8())
    }

    pub fn load_mask(&self, image_id: &str) -> Result<LabelMask> {
        LabelMask::load_png(&self.mask_path(image_id))
    }

    /// Rewrites `splits.csv` from the in-memory index.
    pub fn save_splits(&self) -> Result<()> {
        let path = self.root.join(SPLITS_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["image_id", "split"])?;
        for r in &self.index.records {
            w.write_record([r.image_id.as_str(), r.split.as_str()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Writes a complete dataset directory: images, masks, manifest files.
    pub fn write(
        root: impl Into<PathBuf>,
        index: &DatasetIndex,
        images: &[(String, RgbImage)],
    ) -> Result<Self> {
        let root = root.into();
        create_dir(&root.join("images"))?;
        create_dir(&root.join("masks"))?;
        let by_id: HashMap<&str, &RgbImage> = images.iter().map(|(id, im)| (id.as_str(), im)).collect();

        let mut records = index.records.clone();
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        for r in &mut records {
            r.file_path = format!("{}.png", r.image_id);
        }
        let out = Self {
            root,
            index: DatasetIndex {
                taxonomy: index.taxonomy.clone(),
                records,
                split_seed: index.split_seed,
            },
        };
        out.index
            .records
            .par_iter()
            .map(|record| {
                let image = by_id
                    .get(record.image_id.as_str())
                    .ok_or_else(|| Error::Lookup(record.image_id.clone()))?;
                if image.dimensions() != (record.width, record.height) {
                    return Err(Error::validation(format!(
                        "{}: image is {:?}, record says {}x{}",
                        record.image_id,
                        image.dimensions(),
                        record.width,
                        record.height
                    )));
                }
                let path = out.image_path(&record.image_id);
                image.save(&path)?;
                record.ground_truth().save_png(&out.mask_path(&record.image_id))
            })
            .collect::<Result<Vec<()>>>()?;

        write_text(&out.root.join(TAXONOMY_FILE), &out.index.taxonomy.to_manifest())?;
        write_text(
            &out.root.join(ANNOTATIONS_FILE),
            &write_via(&out.index.records, &out.index.taxonomy, CLASS_KEY),
        )?;
        out.save_splits()?;
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub class_key: String,
    /// Side of the normalized square images; `None` keeps native sizes.
    pub side: Option<u32>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            class_key: CLASS_KEY.into(),
            side: Some(512),
        }
    }
}

/// Builds a dataset directory from VIA annotation files and a folder of
/// source images. Polygons are scaled along with the images.
pub fn build_dataset(
    via_documents: &[String],
    images_dir: &Path,
    taxonomy: &ClassTaxonomy,
    out_dir: &Path,
    options: &BuildOptions,
) -> Result<Dataset> {
    // Clip against the real image size once it is known, not the VIA default.
    let via_options = ViaOptions {
        class_key: options.class_key.clone(),
        default_width: u32::MAX,
        default_height: u32::MAX,
    };
    let records = parse_via_documents(via_documents, taxonomy, &via_options)?;

    let loaded: Vec<(ImageRecord, RgbImage)> = records
        .into_par_iter()
        .map(|mut record| {
            let path = images_dir.join(&record.file_path);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let mut image = image::load_from_memory(&bytes)?.into_rgb8();
            let (w, h) = image.dimensions();
            let (tw, th) = options.side.map_or((w, h), |s| (s, s));
            let (sx, sy) = (f64::from(tw) / f64::from(w), f64::from(th) / f64::from(h));
            let id = record.image_id.clone();
            record.regions.retain_mut(|region| match region.polygon.clipped(w, h) {
                Some(p) => {
                    region.polygon = p.scaled(sx, sy);
                    true
                }
                None => {
                    warn!("{id}: a class {} region lies outside the image, dropped", region.class_id);
                    false
                }
            });
            image = resize_image(&image, tw, th);
            record.width = tw;
            record.height = th;
            let (_, skipped) = rasterize_with_warnings(&record.regions, tw, th);
            for s in skipped {
                warn!("{}: region {} has no area, dropped", record.image_id, s.index);
            }
            Ok((record, image))
        })
        .collect::<Result<_>>()?;

    let (records, images): (Vec<_>, Vec<_>) = loaded
        .into_iter()
        .map(|(r, im)| {
            let id = r.image_id.clone();
            (r, (id, im))
        })
        .unzip();
    let index = DatasetIndex::new(taxonomy.clone(), records)?;
    info!("building dataset with {} images in {}", index.records.len(), out_dir.display());
    Dataset::write(out_dir, &index, &images)
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub images_checked: usize,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Checks that every record has an image and a mask of matching size, that
/// masks hold only taxonomy ids and agree with the annotations.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let taxonomy = dataset.taxonomy();
    let problems: Vec<Vec<String>> = dataset
        .index
        .records
        .par_iter()
        .map(|record| {
            let mut problems = Vec::new();
            let id = &record.image_id;
            let image = match dataset.load_image(id) {
                Ok(im) => Some(im),
                Err(e) => {
                    problems.push(format!("{id}: image: {e}"));
                    None
                }
            };
            match dataset.load_mask(id) {
                Err(e) => problems.push(format!("{id}: mask: {e}")),
                Ok(mask) => {
                    if let Some(im) = &image {
                        if im.dimensions() != mask.dimensions() {
                            problems.push(format!(
                                "{id}: image {:?} and mask {:?} differ in size",
                                im.dimensions(),
                                mask.dimensions()
                            ));
                        }
                    }
                    if let Err(e) = mask.check_taxonomy(taxonomy) {
                        problems.push(format!("{id}: {e}"));
                    }
                    if mask.dimensions() == (record.width, record.height)
                        && mask != rasterize(&record.regions, record.width, record.height)
                    {
                        problems.push(format!("{id}: mask disagrees with annotations"));
                    }
                }
            }
            problems
        })
        .collect();
    ValidationReport {
        images_checked: dataset.index.records.len(),
        problems: problems.into_iter().flatten().collect(),
    }
}

fn read_splits(path: &Path) -> Result<HashMap<String, Split>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for row in reader.records() {
        let row = row?;
        let (Some(id), Some(split)) = (row.get(0), row.get(1)) else {
            return Err(Error::Parse {
                entry: SPLITS_FILE.into(),
                message: format!("short row {row:?}"),
            });
        };
        out.insert(id.to_string(), split.parse()?);
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
