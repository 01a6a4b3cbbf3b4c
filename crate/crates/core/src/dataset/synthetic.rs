//! Deterministic synthetic food-shape images with exact polygon annotations.
//!
//! Each food class gets a flat base color with per-pixel noise over a noisy
//! gray "table". Shapes are ellipses, rotated rectangles or triangles.

use std::f64::consts::TAU;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    rasterize, ClassId, ClassTaxonomy, Dataset, DatasetIndex, ImageRecord, Polygon,
    RegionAnnotation, Split,
};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub count: usize,
    pub side: u32,
    pub seed: u64,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Classes to draw from; `None` means every food class of the taxonomy.
    pub classes: Option<Vec<ClassId>>,
    pub id_prefix: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 20,
            side: 512,
            seed: 0,
            min_shapes: 1,
            max_shapes: 3,
            classes: None,
            id_prefix: "synth".into(),
        }
    }
}

/// Base color of a class in synthetic images; hues spread evenly.
pub fn class_color(class: ClassId) -> [u8; 3] {
    let hue = f64::from(class.wrapping_sub(1) % 9) * 40.0;
    let value = if class.is_multiple_of(2) { 0.65 } else { 0.95 };
    hsv_to_rgb(hue, 0.85, value)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

fn random_shape(rng: &mut ChaCha8Rng, side: f64) -> Polygon {
    let cx = rng.random_range(0.2..0.8) * side;
    let cy = rng.random_range(0.2..0.8) * side;
    let rx = rng.random_range(0.10..0.22) * side;
    let ry = rng.random_range(0.10..0.22) * side;
    let rot = rng.random_range(0.0..TAU);
    let local: Vec<(f64, f64)> = match rng.random_range(0..3) {
        0 => (0..24)
            .map(|i| {
                let t = TAU * f64::from(i) / 24.0;
                (rx * t.cos(), ry * t.sin())
            })
            .collect(),
        1 => vec![(-rx, -ry), (rx, -ry), (rx, ry), (-rx, ry)],
        _ => vec![(0.0, -ry), (rx, ry), (-rx, ry)],
    };
    let (s, c) = rot.sin_cos();
    let points = local
        .into_iter()
        .map(|(x, y)| {
            let px = (cx + x * c - y * s).clamp(0.0, side);
            let py = (cy + x * s + y * c).clamp(0.0, side);
            // quarter-pixel grid keeps annotations exactly representable
            ((px * 4.0).round() / 4.0, (py * 4.0).round() / 4.0)
        })
        .collect();
    Polygon::new(points).expect("clamped points are valid")
}

/// Generates records and images. Image ids are `<prefix>_<nnnn>`.
pub fn generate(
    taxonomy: &ClassTaxonomy,
    config: &SyntheticConfig,
) -> Result<(DatasetIndex, Vec<(String, RgbImage)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pool: Vec<ClassId> = config
        .classes
        .clone()
        .unwrap_or_else(|| taxonomy.food_ids().collect());
    let side = config.side;
    let mut records = Vec::with_capacity(config.count);
    let mut images = Vec::with_capacity(config.count);

    for i in 0..config.count {
        let image_id = format!("{}_{i:04}", config.id_prefix);
        let n_shapes = rng.random_range(config.min_shapes..=config.max_shapes.max(config.min_shapes));
        let regions: Vec<RegionAnnotation> = (0..n_shapes)
            .map(|_| RegionAnnotation {
                polygon: random_shape(&mut rng, f64::from(side)),
                class_id: pool[rng.random_range(0..pool.len())],
            })
            .collect();
        let mask = rasterize(&regions, side, side);
        let image = RgbImage::from_fn(side, side, |x, y| {
            let class = mask.get(x, y);
            let base = if class == 0 { [128, 128, 128] } else { class_color(class) };
            let noise: i16 = rng.random_range(-12..=12);
            Rgb(base.map(|b| (i16::from(b) + noise).clamp(0, 255) as u8))
        });
        records.push(ImageRecord {
            image_id: image_id.clone(),
            file_path: format!("{image_id}.png"),
            width: side,
            height: side,
            regions,
            split: Split::Unassigned,
        });
        images.push((image_id, image));
    }
    Ok((DatasetIndex::new(taxonomy.clone(), records)?, images))
}

/// Generates a synthetic set and writes it as a dataset directory.
pub fn write_fixture(dir: &Path, taxonomy: &ClassTaxonomy, config: &SyntheticConfig) -> Result<Dataset> {
    let (index, images) = generate(taxonomy, config)?;
    Dataset::write(dir, &index, &images)
}
