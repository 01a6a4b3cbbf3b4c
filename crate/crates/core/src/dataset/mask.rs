use std::collections::BTreeSet;
use std::path::Path;

use image::{GrayImage, ImageFormat};

use super::taxonomy::{ClassId, ClassTaxonomy, BACKGROUND};
use crate::error::{Error, Result};

/// Per-pixel class-id raster in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: u32,
    height: u32,
    values: Vec<ClassId>,
}

impl LabelMask {
    /// All-background mask.
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, BACKGROUND)
    }

    pub fn filled(width: u32, height: u32, class: ClassId) -> Self {
        Self {
            width,
            height,
            values: vec![class; width as usize * height as usize],
        }
    }

    pub fn from_values(width: u32, height: u32, values: Vec<ClassId>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::validation(format!(
                "mask of {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> ClassId) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[ClassId] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> ClassId {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, class: ClassId) {
        let w = self.width as usize;
        self.values[y as usize * w + x as usize] = class;
    }

    pub(crate) fn values_mut(&mut self) -> &mut [ClassId] {
        &mut self.values
    }

    /// Distinct ids present, background included.
    pub fn classes_present(&self) -> BTreeSet<ClassId> {
        let mut seen = [false; 256];
        for &v in &self.values {
            seen[usize::from(v)] = true;
        }
        (0..=255u8).filter(|&c| seen[usize::from(c)]).collect()
    }

    pub fn pixel_count(&self, class: ClassId) -> u64 {
        self.values.iter().filter(|&&v| v == class).count() as u64
    }

    /// Fails on the first value that is not a taxonomy id.
    pub fn check_taxonomy(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        match self.values.iter().find(|&&v| !taxonomy.contains(v)) {
            Some(v) => Err(Error::validation(format!(
                "mask holds class id {v}, outside the taxonomy"
            ))),
            None => Ok(()),
        }
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.values.clone())
            .expect("buffer size matches dimensions")
    }

    pub fn from_gray_image(image: GrayImage) -> Self {
        let (width, height) = image.dimensions();
        Self {
            width,
            height,
            values: image.into_raw(),
        }
    }

    /// Encodes as a single-channel 8-bit PNG of raw class ids.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_gray_image().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(Self::from_gray_image(img.into_luma8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_preserves_ids() {
        let m = LabelMask::from_fn(7, 5, |x, y| ((x + y) % 10) as u8);
        let back = LabelMask::from_png_bytes(&m.to_png_bytes().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn classes_present_and_counts() {
        let m = LabelMask::from_values(2, 2, vec![0, 3, 3, 5]).unwrap();
        assert_eq!(m.classes_present().into_iter().collect::<Vec<_>>(), [0, 3, 5]);
        assert_eq!(m.pixel_count(3), 2);
        assert!(LabelMask::from_values(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn taxonomy_check() {
        let t = ClassTaxonomy::brazilian_food();
        assert!(LabelMask::filled(2, 2, 9).check_taxonomy(&t).is_ok());
        assert!(LabelMask::filled(2, 2, 10).check_taxonomy(&t).is_err());
    }
}
