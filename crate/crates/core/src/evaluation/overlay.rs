use image::{Rgb, RgbImage};

use crate::dataset::{ClassId, ClassTaxonomy, BACKGROUND};
use crate::modelhub::PredictionOutput;
use crate::{Error, Result};

/// Tint opacity out of 256.
const ALPHA: u32 = 115;

const PALETTE: [[u8; 3]; 9] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 0],
];

/// Overlay color of a class. Fixed per class id so every renderer agrees.
pub fn palette(class: ClassId) -> [u8; 3] {
    match class {
        BACKGROUND => [0, 0, 0],
        c if usize::from(c) <= PALETTE.len() => PALETTE[usize::from(c) - 1],
        c => {
            // beyond the fixed table: spread by a multiplicative hash
            let h = u32::from(c).wrapping_mul(2_654_435_761);
            [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
        }
    }
}

/// Tints every non-background pixel with its class color and draws a legend
/// of the classes present in the top-left corner. An all-background
/// prediction returns the image unchanged.
pub fn render_overlay(image: &RgbImage, pred: &PredictionOutput, taxonomy: &ClassTaxonomy) -> Result<RgbImage> {
    let mask = &pred.label_mask;
    if mask.dimensions() != image.dimensions() {
        return Err(Error::validation(format!(
            "mask is {:?}, image is {:?}",
            mask.dimensions(),
            image.dimensions()
        )));
    }
    let mut out = image.clone();
    for (px, &class) in out.pixels_mut().zip(mask.values()) {
        if class != BACKGROUND {
            *px = blend(*px, palette(class));
        }
    }

    let present: Vec<ClassId> = mask.classes_present().into_iter().filter(|&c| c != BACKGROUND).collect();
    if !present.is_empty() {
        draw_legend(&mut out, &present, taxonomy);
    }
    Ok(out)
}

fn blend(px: Rgb<u8>, color: [u8; 3]) -> Rgb<u8> {
    let mix = |a: u8, b: u8| ((u32::from(a) * (256 - ALPHA) + u32::from(b) * ALPHA + 128) >> 8) as u8;
    Rgb([mix(px[0], color[0]), mix(px[1], color[1]), mix(px[2], color[2])])
}

fn draw_legend(out: &mut RgbImage, classes: &[ClassId], taxonomy: &ClassTaxonomy) {
    let scale = if out.width() >= 256 { 2 } else { 1 };
    let swatch = 5 * scale;
    let line = swatch + 2 * scale;
    let pad = 2 * scale;
    let labels: Vec<String> = classes
        .iter()
        .map(|&c| taxonomy.name(c).map_or_else(|| c.to_string(), str::to_string))
        .collect();
    let text_w = labels.iter().map(|l| l.chars().count() as u32 * 4 * scale).max().unwrap_or(0);
    let box_w = pad + swatch + pad + text_w + pad;
    let box_h = pad + line * classes.len() as u32;

    fill(out, 0, 0, box_w, box_h, [0, 0, 0]);
    for (i, (&class, label)) in classes.iter().zip(&labels).enumerate() {
        let y = pad + line * i as u32;
        fill(out, pad, y, swatch, swatch, palette(class));
        draw_text(out, pad + swatch + pad, y, label, scale);
    }
}

fn fill(out: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32, color: [u8; 3]) {
    for y in y0..(y0 + h).min(out.height()) {
        for x in x0..(x0 + w).min(out.width()) {
            out.put_pixel(x, y, Rgb(color));
        }
    }
}

fn draw_text(out: &mut RgbImage, x0: u32, y0: u32, text: &str, scale: u32) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        let gx = x0 + i as u32 * 4 * scale;
        for (r, bits) in rows.iter().enumerate() {
            for c in 0..3u32 {
                if bits & (0b100 >> c) != 0 {
                    fill(out, gx + c * scale, y0 + r as u32 * scale, scale, scale, [255, 255, 255]);
                }
            }
        }
    }
}

/// 3x5 glyphs, one row per byte, high bit on the left. Case-insensitive;
/// unknown characters render blank.
fn glyph(ch: char) -> [u8; 5] {
    match ch.to_ascii_lowercase() {
        'a' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'b' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'c' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'd' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'e' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'f' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'g' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'h' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'i' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'j' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'k' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'l' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'm' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'n' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'o' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'p' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'q' => [0b010, 0b101, 0b101, 0b110, 0b011],
        'r' => [0b110, 0b101, 0b110, 0b101, 0b101],
        's' => [0b011, 0b100, 0b010, 0b001, 0b110],
        't' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'u' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'v' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'w' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'x' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b110, 0b001, 0b010, 0b100, 0b111],
        '3' => [0b110, 0b001, 0b010, 0b001, 0b110],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b110, 0b001, 0b110],
        '6' => [0b011, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b110],
        '+' => [0b000, 0b010, 0b111, 0b010, 0b000],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        _ => [0; 5],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabelMask;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7) as u8, (y * 5) as u8, ((x + y) * 3) as u8]))
    }

    #[test]
    fn background_only_is_identity() {
        let image = gradient(40, 30);
        let pred = PredictionOutput::from_mask(LabelMask::new(40, 30));
        let out = render_overlay(&image, &pred, &ClassTaxonomy::brazilian_food()).unwrap();
        assert_eq!(out, image);
    }

    #[test]
    fn single_class_is_a_uniform_tint_plus_legend() {
        let image = RgbImage::from_pixel(64, 64, Rgb([100, 100, 100]));
        let pred = PredictionOutput::from_mask(LabelMask::filled(64, 64, 1));
        let out = render_overlay(&image, &pred, &ClassTaxonomy::brazilian_food()).unwrap();
        let tint = blend(Rgb([100, 100, 100]), palette(1));
        assert_eq!(*out.get_pixel(63, 63), tint);
        assert_eq!(*out.get_pixel(40, 40), tint);
        // swatch sits inside the legend box
        assert_eq!(*out.get_pixel(3, 3), Rgb(palette(1)));
        assert_eq!(*out.get_pixel(0, 0), Rgb([0, 0, 0]));
        let legend_pixels = out.pixels().filter(|p| **p != tint).count();
        assert!(legend_pixels > 0 && legend_pixels < 64 * 10);
    }

    #[test]
    fn legend_clips_to_small_images() {
        let image = gradient(4, 4);
        let pred = PredictionOutput::from_mask(LabelMask::filled(4, 4, 9));
        let out = render_overlay(&image, &pred, &ClassTaxonomy::brazilian_food()).unwrap();
        assert_eq!(out.dimensions(), (4, 4));
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let pred = PredictionOutput::from_mask(LabelMask::new(3, 3));
        assert!(render_overlay(&gradient(4, 4), &pred, &ClassTaxonomy::brazilian_food()).is_err());
    }

    #[test]
    fn palette_is_distinct_for_the_taxonomy() {
        let colors: std::collections::BTreeSet<[u8; 3]> = (0..=9).map(palette).collect();
        assert_eq!(colors.len(), 10);
        assert_eq!(palette(200), palette(200));
    }
}
