use image::imageops::{self, FilterType};
use image::RgbImage;

use super::LabelMask;
use crate::error::{Error, Result};

/// Nearest source index for `dst` when mapping `dst_len` samples onto `src_len`,
/// sampling at pixel centers.
#[inline]
pub(crate) fn nearest(dst: u32, dst_len: u32, src_len: u32) -> u32 {
    let idx = ((2 * u64::from(dst) + 1) * u64::from(src_len)) / (2 * u64::from(dst_len));
    (idx as u32).min(src_len - 1)
}

/// Nearest-neighbor resample; never introduces a class id absent from the input.
pub fn resize_mask_nearest(mask: &LabelMask, width: u32, height: u32) -> LabelMask {
    if mask.dimensions() == (width, height) {
        return mask.clone();
    }
    let (sw, sh) = mask.dimensions();
    let cols: Vec<u32> = (0..width).map(|x| nearest(x, width, sw)).collect();
    let mut out = LabelMask::new(width, height);
    for y in 0..height {
        let sy = nearest(y, height, sh);
        for (x, &sx) in cols.iter().enumerate() {
            out.set(x as u32, y, mask.get(sx, sy));
        }
    }
    out
}

pub fn resize_image(image: &RgbImage, width: u32, height: u32) -> RgbImage {
    if image.dimensions() == (width, height) {
        return image.clone();
    }
    imageops::resize(image, width, height, FilterType::Triangle)
}

/// Resizes an image and its mask to `side`×`side`; bilinear for the image,
/// nearest-neighbor for the mask.
pub fn resize_pair(image: &RgbImage, mask: &LabelMask, side: u32) -> Result<(RgbImage, LabelMask)> {
    if side == 0 {
        return Err(Error::validation("resize side must be positive"));
    }
    if image.dimensions() != mask.dimensions() {
        return Err(Error::validation(format!(
            "image is {:?} but mask is {:?}",
            image.dimensions(),
            mask.dimensions()
        )));
    }
    Ok((
        resize_image(image, side, side),
        resize_mask_nearest(mask, side, side),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_training_size() {
        let image = RgbImage::new(512, 512);
        let mask = LabelMask::from_fn(512, 512, |x, _| if x < 256 { 0 } else { 4 });
        let (i, m) = resize_pair(&image, &mask, 224).unwrap();
        assert_eq!(i.dimensions(), (224, 224));
        assert_eq!(m.dimensions(), (224, 224));
        assert!(m.classes_present().is_subset(&[0, 4].into_iter().collect()));
    }

    #[test]
    fn same_side_is_identity() {
        let image = RgbImage::from_fn(6, 6, |x, y| image::Rgb([x as u8, y as u8, 7]));
        let mask = LabelMask::from_fn(6, 6, |x, y| ((x * y) % 3) as u8);
        let (i, m) = resize_pair(&image, &mask, 6).unwrap();
        assert_eq!(i, image);
        assert_eq!(m, mask);
    }

    #[test]
    fn mismatch_rejected() {
        let image = RgbImage::new(4, 5);
        let mask = LabelMask::new(4, 4);
        assert!(resize_pair(&image, &mask, 2).is_err());
        assert!(resize_pair(&RgbImage::new(4, 4), &mask, 0).is_err());
    }

    #[test]
    fn integer_upscale_replicates_blocks() {
        let mask = LabelMask::from_values(2, 1, vec![1, 2]).unwrap();
        let up = resize_mask_nearest(&mask, 4, 2);
        assert_eq!(up.values(), &[1, 1, 2, 2, 1, 1, 2, 2]);
    }

    proptest! {
        #[test]
        fn resize_never_invents_classes(
            w in 1u32..20, h in 1u32..20, ow in 1u32..40, oh in 1u32..40,
            seed in any::<u64>(),
        ) {
            let mask = LabelMask::from_fn(w, h, |x, y| {
                ((seed.wrapping_mul(31).wrapping_add(u64::from(x * 7 + y * 13))) % 4) as u8 * 2
            });
            let out = resize_mask_nearest(&mask, ow, oh);
            prop_assert!(out.classes_present().is_subset(&mask.classes_present()));
            prop_assert_eq!(out.dimensions(), (ow, oh));
        }
    }
}
