//! Run-length encoding of per-class binary masks.
//!
//! Pixels are visited in row-major order. `counts` alternates run lengths of
//! pixels outside and inside the class, starting with an outside run that
//! may be zero.

use std::collections::BTreeMap;

use myfood_core::dataset::{ClassId, LabelMask, BACKGROUND};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`.
    pub size: [u32; 2],
    pub counts: Vec<u64>,
}

impl Rle {
    pub fn encode(mask: &LabelMask, class: ClassId) -> Rle {
        let mut counts = Vec::new();
        let mut inside = false;
        let mut run = 0u64;
        for &v in mask.values() {
            if (v == class) != inside {
                counts.push(run);
                run = 0;
                inside = !inside;
            }
            run += 1;
        }
        counts.push(run);
        Rle {
            size: [mask.height(), mask.width()],
            counts,
        }
    }

    /// Membership per pixel, row-major. Fails if the runs do not cover the
    /// image exactly.
    pub fn decode(&self) -> Result<Vec<bool>, String> {
        let len = u64::from(self.size[0]) * u64::from(self.size[1]);
        let total: u64 = self.counts.iter().sum();
        if total != len {
            return Err(format!("runs cover {total} pixels, image has {len}"));
        }
        let mut out = Vec::with_capacity(len as usize);
        for (i, &run) in self.counts.iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
        }
        Ok(out)
    }
}

/// One encoding per non-background class present in the mask.
pub fn encode_classes(mask: &LabelMask) -> BTreeMap<ClassId, Rle> {
    mask.classes_present()
        .into_iter()
        .filter(|&c| c != BACKGROUND)
        .map(|c| (c, Rle::encode(mask, c)))
        .collect()
}

/// Rebuilds a label mask from per-class encodings. Overlapping classes are
/// an error.
pub fn decode_classes<'a>(
    width: u32,
    height: u32,
    classes: impl IntoIterator<Item = (ClassId, &'a Rle)>,
) -> Result<LabelMask, String> {
    let mut values = vec![BACKGROUND; width as usize * height as usize];
    for (class, rle) in classes {
        if rle.size != [height, width] {
            return Err(format!("class {class} mask is {:?}, expected [{height}, {width}]", rle.size));
        }
        for (px, inside) in values.iter_mut().zip(rle.decode()?) {
            if inside {
                if *px != BACKGROUND {
                    return Err(format!("classes {} and {class} overlap", *px));
                }
                *px = class;
            }
        }
    }
    LabelMask::from_values(width, height, values).map_err(|e| e.to_string())
}
