use log::warn;

use super::{LabelMask, Polygon, RegionAnnotation};

/// A region dropped during rasterization because it has no area inside the image.
#[derive(Clone, Debug, PartialEq)]
pub struct SkippedRegion {
    pub index: usize,
    pub class_id: u8,
}

/// Even-odd point-in-polygon test with a half-open boundary rule: points on a
/// top or left edge are inside, points on a bottom or right edge are outside.
pub fn point_in_polygon(polygon: &Polygon, px: f64, py: f64) -> bool {
    let pts = polygon.points();
    let mut inside = false;
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        if crosses_row(a, b, py) && left_of_crossing(a, b, px, py) {
            inside = !inside;
        }
    }
    inside
}

#[inline]
fn crosses_row(a: (f64, f64), b: (f64, f64), py: f64) -> bool {
    (a.1 > py) != (b.1 > py)
}

/// True when `px` lies strictly left of where edge `a→b` crosses the row `py`.
/// Uses the cross-multiplied form so integer and half-integer inputs are exact.
#[inline]
fn left_of_crossing(a: (f64, f64), b: (f64, f64), px: f64, py: f64) -> bool {
    let dy = b.1 - a.1;
    let lhs = (px - a.0) * dy;
    let rhs = (py - a.1) * (b.0 - a.0);
    if dy > 0.0 {
        lhs < rhs
    } else {
        lhs > rhs
    }
}

/// Paints regions in order onto a background mask. A pixel takes a region's
/// class iff its center is inside the polygon; later regions overwrite earlier ones.
pub fn rasterize(regions: &[RegionAnnotation], width: u32, height: u32) -> LabelMask {
    rasterize_with_warnings(regions, width, height).0
}

pub fn rasterize_with_warnings(
    regions: &[RegionAnnotation],
    width: u32,
    height: u32,
) -> (LabelMask, Vec<SkippedRegion>) {
    let mut mask = LabelMask::new(width, height);
    let mut skipped = Vec::new();
    let mut toggles = vec![false; width as usize + 1];
    for (index, region) in regions.iter().enumerate() {
        let Some(polygon) = region.polygon.clipped(width, height) else {
            warn!("skipping region {index} (class {}): no area inside the image", region.class_id);
            skipped.push(SkippedRegion {
                index,
                class_id: region.class_id,
            });
            continue;
        };
        fill_polygon(&mut mask, &polygon, region.class_id, &mut toggles);
    }
    (mask, skipped)
}

fn fill_polygon(mask: &mut LabelMask, polygon: &Polygon, class: u8, toggles: &mut [bool]) {
    let (width, height) = mask.dimensions();
    let pts = polygon.points();
    let (ymin, ymax) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    let row_start = ((ymin - 0.5).floor().max(0.0)) as u32;
    let row_end = ((ymax + 0.5).ceil().max(0.0) as u32).min(height);
    let w = width as usize;

    for y in row_start..row_end {
        let cy = f64::from(y) + 0.5;
        toggles.iter_mut().for_each(|t| *t = false);
        let mut any = false;
        for i in 0..pts.len() {
            let a = pts[i];
            let b = pts[(i + 1) % pts.len()];
            if !crosses_row(a, b, cy) {
                continue;
            }
            // Pixels x < t have their center left of this crossing.
            let t = first_column_not_left(a, b, cy, width);
            if t > 0 {
                toggles[0] ^= true;
                toggles[t] ^= true;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let row = &mut mask.values_mut()[y as usize * w..(y as usize + 1) * w];
        let mut parity = false;
        for (x, px) in row.iter_mut().enumerate() {
            parity ^= toggles[x];
            if parity {
                *px = class;
            }
        }
    }
}

fn first_column_not_left(a: (f64, f64), b: (f64, f64), cy: f64, width: u32) -> usize {
    let w = width as usize;
    let xint = a.0 + (cy - a.1) * (b.0 - a.0) / (b.1 - a.1);
    let guess = (xint - 0.5).ceil();
    let mut t = if guess <= 0.0 {
        0
    } else if guess >= w as f64 {
        w
    } else {
        guess as usize
    };
    let left = |x: usize| left_of_crossing(a, b, x as f64 + 0.5, cy);
    while t > 0 && !left(t - 1) {
        t -= 1;
    }
    while t < w && left(t) {
        t += 1;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(points: &[(f64, f64)], class_id: u8) -> RegionAnnotation {
        RegionAnnotation {
            polygon: Polygon::new(points.to_vec()).unwrap(),
            class_id,
        }
    }

    #[test]
    fn empty_region_list_is_all_background() {
        let m = rasterize(&[], 4, 4);
        assert!(m.values().iter().all(|&v| v == 0));
        assert_eq!(m.dimensions(), (4, 4));
    }

    #[test]
    fn left_column_polygon() {
        // centers (0.5,0.5) and (0.5,1.5) fall inside x in [0,1)
        let r = region(&[(0.0, 0.0), (1.0, 0.0), (1.0, 2.0), (0.0, 2.0)], 3);
        let m = rasterize(&[r], 2, 2);
        assert_eq!(m.values(), &[3, 0, 3, 0]);
    }

    #[test]
    fn later_region_wins() {
        let full = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        let m = rasterize(&[region(&full, 1), region(&full, 2)], 4, 4);
        assert!(m.values().iter().all(|&v| v == 2));
    }

    #[test]
    fn top_left_edges_inclusive() {
        // Square [0.5,1.5]^2 has pixel center (0.5,0.5) on its top-left corner
        // and (1.5,1.5) on its bottom-right corner.
        let sq = Polygon::new(vec![(0.5, 0.5), (1.5, 0.5), (1.5, 1.5), (0.5, 1.5)]).unwrap();
        assert!(point_in_polygon(&sq, 0.5, 0.5));
        assert!(point_in_polygon(&sq, 0.5, 1.0));
        assert!(!point_in_polygon(&sq, 1.5, 1.0));
        assert!(!point_in_polygon(&sq, 1.0, 1.5));
        let m = rasterize(
            &[RegionAnnotation {
                polygon: sq,
                class_id: 1,
            }],
            3,
            3,
        );
        assert_eq!(m.values(), &[1, 0, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn degenerate_region_skipped() {
        let line = region(&[(0.0, 0.0), (2.0, 2.0), (4.0, 4.0)], 5);
        let outside = region(&[(10.0, 10.0), (12.0, 10.0), (12.0, 12.0)], 6);
        let (m, skipped) = rasterize_with_warnings(&[line, outside], 4, 4);
        assert!(m.values().iter().all(|&v| v == 0));
        assert_eq!(skipped.len(), 2);
        assert_eq!(skipped[0].index, 0);
    }

    #[test]
    fn polygon_partly_outside_is_clipped() {
        let r = region(&[(2.0, -0.0), (9.0, 0.0), (9.0, 9.0), (2.0, 9.0)], 1);
        let m = rasterize(&[r], 4, 4);
        for y in 0..4 {
            assert_eq!(
                (0..4).map(|x| m.get(x, y)).collect::<Vec<_>>(),
                [0, 0, 1, 1]
            );
        }
    }
}
