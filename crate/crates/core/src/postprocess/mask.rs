//! Thresholding, connected-component area filtering and mask union.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::BinaryMask;

use super::similarity::{MapKind, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

/// Strict comparison: a value equal to the threshold stays normal.
pub fn binarize_with(m: &SimilarityMatrix, threshold: f64) -> BinaryMask {
    let data = m
        .values
        .iter()
        .map(|&v| match m.kind {
            MapKind::Difference => v > threshold,
            MapKind::Similarity => v < threshold,
        })
        .collect();
    BinaryMask::new(m.height, m.width, data).expect("map dims are consistent")
}

/// Bounding box in pixel coordinates, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub area: usize,
    pub bbox: BoundingBox,
}

/// Labels connected components; returns per-pixel labels (0 = background,
/// components numbered from 1 in raster order of their first pixel) and their stats.
pub fn label_components(mask: &BinaryMask, conn: Connectivity) -> (Vec<usize>, Vec<Component>) {
    let (h, w) = mask.dims();
    let mut labels = vec![0usize; h * w];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        let id = comps.len() + 1;
        labels[start] = id;
        stack.push(start);
        let mut c = Component {
            area: 0,
            bbox: BoundingBox {
                x_min: usize::MAX,
                y_min: usize::MAX,
                x_max: 0,
                y_max: 0,
            },
        };
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            c.area += 1;
            c.bbox.x_min = c.bbox.x_min.min(x);
            c.bbox.y_min = c.bbox.y_min.min(y);
            c.bbox.x_max = c.bbox.x_max.max(x);
            c.bbox.y_max = c.bbox.y_max.max(y);
            for &(dy, dx) in conn.offsets() {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.data()[j] && labels[j] == 0 {
                    labels[j] = id;
                    stack.push(j);
                }
            }
        }
        comps.push(c);
    }
    (labels, comps)
}

/// Drops connected components with fewer than `min_area` pixels.
pub fn denoise_with(mask: &BinaryMask, min_area: usize, conn: Connectivity) -> BinaryMask {
    let (labels, comps) = label_components(mask, conn);
    let data = labels.iter().map(|&l| l != 0 && comps[l - 1].area >= min_area).collect();
    BinaryMask::new(mask.height(), mask.width(), data).expect("same dims")
}

pub fn union_masks(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.ensure_same_dims(b)?;
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| p || q).collect();
    BinaryMask::new(a.height(), a.width(), data)
}

/// Intersection over union; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (mut inter, mut uni) = (0usize, 0usize);
    for (&p, &q) in a.data().iter().zip(b.data()) {
        inter += (p && q) as usize;
        uni += (p || q) as usize;
    }
    Ok(if uni == 0 { 1.0 } else { inter as f64 / uni as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(h: usize, w: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(h, w);
        for &(y, x) in on {
            m.set(y, x, true);
        }
        m
    }

    #[test]
    fn strict_thresholds() {
        let ms = SimilarityMatrix {
            height: 1,
            width: 3,
            values: vec![0.0, 0.5, 0.6],
            kind: MapKind::Difference,
        };
        assert_eq!(binarize_with(&ms, 0.5).data(), &[false, false, true]);
        let ss = SimilarityMatrix {
            kind: MapKind::Similarity,
            ..ms
        };
        assert_eq!(binarize_with(&ss, 0.5).data(), &[true, false, false]);
    }

    #[test]
    fn denoise_examples() {
        let small = mask_with(10, 10, &[(1, 1), (1, 2), (2, 2)]);
        assert!(denoise_with(&small, 16, Connectivity::Eight).is_empty());
        let mut big = BinaryMask::empty(20, 20);
        for y in 5..15 {
            for x in 5..15 {
                big.set(y, x, true);
            }
        }
        assert_eq!(denoise_with(&big, 16, Connectivity::Eight), big);
    }

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let m = mask_with(3, 3, &[(0, 0), (1, 1), (2, 2)]);
        assert_eq!(label_components(&m, Connectivity::Eight).1.len(), 1);
        assert_eq!(label_components(&m, Connectivity::Four).1.len(), 3);
        let (_, c) = label_components(&m, Connectivity::Eight);
        assert_eq!(
            c[0].bbox,
            BoundingBox {
                x_min: 0,
                y_min: 0,
                x_max: 2,
                y_max: 2
            }
        );
    }

    #[test]
    fn union_and_iou() {
        let a = mask_with(4, 4, &[(0, 0), (1, 1)]);
        let b = mask_with(4, 4, &[(1, 1), (3, 3)]);
        let u = union_masks(&a, &b).unwrap();
        assert_eq!(u.area(), 3);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(union_masks(&a, &BinaryMask::empty(3, 4)).is_err());
    }
}
