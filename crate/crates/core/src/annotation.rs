//! Ground-truth instance records.

use crate::geom::{pixel_center, ImageSpec, Rect};
use crate::mask::BinaryMask;

/// One annotated object: category, box, and full-resolution binary mask.
#[derive(Debug, Clone)]
pub struct InstanceAnnotation {
    pub category_id: u32,
    pub bbox: Rect,
    pub mask: BinaryMask,
    /// Stable order from the annotation file.
    pub source_index: u32,
}

impl InstanceAnnotation {
    /// Builds the record and checks that every set mask pixel's center lies
    /// inside the box expanded by one pixel. Violations are logged, not
    /// fatal — annotation noise is common.
    pub fn new(
        category_id: u32,
        bbox: Rect,
        mask: BinaryMask,
        source_index: u32,
        image: ImageSpec,
    ) -> Self {
        debug_assert_eq!(mask.width(), image.width);
        debug_assert_eq!(mask.height(), image.height);
        let tol = Rect {
            left: bbox.left - 1.0,
            top: bbox.top - 1.0,
            right: bbox.right + 1.0,
            bottom: bbox.bottom + 1.0,
        };
        let stray = mask
            .iter_set()
            .filter(|&(x, y)| !tol.contains(pixel_center(x, y, 1)))
            .count();
        if stray > 0 {
            log::warn!(
                "annotation {source_index}: {stray} mask pixel(s) outside bbox (+1px tolerance)"
            );
        }
        InstanceAnnotation {
            category_id,
            bbox,
            mask,
            source_index,
        }
    }

    pub fn mask_area(&self) -> usize {
        self.mask.area()
    }
}
