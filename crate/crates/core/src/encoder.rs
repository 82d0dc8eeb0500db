//! Ground-truth side of the representation: turn grouped instances into
//! per-anchor orientation maps and label grids.
//!
//! For one anchor's map, a pixel is:
//!
//! * **Positive** when covered by a group instance's mask. Its target vector
//!   points at that instance's base position (the box centroid): `o* = b - p`.
//! * **Negative** when uncovered but inside at least one instance's expanded
//!   valid area. Its target points centrifugally at the area border:
//!   `o* = (alpha - 1)(p - b)`, averaged over all covering areas.
//! * **Ignore** otherwise; ignored pixels carry a zero vector and contribute
//!   nothing to the loss.

use crate::annotation::InstanceAnnotation;
use crate::field::OrientationMap;
use crate::geom::{centroid, pixel_center, ImageSpec, Rect, Vec2};
use crate::grouping::{AnchorSet, GroupedInstances};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("expand ratio must be >= 1.0, got {0}")]
    InvalidRatio(f64),
    #[error("valid area degenerate after clipping (box [{0:.2}, {1:.2}, {2:.2}, {3:.2}])")]
    DegenerateArea(f64, f64, f64, f64),
    #[error("label grid parts do not match {width}x{height}: {labels} labels, {coverage} coverage entries")]
    BadGridShape {
        width: u32,
        height: u32,
        labels: usize,
        coverage: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Valid-area expansion ratio `r`.
    pub expand_ratio: f64,
    /// Intersect expanded areas with the image rectangle.
    pub clip_to_image: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            expand_ratio: 1.2,
            clip_to_image: true,
        }
    }
}

/// Per-pixel supervision label. Positives carry the owning instance's
/// `source_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Ignore,
    Negative,
    Positive(u32),
}

/// Full-resolution grid of labels plus, for negatives, the number of valid
/// areas covering the pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    width: u32,
    height: u32,
    labels: Vec<Label>,
    coverage: Vec<u32>,
}

impl LabelGrid {
    /// Assemble a grid from raw parts; lengths must match the dimensions.
    pub fn from_parts(
        width: u32,
        height: u32,
        labels: Vec<Label>,
        coverage: Vec<u32>,
    ) -> Result<Self, EncoderError> {
        let n = width as usize * height as usize;
        if labels.len() != n || coverage.len() != n {
            return Err(EncoderError::BadGridShape {
                width,
                height,
                labels: labels.len(),
                coverage: coverage.len(),
            });
        }
        Ok(LabelGrid {
            width,
            height,
            labels,
            coverage,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn label(&self, x: u32, y: u32) -> Label {
        self.labels[self.index(x, y)]
    }

    /// Number of valid areas covering a Negative pixel; zero elsewhere.
    #[inline]
    pub fn coverage_count(&self, x: u32, y: u32) -> u32 {
        self.coverage[self.index(x, y)]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn count(&self, of: fn(Label) -> bool) -> usize {
        self.labels.iter().filter(|&&l| of(l)).count()
    }
}

/// One anchor's ground truth: orientation map, labels, and sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBundle {
    pub anchor_index: usize,
    pub orientation: OrientationMap,
    pub labels: LabelGrid,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_inst: usize,
}

/// Scale a box about its centroid by `r` per side, optionally clipping to the
/// image. A degenerate clipped result rejects the instance.
pub fn expand_valid_area(
    box_: &Rect,
    r: f64,
    image: ImageSpec,
    clip: bool,
) -> Result<Rect, EncoderError> {
    if !(r >= 1.0) {
        return Err(EncoderError::InvalidRatio(r));
    }
    let c = centroid(box_);
    let hw = box_.width() * r / 2.0;
    let hh = box_.height() * r / 2.0;
    let area = Rect {
        left: c.x - hw,
        top: c.y - hh,
        right: c.x + hw,
        bottom: c.y + hh,
    };
    if !clip {
        return Ok(area);
    }
    area.intersect(&image.rect()).ok_or(EncoderError::DegenerateArea(
        box_.left,
        box_.top,
        box_.right,
        box_.bottom,
    ))
}

/// Ray-scaling factor placing `b + alpha * (p - b)` on the border of `area`.
///
/// `alpha` is the reciprocal of the largest of the four border ratios; ratios
/// against a zero-length side (base position on the border) are skipped.
/// Returns `None` when the ray is undefined (`p == b`).
pub fn compute_alpha(p: Vec2, b: Vec2, area: &Rect) -> Option<f64> {
    let dx = p.x - b.x;
    let dy = p.y - b.y;
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    let mut max_ratio = f64::NEG_INFINITY;
    let mut consider = |num: f64, den: f64| {
        if den != 0.0 {
            let r = num / den;
            if r > max_ratio {
                max_ratio = r;
            }
        }
    };
    consider(dx, area.left - b.x);
    consider(dx, area.right - b.x);
    consider(dy, area.top - b.y);
    consider(dy, area.bottom - b.y);
    if max_ratio <= 0.0 {
        return None;
    }
    Some(1.0 / max_ratio)
}

struct PreparedInstance {
    slice_index: usize,
    source_index: u32,
    area: Rect,
    base: Vec2,
    mask_area: usize,
}

/// Encode every anchor's ground truth for one image. Returns one bundle per
/// anchor index, in anchor order, deterministically.
pub fn encode_targets(
    instances: &[InstanceAnnotation],
    groups: &GroupedInstances,
    anchors: &AnchorSet,
    image: ImageSpec,
    cfg: &EncoderConfig,
) -> Vec<TargetBundle> {
    (0..anchors.len())
        .into_par_iter()
        .map(|anchor_index| encode_bundle(instances, groups.group(anchor_index), anchor_index, image, cfg))
        .collect()
}

fn encode_bundle(
    instances: &[InstanceAnnotation],
    members: &[usize],
    anchor_index: usize,
    image: ImageSpec,
    cfg: &EncoderConfig,
) -> TargetBundle {
    let (w, h) = (image.width, image.height);
    let npix = image.num_pixels();

    // Resolve valid areas and base positions; instances whose area clips away
    // are rejected with a diagnostic.
    let mut prepared: Vec<PreparedInstance> = Vec::with_capacity(members.len());
    for &i in members {
        let inst = &instances[i];
        let area = match expand_valid_area(&inst.bbox, cfg.expand_ratio, image, cfg.clip_to_image) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("instance {} rejected from anchor {anchor_index}: {e}", inst.source_index);
                continue;
            }
        };
        let mut base = centroid(&inst.bbox);
        if !area.contains_strict(base) {
            // Only possible after clipping; fall back to the clipped-area center.
            let recentered = centroid(&area);
            log::warn!(
                "instance {}: centroid ({:.2}, {:.2}) outside clipped valid area, recentered to ({:.2}, {:.2})",
                inst.source_index, base.x, base.y, recentered.x, recentered.y
            );
            base = recentered;
        }
        prepared.push(PreparedInstance {
            slice_index: i,
            source_index: inst.source_index,
            area,
            base,
            mask_area: inst.mask_area(),
        });
    }

    // Positive ownership: smaller mask area wins, ties to lower source_index.
    // The rule is order-free, so iteration order does not matter here.
    let mut owner: Vec<i32> = vec![-1; npix];
    for (k, prep) in prepared.iter().enumerate() {
        let mask = &instances[prep.slice_index].mask;
        for (x, y) in mask.iter_set() {
            let idx = y as usize * w as usize + x as usize;
            let cur = owner[idx];
            if cur < 0 {
                owner[idx] = k as i32;
            } else {
                let other = &prepared[cur as usize];
                if (prep.mask_area, prep.source_index) < (other.mask_area, other.source_index) {
                    owner[idx] = k as i32;
                }
            }
        }
    }

    // Negative accumulation in source_index order so float sums are
    // reproducible regardless of worker count.
    let mut neg_sum: Vec<Vec2> = vec![Vec2::ZERO; npix];
    let mut coverage: Vec<u32> = vec![0; npix];
    let mut forced_ignore: Vec<bool> = vec![false; npix];
    for prep in &prepared {
        let (x0, x1) = pixel_range(prep.area.left, prep.area.right, w);
        let (y0, y1) = pixel_range(prep.area.top, prep.area.bottom, h);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let idx = y as usize * w as usize + x as usize;
                if owner[idx] >= 0 {
                    continue;
                }
                let p = pixel_center(x, y, 1);
                let d = p - prep.base;
                if d.norm() < 0.5 {
                    // Too close to the base position for the ray to mean
                    // anything at decode time; drop from supervision.
                    forced_ignore[idx] = true;
                    continue;
                }
                match compute_alpha(p, prep.base, &prep.area) {
                    Some(alpha) => {
                        let contrib = d * (alpha - 1.0);
                        neg_sum[idx] = neg_sum[idx] + contrib;
                        coverage[idx] += 1;
                    }
                    None => forced_ignore[idx] = true,
                }
            }
        }
    }

    // Final resolution: Positive > forced Ignore > Negative > Ignore.
    let mut orientation = OrientationMap::zeros(w, h, 1, anchor_index);
    let mut labels = vec![Label::Ignore; npix];
    let mut n_pos = 0usize;
    let mut n_neg = 0usize;
    let data = orientation.data_mut();
    for y in 0..h {
        for x in 0..w {
            let idx = y as usize * w as usize + x as usize;
            if owner[idx] >= 0 {
                let prep = &prepared[owner[idx] as usize];
                let p = pixel_center(x, y, 1);
                let o = prep.base - p;
                data[idx * 2] = o.x;
                data[idx * 2 + 1] = o.y;
                labels[idx] = Label::Positive(prep.source_index);
                coverage[idx] = 0;
                n_pos += 1;
            } else if forced_ignore[idx] {
                labels[idx] = Label::Ignore;
                coverage[idx] = 0;
            } else if coverage[idx] > 0 {
                let o = neg_sum[idx] * (1.0 / coverage[idx] as f64);
                data[idx * 2] = o.x;
                data[idx * 2 + 1] = o.y;
                labels[idx] = Label::Negative;
                n_neg += 1;
            }
        }
    }

    TargetBundle {
        anchor_index,
        orientation,
        labels: LabelGrid {
            width: w,
            height: h,
            labels,
            coverage,
        },
        n_pos,
        n_neg,
        n_inst: prepared.len(),
    }
}

/// Inclusive pixel index range whose centers fall inside `[lo, hi]`, clamped
/// to the image. Returns an empty range as `(1, 0)` when nothing qualifies.
fn pixel_range(lo: f64, hi: f64, dim: u32) -> (u32, u32) {
    let first = (lo - 0.5).ceil().max(0.0) as i64;
    let last = (hi - 0.5).floor().min(dim as f64 - 1.0) as i64;
    if first > last {
        (1, 0)
    } else {
        (first as u32, last as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::group_instances;
    use crate::mask::BinaryMask;

    fn rect_instance(
        bbox: Rect,
        category: u32,
        source_index: u32,
        image: ImageSpec,
    ) -> InstanceAnnotation {
        let mut mask = BinaryMask::new(image.width, image.height);
        for y in 0..image.height {
            for x in 0..image.width {
                if bbox.contains(pixel_center(x, y, 1))
                    && pixel_center(x, y, 1).x < bbox.right
                    && pixel_center(x, y, 1).y < bbox.bottom
                {
                    mask.set(x, y, true);
                }
            }
        }
        InstanceAnnotation::new(category, bbox, mask, source_index, image)
    }

    /// Independent check that a point sits on the border of a rect.
    fn distance_to_border(p: Vec2, r: &Rect) -> f64 {
        let dl = (p.x - r.left).abs();
        let dr = (p.x - r.right).abs();
        let dt = (p.y - r.top).abs();
        let db = (p.y - r.bottom).abs();
        let inside_x = p.x >= r.left - 1e-9 && p.x <= r.right + 1e-9;
        let inside_y = p.y >= r.top - 1e-9 && p.y <= r.bottom + 1e-9;
        if !(inside_x && inside_y) {
            return f64::INFINITY;
        }
        dl.min(dr).min(dt).min(db)
    }

    #[test]
    fn expand_examples() {
        let image = ImageSpec::new(100, 100).unwrap();
        let b = Rect::new(10.0, 10.0, 30.0, 30.0).unwrap();
        let a = expand_valid_area(&b, 1.2, image, false).unwrap();
        assert_eq!((a.left, a.top, a.right, a.bottom), (8.0, 8.0, 32.0, 32.0));

        let a = expand_valid_area(&b, 1.0, image, false).unwrap();
        assert_eq!(a, b);

        let corner = Rect::new(0.0, 0.0, 20.0, 20.0).unwrap();
        let a = expand_valid_area(&corner, 1.2, image, true).unwrap();
        assert_eq!((a.left, a.top, a.right, a.bottom), (0.0, 0.0, 22.0, 22.0));

        let outside = Rect::new(-50.0, -50.0, -10.0, -10.0).unwrap();
        assert!(expand_valid_area(&outside, 1.2, image, true).is_err());
        assert!(expand_valid_area(&b, 0.8, image, false).is_err());
    }

    #[test]
    fn alpha_axis_ray() {
        let area = Rect::new(0.0, 0.0, 20.0, 20.0).unwrap();
        let b = Vec2::new(10.0, 10.0);
        let p = Vec2::new(15.0, 10.0);
        let alpha = compute_alpha(p, b, &area).unwrap();
        assert!((alpha - 2.0).abs() < 1e-12);
        let o = (p - b) * (alpha - 1.0);
        assert_eq!(o, Vec2::new(5.0, 0.0));
        let dest = p + o;
        assert!(distance_to_border(dest, &area) < 1e-9);
        assert_eq!(dest, Vec2::new(20.0, 10.0));
    }

    #[test]
    fn alpha_on_border_is_one() {
        let area = Rect::new(0.0, 0.0, 20.0, 20.0).unwrap();
        let b = Vec2::new(10.0, 10.0);
        let p = Vec2::new(20.0, 10.0);
        let alpha = compute_alpha(p, b, &area).unwrap();
        assert!((alpha - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_diagonal_ray() {
        let area = Rect::new(0.0, 0.0, 20.0, 20.0).unwrap();
        let b = Vec2::new(10.0, 10.0);
        let p = Vec2::new(14.0, 18.0);
        let alpha = compute_alpha(p, b, &area).unwrap();
        assert!((alpha - 1.25).abs() < 1e-12);
        let o = (p - b) * (alpha - 1.0);
        assert!((o.x - 1.0).abs() < 1e-12 && (o.y - 2.0).abs() < 1e-12);
        let dest = p + o;
        assert!((dest.x - 15.0).abs() < 1e-9 && (dest.y - 20.0).abs() < 1e-9);
        assert!(distance_to_border(dest, &area) < 1e-9);
    }

    #[test]
    fn alpha_skips_zero_length_side() {
        // base position on the left border: the left ratio divides by zero
        // and must be excluded from the max
        let area = Rect::new(0.0, 0.0, 20.0, 20.0).unwrap();
        let b = Vec2::new(0.0, 10.0);
        let p = Vec2::new(5.0, 10.0);
        let alpha = compute_alpha(p, b, &area).unwrap();
        assert!((alpha - 4.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_undefined_at_base() {
        let area = Rect::new(0.0, 0.0, 20.0, 20.0).unwrap();
        let b = Vec2::new(10.0, 10.0);
        assert!(compute_alpha(b, b, &area).is_none());
    }

    #[test]
    fn positives_point_at_centroid_exactly() {
        let image = ImageSpec::new(32, 32).unwrap();
        let anchors = AnchorSet::default();
        let inst = rect_instance(Rect::new(14.0, 14.0, 18.0, 18.0).unwrap(), 1, 0, image);
        assert_eq!(inst.mask_area(), 16);
        let b = centroid(&inst.bbox);
        let instances = vec![inst];
        let groups = group_instances(&instances, &anchors);
        let bundles = encode_targets(&instances, &groups, &anchors, image, &EncoderConfig::default());
        let bundle = bundles.iter().find(|t| t.n_pos > 0).unwrap();
        assert_eq!(bundle.n_pos, 16);
        assert_eq!(bundle.n_inst, 1);
        for y in 0..32 {
            for x in 0..32 {
                if let Label::Positive(_) = bundle.labels.label(x, y) {
                    let p = pixel_center(x, y, 1);
                    let dest = p + bundle.orientation.get(x, y);
                    assert_eq!(dest, b, "positive at ({x},{y}) must land on the centroid");
                }
            }
        }
    }

    #[test]
    fn negatives_point_at_area_border() {
        let image = ImageSpec::new(32, 32).unwrap();
        let anchors = AnchorSet::default();
        let cfg = EncoderConfig::default();
        let inst = rect_instance(Rect::new(10.0, 10.0, 22.0, 22.0).unwrap(), 1, 0, image);
        let area = expand_valid_area(&inst.bbox, cfg.expand_ratio, image, true).unwrap();
        let instances = vec![inst];
        let groups = group_instances(&instances, &anchors);
        let bundles = encode_targets(&instances, &groups, &anchors, image, &cfg);
        let bundle = bundles.iter().find(|t| t.n_pos > 0).unwrap();
        assert!(bundle.n_neg > 0, "fixture must produce negative samples");
        let mut checked = 0;
        for y in 0..32 {
            for x in 0..32 {
                if bundle.labels.label(x, y) == Label::Negative {
                    assert_eq!(bundle.labels.coverage_count(x, y), 1);
                    let p = pixel_center(x, y, 1);
                    let dest = p + bundle.orientation.get(x, y);
                    assert!(
                        distance_to_border(dest, &area) < 1e-6,
                        "negative at ({x},{y}) lands at ({}, {}), off the border",
                        dest.x,
                        dest.y
                    );
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, bundle.n_neg);
    }

    #[test]
    fn counts_partition_the_image() {
        let image = ImageSpec::new(64, 64).unwrap();
        let anchors = AnchorSet::default();
        let instances = vec![
            rect_instance(Rect::new(4.0, 4.0, 20.0, 30.0).unwrap(), 1, 0, image),
            rect_instance(Rect::new(30.0, 20.0, 60.0, 50.0).unwrap(), 2, 1, image),
        ];
        let groups = group_instances(&instances, &anchors);
        let bundles = encode_targets(&instances, &groups, &anchors, image, &EncoderConfig::default());
        for bundle in &bundles {
            let ignore = bundle.labels.count(|l| l == Label::Ignore);
            assert_eq!(bundle.n_pos + bundle.n_neg + ignore, image.num_pixels());
            // ignore pixels carry zero vectors
            for y in 0..image.height {
                for x in 0..image.width {
                    if bundle.labels.label(x, y) == Label::Ignore {
                        assert_eq!(bundle.orientation.get(x, y), Vec2::ZERO);
                    }
                }
            }
        }
    }

    #[test]
    fn groups_do_not_cross_contaminate() {
        let image = ImageSpec::new(128, 128).unwrap();
        let anchors = AnchorSet::default();
        // distinctly sized boxes so they match different anchors
        let a = rect_instance(Rect::new(8.0, 8.0, 24.0, 28.0).unwrap(), 1, 0, image);
        let b = rect_instance(Rect::new(40.0, 30.0, 110.0, 110.0).unwrap(), 2, 1, image);
        let ia = crate::grouping::match_anchor(&a.bbox, &anchors);
        let ib = crate::grouping::match_anchor(&b.bbox, &anchors);
        assert_ne!(ia, ib);
        let instances = vec![a, b];
        let groups = group_instances(&instances, &anchors);
        let bundles = encode_targets(&instances, &groups, &anchors, image, &EncoderConfig::default());
        let mut contamination = 0;
        for (idx, bundle) in bundles.iter().enumerate() {
            for y in 0..image.height {
                for x in 0..image.width {
                    if let Label::Positive(src) = bundle.labels.label(x, y) {
                        let expect = if src == 0 { ia } else { ib };
                        if idx != expect {
                            contamination += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(contamination, 0);
        assert_eq!(bundles[ia].n_pos, instances[0].mask_area());
        assert_eq!(bundles[ib].n_pos, instances[1].mask_area());
    }

    #[test]
    fn positive_conflict_smaller_mask_wins() {
        let image = ImageSpec::new(64, 64).unwrap();
        // same anchor: two nested boxes of similar aspect, big one first
        let anchors = AnchorSet::default();
        let big = rect_instance(Rect::new(10.0, 10.0, 40.0, 40.0).unwrap(), 1, 0, image);
        let small = rect_instance(Rect::new(13.0, 13.0, 39.0, 39.0).unwrap(), 2, 1, image);
        assert_eq!(
            crate::grouping::match_anchor(&big.bbox, &anchors),
            crate::grouping::match_anchor(&small.bbox, &anchors)
        );
        let instances = vec![big, small];
        let groups = group_instances(&instances, &anchors);
        let bundles = encode_targets(&instances, &groups, &anchors, image, &EncoderConfig::default());
        let bundle = bundles.iter().find(|t| t.n_pos > 0).unwrap();
        // every pixel of the small mask is owned by the small instance
        for (x, y) in instances[1].mask.iter_set() {
            assert_eq!(bundle.labels.label(x, y), Label::Positive(1));
        }
        assert_eq!(bundle.n_inst, 2);
    }

    #[test]
    fn encoding_is_deterministic() {
        let image = ImageSpec::new(96, 96).unwrap();
        let anchors = AnchorSet::default();
        let instances = vec![
            rect_instance(Rect::new(4.0, 4.0, 20.0, 30.0).unwrap(), 1, 0, image),
            rect_instance(Rect::new(30.0, 20.0, 60.0, 50.0).unwrap(), 2, 1, image),
            rect_instance(Rect::new(50.0, 60.0, 90.0, 90.0).unwrap(), 3, 2, image),
        ];
        let groups = group_instances(&instances, &anchors);
        let cfg = EncoderConfig::default();
        let a = encode_targets(&instances, &groups, &anchors, image, &cfg);
        let b = encode_targets(&instances, &groups, &anchors, image, &cfg);
        assert_eq!(a, b);
    }
}
