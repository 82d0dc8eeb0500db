//! Anchor priors and the instance grouping mechanism.
//!
//! Each instance is matched to exactly one anchor prior by concentric IoU,
//! and every orientation map carries only the instances matched to its
//! anchor. Matching uses only the box dimensions, so it is invariant to
//! translation by construction.

use crate::annotation::InstanceAnnotation;
use crate::geom::Rect;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GroupingError {
    #[error("anchor table has {got} priors, expected {expected} ({aps} per scale x {scales} scales)")]
    BadTableShape {
        got: usize,
        expected: usize,
        aps: usize,
        scales: usize,
    },
    #[error("anchor priors must have positive dimensions")]
    NonPositivePrior,
}

/// One anchor prior: a template box size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub width: f64,
    pub height: f64,
}

impl Anchor {
    pub fn new(width: f64, height: f64) -> Self {
        Anchor { width, height }
    }
}

/// Ordered anchor prior table, `anchors_per_scale` priors per scale.
///
/// Anchor index `i` belongs to scale `i / anchors_per_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    priors: Vec<Anchor>,
    anchors_per_scale: usize,
    num_scales: usize,
}

/// The canonical 9-prior COCO table. A config default only — the paper's
/// method just requires that a prior table exist; it is fully overridable.
pub const DEFAULT_PRIORS: [(f64, f64); 9] = [
    (10.0, 13.0),
    (16.0, 30.0),
    (33.0, 23.0),
    (30.0, 61.0),
    (62.0, 45.0),
    (59.0, 119.0),
    (116.0, 90.0),
    (156.0, 198.0),
    (373.0, 326.0),
];

impl AnchorSet {
    pub fn new(
        priors: Vec<Anchor>,
        anchors_per_scale: usize,
        num_scales: usize,
    ) -> Result<Self, GroupingError> {
        if anchors_per_scale == 0 || priors.len() != anchors_per_scale * num_scales {
            return Err(GroupingError::BadTableShape {
                got: priors.len(),
                expected: anchors_per_scale * num_scales,
                aps: anchors_per_scale,
                scales: num_scales,
            });
        }
        if priors.iter().any(|a| !(a.width > 0.0 && a.height > 0.0)) {
            return Err(GroupingError::NonPositivePrior);
        }
        Ok(AnchorSet {
            priors,
            anchors_per_scale,
            num_scales,
        })
    }

    pub fn priors(&self) -> &[Anchor] {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn anchor(&self, index: usize) -> Anchor {
        self.priors[index]
    }

    pub fn anchors_per_scale(&self) -> usize {
        self.anchors_per_scale
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn scale_of(&self, anchor_index: usize) -> usize {
        anchor_index / self.anchors_per_scale
    }
}

impl Default for AnchorSet {
    fn default() -> Self {
        AnchorSet::new(
            DEFAULT_PRIORS.iter().map(|&(w, h)| Anchor::new(w, h)).collect(),
            3,
            3,
        )
        .expect("default table is well formed")
    }
}

/// IoU of two boxes placed concentric, which depends only on their sizes.
fn concentric_iou(w1: f64, h1: f64, w2: f64, h2: f64) -> f64 {
    let inter = w1.min(w2) * h1.min(h2);
    let union = w1 * h1 + w2 * h2 - inter;
    inter / union
}

/// Index of the prior with the highest concentric IoU against the box.
/// Ties break to the lowest index.
pub fn match_anchor(box_: &Rect, anchors: &AnchorSet) -> usize {
    let (w, h) = (box_.width(), box_.height());
    let mut best = 0usize;
    let mut best_iou = f64::NEG_INFINITY;
    for (i, a) in anchors.priors().iter().enumerate() {
        let iou = concentric_iou(w, h, a.width, a.height);
        if iou > best_iou {
            best_iou = iou;
            best = i;
        }
    }
    best
}

/// Instances partitioned by matched anchor index.
///
/// Groups hold indices into the caller's instance slice; per-group order
/// preserves the slice order (and therefore `source_index` order when the
/// slice is sorted by it, as loaders guarantee).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedInstances {
    groups: Vec<Vec<usize>>,
}

impl GroupedInstances {
    pub fn group(&self, anchor_index: usize) -> &[usize] {
        &self.groups[anchor_index]
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn total_instances(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.groups.iter().enumerate().map(|(i, g)| (i, g.as_slice()))
    }
}

/// Partition instances by best-IoU anchor. Groups may be empty.
pub fn group_instances(
    instances: &[InstanceAnnotation],
    anchors: &AnchorSet,
) -> GroupedInstances {
    let mut groups = vec![Vec::new(); anchors.len()];
    for (i, inst) in instances.iter().enumerate() {
        groups[match_anchor(&inst.bbox, anchors)].push(i);
    }
    GroupedInstances { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{ImageSpec, Rect};
    use crate::mask::BinaryMask;

    /// Brute-force oracle: place each prior concentric with the box and take
    /// the plain rect IoU.
    fn oracle_match(box_: &Rect, anchors: &AnchorSet) -> usize {
        let c = crate::geom::centroid(box_);
        let mut best = 0;
        let mut best_iou = f64::NEG_INFINITY;
        for (i, a) in anchors.priors().iter().enumerate() {
            let prior = Rect::new(
                c.x - a.width / 2.0,
                c.y - a.height / 2.0,
                c.x + a.width / 2.0,
                c.y + a.height / 2.0,
            )
            .unwrap();
            let iou = crate::geom::rect_iou(box_, &prior);
            if iou > best_iou {
                best_iou = iou;
                best = i;
            }
        }
        best
    }

    fn dummy_instance(bbox: Rect, source_index: u32, image: ImageSpec) -> InstanceAnnotation {
        let mut mask = BinaryMask::new(image.width, image.height);
        // a single pixel near the box centroid keeps the record valid
        let c = crate::geom::centroid(&bbox);
        mask.set(c.x as u32, c.y as u32, true);
        InstanceAnnotation::new(1, bbox, mask, source_index, image)
    }

    #[test]
    fn matches_20x20_box_to_16x30_prior() {
        let anchors = AnchorSet::default();
        let box_ = Rect::new(100.0, 100.0, 120.0, 120.0).unwrap();
        assert_eq!(match_anchor(&box_, &anchors), 1);
        assert_eq!(oracle_match(&box_, &anchors), 1);
    }

    #[test]
    fn exact_prior_dims_win() {
        let anchors = AnchorSet::default();
        for (i, a) in anchors.priors().iter().enumerate() {
            let box_ = Rect::new(0.0, 0.0, a.width, a.height).unwrap();
            assert_eq!(match_anchor(&box_, &anchors), i);
        }
    }

    #[test]
    fn duplicate_priors_tie_break_to_lower_index() {
        let anchors = AnchorSet::new(
            vec![
                Anchor::new(20.0, 20.0),
                Anchor::new(20.0, 20.0),
                Anchor::new(50.0, 50.0),
            ],
            3,
            1,
        )
        .unwrap();
        let box_ = Rect::new(0.0, 0.0, 20.0, 20.0).unwrap();
        assert_eq!(match_anchor(&box_, &anchors), 0);
    }

    #[test]
    fn match_is_translation_invariant() {
        let anchors = AnchorSet::default();
        let a = Rect::new(0.0, 0.0, 40.0, 70.0).unwrap();
        let b = Rect::new(300.0, 150.0, 340.0, 220.0).unwrap();
        assert_eq!(match_anchor(&a, &anchors), match_anchor(&b, &anchors));
    }

    #[test]
    fn grouping_partitions_all_instances() {
        let image = ImageSpec::new(416, 416).unwrap();
        let anchors = AnchorSet::default();
        let boxes = [
            Rect::new(10.0, 10.0, 30.0, 40.0).unwrap(),
            Rect::new(50.0, 50.0, 170.0, 310.0).unwrap(),
            Rect::new(200.0, 10.0, 218.0, 80.0).unwrap(),
            Rect::new(5.0, 300.0, 100.0, 380.0).unwrap(),
        ];
        let instances: Vec<_> = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| dummy_instance(*b, i as u32, image))
            .collect();
        let grouped = group_instances(&instances, &anchors);
        assert_eq!(grouped.total_instances(), instances.len());
        let mut seen = vec![false; instances.len()];
        for (_, members) in grouped.iter() {
            for &m in members {
                assert!(!seen[m], "instance {m} grouped twice");
                seen[m] = true;
            }
            // per-group order preserves source order
            assert!(members.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn empty_and_singleton_groupings() {
        let image = ImageSpec::new(64, 64).unwrap();
        let anchors = AnchorSet::default();
        let grouped = group_instances(&[], &anchors);
        assert_eq!(grouped.total_instances(), 0);

        let one = dummy_instance(Rect::new(8.0, 8.0, 40.0, 30.0).unwrap(), 0, image);
        let grouped = group_instances(&[one], &anchors);
        assert_eq!(grouped.total_instances(), 1);
        let nonempty: Vec<_> = grouped.iter().filter(|(_, g)| !g.is_empty()).collect();
        assert_eq!(nonempty.len(), 1);
        assert_eq!(nonempty[0].1.len(), 1);
    }

    #[test]
    fn person_and_tie_land_in_different_groups() {
        let image = ImageSpec::new(544, 544).unwrap();
        let anchors = AnchorSet::default();
        let person = dummy_instance(Rect::new(200.0, 100.0, 320.0, 360.0).unwrap(), 0, image);
        let tie = dummy_instance(Rect::new(250.0, 160.0, 268.0, 230.0).unwrap(), 1, image);
        let pa = match_anchor(&person.bbox, &anchors);
        let ta = match_anchor(&tie.bbox, &anchors);
        assert_eq!(pa, oracle_match(&person.bbox, &anchors));
        assert_eq!(ta, oracle_match(&tie.bbox, &anchors));
        assert_ne!(pa, ta);
    }

    #[test]
    fn match_agrees_with_oracle_on_sweep() {
        let anchors = AnchorSet::default();
        for wi in 1..40u32 {
            for hi in 1..40u32 {
                let (w, h) = (wi as f64 * 10.0, hi as f64 * 10.0);
                let box_ = Rect::new(0.0, 0.0, w, h).unwrap();
                assert_eq!(
                    match_anchor(&box_, &anchors),
                    oracle_match(&box_, &anchors),
                    "disagreement at {w}x{h}"
                );
            }
        }
    }

    #[test]
    fn bad_tables_rejected() {
        assert!(AnchorSet::new(vec![Anchor::new(1.0, 1.0)], 3, 3).is_err());
        assert!(AnchorSet::new(vec![Anchor::new(0.0, 1.0)], 1, 1).is_err());
    }
}
