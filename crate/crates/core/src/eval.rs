//! Reconstruction quality metrics: mask IoU and COCO-style average precision.

use crate::annotation::InstanceAnnotation;
use crate::decoder::Detection;
use crate::mask::BinaryMask;
use serde::{Deserialize, Serialize};

/// Default COCO threshold ladder `0.50, 0.55, ..., 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// COCO area boundaries for the S/M/L splits.
const AREA_SMALL_MAX: f64 = 32.0 * 32.0;
const AREA_MEDIUM_MAX: f64 = 96.0 * 96.0;

/// IoU of two same-sized masks.
///
/// Two empty masks have no meaningful overlap; the value is pinned to 0.0
/// and flagged rather than silently reported as 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskIou {
    pub value: f64,
    pub both_empty: bool,
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> MaskIou {
    debug_assert!(a.same_dims(b).is_ok(), "mask dimensions differ");
    let union = a.union_area(b);
    if union == 0 {
        return MaskIou {
            value: 0.0,
            both_empty: true,
        };
    }
    MaskIou {
        value: a.intersection_area(b) as f64 / union as f64,
        both_empty: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub iou_threshold: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap_per_threshold: Vec<ThresholdAp>,
    /// Mean over the threshold ladder.
    pub mean_ap: f64,
    /// Greedy best-overlap IoU per ground-truth instance, image order then
    /// source order; 0.0 for unmatched instances.
    pub per_instance_iou: Vec<f64>,
    /// COCO-style area splits at the mean-AP ladder (None when no ground
    /// truth falls in the range).
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

/// Predictions for one image.
#[derive(Debug, Clone)]
pub struct ImagePredictions {
    pub detections: Vec<(Detection, BinaryMask)>,
}

/// Ground truth for one image.
#[derive(Debug, Clone)]
pub struct ImageGroundTruth {
    pub instances: Vec<InstanceAnnotation>,
    pub crowds: Vec<InstanceAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    fn contains(self, area: f64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Small => area < AREA_SMALL_MAX,
            AreaRange::Medium => (AREA_SMALL_MAX..AREA_MEDIUM_MAX).contains(&area),
            AreaRange::Large => area >= AREA_MEDIUM_MAX,
        }
    }
}

/// Score over paired image lists. `preds[i]` is matched against `gts[i]`.
pub fn evaluate(
    preds: &[ImagePredictions],
    gts: &[ImageGroundTruth],
    thresholds: &[f64],
) -> EvalResult {
    assert_eq!(preds.len(), gts.len(), "prediction/ground-truth image count");

    let categories = collect_categories(preds, gts);

    let ap_per_threshold: Vec<ThresholdAp> = thresholds
        .iter()
        .map(|&t| ThresholdAp {
            iou_threshold: t,
            ap: mean_ap_over_categories(preds, gts, &categories, t, AreaRange::All).unwrap_or(0.0),
        })
        .collect();
    let mean_ap = if ap_per_threshold.is_empty() {
        0.0
    } else {
        ap_per_threshold.iter().map(|t| t.ap).sum::<f64>() / ap_per_threshold.len() as f64
    };

    let area_ap = |range: AreaRange| -> Option<f64> {
        let vals: Vec<f64> = thresholds
            .iter()
            .filter_map(|&t| mean_ap_over_categories(preds, gts, &categories, t, range))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    EvalResult {
        ap_per_threshold,
        mean_ap,
        per_instance_iou: per_instance_ious(preds, gts),
        ap_small: area_ap(AreaRange::Small),
        ap_medium: area_ap(AreaRange::Medium),
        ap_large: area_ap(AreaRange::Large),
    }
}

fn collect_categories(preds: &[ImagePredictions], gts: &[ImageGroundTruth]) -> Vec<u32> {
    let mut cats: Vec<u32> = gts
        .iter()
        .flat_map(|g| g.instances.iter().chain(&g.crowds).map(|i| i.category_id))
        .chain(
            preds
                .iter()
                .flat_map(|p| p.detections.iter().map(|(d, _)| d.category_id)),
        )
        .collect();
    cats.sort_unstable();
    cats.dedup();
    cats
}

/// AP averaged over categories that have ground truth in the area range.
/// `None` when no category qualifies.
fn mean_ap_over_categories(
    preds: &[ImagePredictions],
    gts: &[ImageGroundTruth],
    categories: &[u32],
    iou_thr: f64,
    range: AreaRange,
) -> Option<f64> {
    let mut vals = Vec::new();
    for &cat in categories {
        if let Some(ap) = category_ap(preds, gts, cat, iou_thr, range) {
            vals.push(ap);
        }
    }
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Greedy score-ordered matching and 101-point interpolated AP for one
/// category. `None` when the category has no counted ground truth.
fn category_ap(
    preds: &[ImagePredictions],
    gts: &[ImageGroundTruth],
    cat: u32,
    iou_thr: f64,
    range: AreaRange,
) -> Option<f64> {
    // (image index, det index, score) sorted by score desc, stable
    let mut flat: Vec<(usize, usize, f64)> = Vec::new();
    for (ii, img) in preds.iter().enumerate() {
        for (di, (det, _)) in img.detections.iter().enumerate() {
            if det.category_id == cat {
                flat.push((ii, di, det.score));
            }
        }
    }
    flat.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));

    // per-image GT bookkeeping
    let mut gt_counted = 0usize;
    let mut gt_in_range: Vec<Vec<bool>> = Vec::with_capacity(gts.len());
    let mut gt_taken: Vec<Vec<bool>> = Vec::with_capacity(gts.len());
    for g in gts {
        let flags: Vec<bool> = g
            .instances
            .iter()
            .map(|inst| inst.category_id == cat && range.contains(inst.mask_area() as f64))
            .collect();
        gt_counted += flags.iter().filter(|&&f| f).count();
        gt_taken.push(vec![false; g.instances.len()]);
        gt_in_range.push(flags);
    }
    if gt_counted == 0 {
        return None;
    }

    // tp/fp per prediction; None marks an ignored prediction
    let mut marks: Vec<Option<bool>> = Vec::with_capacity(flat.len());
    for &(ii, di, _) in &flat {
        let (det, mask) = &preds[ii].detections[di];
        debug_assert_eq!(det.category_id, cat);

        let mut best: Option<(usize, f64)> = None;
        for (gi, inst) in gts[ii].instances.iter().enumerate() {
            if inst.category_id != cat || gt_taken[ii][gi] {
                continue;
            }
            let iou = mask_iou(mask, &inst.mask).value;
            if iou >= iou_thr && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_taken[ii][gi] = true;
                if gt_in_range[ii][gi] {
                    marks.push(Some(true));
                } else {
                    // matched an out-of-range GT: ignored, like COCO
                    marks.push(None);
                }
            }
            None => {
                // crowd regions absorb otherwise-unmatched predictions
                let crowd_hit = gts[ii]
                    .crowds
                    .iter()
                    .any(|c| c.category_id == cat && mask_iou(mask, &c.mask).value >= iou_thr);
                if crowd_hit {
                    marks.push(None);
                } else if range == AreaRange::All || range.contains(mask.area() as f64) {
                    marks.push(Some(false));
                } else {
                    marks.push(None);
                }
            }
        }
    }

    // precision/recall curve
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    for mark in marks.into_iter().flatten() {
        if mark {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push((
            tp as f64 / gt_counted as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }

    Some(interpolated_ap_101(&curve))
}

/// Area under the 101-point interpolated precision-recall curve.
fn interpolated_ap_101(curve: &[(f64, f64)]) -> f64 {
    // max precision at recall >= r, computed right-to-left
    let mut interp: Vec<(f64, f64)> = curve.to_vec();
    for i in (0..interp.len().saturating_sub(1)).rev() {
        interp[i].1 = interp[i].1.max(interp[i + 1].1);
    }
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        // first curve point with recall >= r (recall is non-decreasing)
        let p = interp
            .iter()
            .find(|&&(rec, _)| rec >= r - 1e-12)
            .map(|&(_, prec)| prec)
            .unwrap_or(0.0);
        total += p;
    }
    total / 101.0
}

/// Best-overlap IoU per ground-truth instance under greedy score-order
/// assignment with no threshold, reported in image order then source order.
fn per_instance_ious(preds: &[ImagePredictions], gts: &[ImageGroundTruth]) -> Vec<f64> {
    let mut out = Vec::new();
    for (img_pred, img_gt) in preds.iter().zip(gts) {
        let mut order: Vec<usize> = (0..img_pred.detections.len()).collect();
        order.sort_by(|&a, &b| {
            img_pred.detections[b]
                .0
                .score
                .partial_cmp(&img_pred.detections[a].0.score)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut assigned: Vec<f64> = vec![0.0; img_gt.instances.len()];
        let mut taken = vec![false; img_gt.instances.len()];
        for &pi in &order {
            let (det, mask) = &img_pred.detections[pi];
            let mut best: Option<(usize, f64)> = None;
            for (gi, inst) in img_gt.instances.iter().enumerate() {
                if taken[gi] || inst.category_id != det.category_id {
                    continue;
                }
                let iou = mask_iou(mask, &inst.mask).value;
                if iou > 0.0 && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            if let Some((gi, iou)) = best {
                taken[gi] = true;
                assigned[gi] = iou;
            }
        }
        out.extend(assigned);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{ImageSpec, Rect};

    fn block_mask(image: ImageSpec, x0: u32, y0: u32, w: u32, h: u32) -> BinaryMask {
        let mut m = BinaryMask::new(image.width, image.height);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m.set(x, y, true);
            }
        }
        m
    }

    fn instance(image: ImageSpec, x0: u32, y0: u32, w: u32, h: u32, cat: u32, src: u32) -> InstanceAnnotation {
        let mask = block_mask(image, x0, y0, w, h);
        let bbox = Rect::new(x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64).unwrap();
        InstanceAnnotation::new(cat, bbox, mask, src, image)
    }

    fn det_for(inst: &InstanceAnnotation, score: f64) -> Detection {
        Detection {
            bbox: inst.bbox,
            score,
            category_id: inst.category_id,
            anchor_index: 0,
        }
    }

    #[test]
    fn mask_iou_basics() {
        let image = ImageSpec::new(8, 8).unwrap();
        let a = block_mask(image, 0, 0, 2, 2);
        assert_eq!(mask_iou(&a, &a).value, 1.0);
        let b = block_mask(image, 4, 4, 2, 2);
        assert_eq!(mask_iou(&a, &b).value, 0.0);
        // 4-pixel masks overlapping in 2: 2 / 6
        let c = block_mask(image, 0, 0, 4, 1);
        let d = block_mask(image, 2, 0, 4, 1);
        let iou = mask_iou(&c, &d).value;
        assert!((iou - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_masks_flagged_not_one() {
        let image = ImageSpec::new(4, 4).unwrap();
        let a = BinaryMask::new(image.width, image.height);
        let r = mask_iou(&a, &a);
        assert_eq!(r.value, 0.0);
        assert!(r.both_empty);
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let image = ImageSpec::new(32, 32).unwrap();
        let g1 = instance(image, 2, 2, 8, 8, 1, 0);
        let g2 = instance(image, 14, 14, 10, 6, 2, 1);
        let preds = vec![ImagePredictions {
            detections: vec![
                (det_for(&g1, 1.0), g1.mask.clone()),
                (det_for(&g2, 1.0), g2.mask.clone()),
            ],
        }];
        let gts = vec![ImageGroundTruth {
            instances: vec![g1, g2],
            crowds: vec![],
        }];
        let result = evaluate(&preds, &gts, &coco_thresholds());
        for t in &result.ap_per_threshold {
            assert_eq!(t.ap, 1.0, "AP at {}", t.iou_threshold);
        }
        assert_eq!(result.mean_ap, 1.0);
        assert_eq!(result.per_instance_iou, vec![1.0, 1.0]);
    }

    #[test]
    fn no_predictions_scores_zero() {
        let image = ImageSpec::new(16, 16).unwrap();
        let g = instance(image, 2, 2, 6, 6, 1, 0);
        let preds = vec![ImagePredictions { detections: vec![] }];
        let gts = vec![ImageGroundTruth {
            instances: vec![g],
            crowds: vec![],
        }];
        let result = evaluate(&preds, &gts, &coco_thresholds());
        assert_eq!(result.mean_ap, 0.0);
        assert_eq!(result.per_instance_iou, vec![0.0]);
    }

    #[test]
    fn hand_computed_pr_curve() {
        // 2 GT; 3 preds: correct at 0.9, false at 0.85, correct at 0.8.
        // PR points: (0.5, 1.0), (0.5, 0.5), (1.0, 2/3).
        // 101-point AP: r in [0, 0.5] -> 1.0 (51 pts), r in (0.5, 1] -> 2/3
        // (50 pts): AP = (51 + 100/3) / 101 = 253/303.
        let image = ImageSpec::new(64, 64).unwrap();
        let g1 = instance(image, 2, 2, 10, 10, 1, 0);
        let g2 = instance(image, 30, 30, 10, 10, 1, 1);
        let false_mask = block_mask(image, 50, 2, 8, 8);
        let false_det = Detection {
            bbox: Rect::new(50.0, 2.0, 58.0, 10.0).unwrap(),
            score: 0.85,
            category_id: 1,
            anchor_index: 0,
        };
        let preds = vec![ImagePredictions {
            detections: vec![
                (det_for(&g1, 0.9), g1.mask.clone()),
                (false_det, false_mask),
                (det_for(&g2, 0.8), g2.mask.clone()),
            ],
        }];
        let gts = vec![ImageGroundTruth {
            instances: vec![g1, g2],
            crowds: vec![],
        }];
        let result = evaluate(&preds, &gts, &[0.5]);
        let expected = 253.0 / 303.0;
        assert!(
            (result.ap_per_threshold[0].ap - expected).abs() < 1e-12,
            "AP = {}, expected {expected}",
            result.ap_per_threshold[0].ap
        );
    }

    #[test]
    fn ap_non_increasing_in_threshold() {
        let image = ImageSpec::new(32, 32).unwrap();
        let g = instance(image, 4, 4, 10, 10, 1, 0);
        // an imperfect prediction: shifted overlap
        let pred_mask = block_mask(image, 6, 4, 10, 10);
        let d = Detection {
            bbox: Rect::new(6.0, 4.0, 16.0, 14.0).unwrap(),
            score: 0.9,
            category_id: 1,
            anchor_index: 0,
        };
        let preds = vec![ImagePredictions {
            detections: vec![(d, pred_mask)],
        }];
        let gts = vec![ImageGroundTruth {
            instances: vec![g],
            crowds: vec![],
        }];
        let result = evaluate(&preds, &gts, &coco_thresholds());
        let aps: Vec<f64> = result.ap_per_threshold.iter().map(|t| t.ap).collect();
        for w in aps.windows(2) {
            assert!(w[0] >= w[1] - 1e-12, "AP should not increase: {aps:?}");
        }
    }

    #[test]
    fn trailing_false_positive_never_raises_ap() {
        let image = ImageSpec::new(32, 32).unwrap();
        let g = instance(image, 4, 4, 10, 10, 1, 0);
        let base_preds = vec![(det_for(&g, 0.9), g.mask.clone())];
        let gts = vec![ImageGroundTruth {
            instances: vec![g.clone()],
            crowds: vec![],
        }];
        let without = evaluate(
            &[ImagePredictions {
                detections: base_preds.clone(),
            }],
            &gts,
            &coco_thresholds(),
        );
        let mut with_fp = base_preds;
        with_fp.push((
            Detection {
                bbox: Rect::new(20.0, 20.0, 28.0, 28.0).unwrap(),
                score: 0.01,
                category_id: 1,
                anchor_index: 0,
            },
            block_mask(image, 20, 20, 8, 8),
        ));
        let with = evaluate(
            &[ImagePredictions { detections: with_fp }],
            &gts,
            &coco_thresholds(),
        );
        assert!(with.mean_ap <= without.mean_ap + 1e-12);
    }

    #[test]
    fn crowd_matches_are_ignored_not_false() {
        let image = ImageSpec::new(32, 32).unwrap();
        let crowd = instance(image, 0, 0, 16, 16, 1, 0);
        let g = instance(image, 20, 20, 8, 8, 1, 1);
        let pred_on_crowd = (
            Detection {
                bbox: Rect::new(0.0, 0.0, 16.0, 16.0).unwrap(),
                score: 0.95,
                category_id: 1,
                anchor_index: 0,
            },
            crowd.mask.clone(),
        );
        let preds = vec![ImagePredictions {
            detections: vec![pred_on_crowd, (det_for(&g, 0.9), g.mask.clone())],
        }];
        let gts = vec![ImageGroundTruth {
            instances: vec![g],
            crowds: vec![crowd],
        }];
        let result = evaluate(&preds, &gts, &[0.5]);
        // the crowd-aligned prediction must not count as a false positive
        assert_eq!(result.ap_per_threshold[0].ap, 1.0);
    }
}
