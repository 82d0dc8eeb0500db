//! Inference side: build instance masks from orientation maps and surviving
//! detections.
//!
//! A pixel joins a detection's mask when its orientation vector lands
//! strictly inside the target region — the detection box contracted by the
//! factor `tau` around the base position. No RoI cropping is involved;
//! membership is decided by destinations alone.

use crate::field::OrientationMap;
use crate::geom::{centroid, rect_iou, ImageSpec, Rect};
use crate::mask::BinaryMask;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("no orientation map for anchor index {0}")]
    MissingAnchorMap(usize),
    #[error("orientation map does not cover the image: {0}")]
    BadMap(#[from] crate::field::FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    /// Target-region contraction factor.
    pub contraction: f64,
    /// Greedy per-category NMS threshold.
    pub nms_iou: f64,
    /// Detections below this score are dropped before NMS.
    pub score_threshold: f64,
    /// Overlay rendering cutoff.
    pub render_threshold: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            contraction: 0.6,
            nms_iou: 0.5,
            score_threshold: 0.005,
            render_threshold: 0.3,
        }
    }
}

/// One predicted box paired with the anchor whose orientation map decodes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Rect,
    pub score: f64,
    pub category_id: u32,
    pub anchor_index: usize,
}

/// JSON wire form of a detection: `bbox` is COCO `[x, y, w, h]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
    pub category_id: u32,
    pub anchor_index: usize,
}

impl DetectionRecord {
    pub fn to_detection(&self) -> Result<Detection, crate::geom::GeomError> {
        if !self.score.is_finite() {
            return Err(crate::geom::GeomError::NonFinite);
        }
        Ok(Detection {
            bbox: Rect::from_xywh(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])?,
            score: self.score,
            category_id: self.category_id,
            anchor_index: self.anchor_index,
        })
    }
}

/// Bilinear upsampling to full resolution under the half-pixel-center
/// convention: output pixel `i` samples input coordinate
/// `(i + 0.5) / stride - 0.5`, edge-clamped. Vector values are already in
/// full-resolution pixel units, so they pass through unchanged.
pub fn bilinear_upsample(map: &OrientationMap, target: ImageSpec) -> Result<OrientationMap, DecoderError> {
    map.check_covers(target)?;
    if map.stride() == 1 {
        return Ok(map.clone());
    }
    let stride = map.stride() as f64;
    let (gw, gh) = (map.grid_width(), map.grid_height());
    let mut out = OrientationMap::zeros(target.width, target.height, 1, map.anchor_index());

    // Precompute per-axis source indices and fractions.
    let axis = |n_out: u32, n_in: u32| -> Vec<(u32, u32, f64)> {
        (0..n_out)
            .map(|i| {
                let src = ((i as f64 + 0.5) / stride - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor();
                let hi = (lo + 1.0).min((n_in - 1) as f64);
                (lo as u32, hi as u32, src - lo)
            })
            .collect()
    };
    let xs = axis(target.width, gw);
    let ys = axis(target.height, gh);

    let src = map.data();
    let gw_us = gw as usize;
    let row_len = target.width as usize * 2;
    out.data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(y, row)| {
            let (y0, y1, fy) = ys[y];
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                for c in 0..2 {
                    let v00 = src[(y0 as usize * gw_us + x0 as usize) * 2 + c];
                    let v01 = src[(y0 as usize * gw_us + x1 as usize) * 2 + c];
                    let v10 = src[(y1 as usize * gw_us + x0 as usize) * 2 + c];
                    let v11 = src[(y1 as usize * gw_us + x1 as usize) * 2 + c];
                    let top = v00 + (v01 - v00) * fx;
                    let bot = v10 + (v11 - v10) * fx;
                    row[x * 2 + c] = top + (bot - top) * fy;
                }
            }
        });
    Ok(out)
}

/// Evaluate the target-region membership test over a full-resolution map.
///
/// Pixel `(x, y)` is set iff `|O + P - b| < tau * s` holds strictly in both
/// components, with `P` the pixel center, `b` the box centroid, and `s` the
/// box size.
pub fn construct_mask(map: &OrientationMap, det: &Detection, tau: f64) -> BinaryMask {
    assert_eq!(map.stride(), 1, "construct_mask needs a full-resolution map");
    assert_eq!(map.anchor_index(), det.anchor_index, "map/detection anchor mismatch");
    let (w, h) = (map.grid_width(), map.grid_height());
    let b = centroid(&det.bbox);
    let tx = tau * det.bbox.width();
    let ty = tau * det.bbox.height();
    let mut mask = BinaryMask::new(w, h);
    if !(tx > 0.0 && ty > 0.0) {
        return mask;
    }
    let data = map.data();
    for y in 0..h {
        let py = y as f64 + 0.5;
        let row = y as usize * w as usize;
        for x in 0..w {
            let i = (row + x as usize) * 2;
            let dest_x = data[i] + (x as f64 + 0.5);
            let dest_y = data[i + 1] + py;
            if (dest_x - b.x).abs() < tx && (dest_y - b.y).abs() < ty {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Greedy per-category non-maximum suppression. Detections are visited by
/// descending score (ties keep input order); a detection survives iff its
/// IoU with every kept same-category detection stays at or below the
/// threshold.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let cand = &dets[i];
        let suppressed = kept.iter().any(|k| {
            k.category_id == cand.category_id && rect_iou(&k.bbox, &cand.bbox) > iou_thr
        });
        if !suppressed {
            kept.push(*cand);
        }
    }
    kept
}

/// Full decode pass: score filter, NMS, lazy per-anchor upsampling, then
/// per-detection mask construction. Output order equals NMS output order and
/// does not depend on the worker count.
pub struct DecodeOutput {
    pub masks: Vec<(Detection, BinaryMask)>,
    /// Detections dropped with their reasons; the batch keeps going.
    pub skipped: Vec<(Detection, DecoderError)>,
}

pub fn decode_all(
    dets: &[Detection],
    maps: &[OrientationMap],
    cfg: &DecoderConfig,
    image: ImageSpec,
) -> DecodeOutput {
    let filtered: Vec<Detection> = dets
        .iter()
        .filter(|d| d.score >= cfg.score_threshold)
        .copied()
        .collect();
    let survivors = nms(&filtered, cfg.nms_iou);

    let by_anchor: HashMap<usize, &OrientationMap> =
        maps.iter().map(|m| (m.anchor_index(), m)).collect();

    // Upsample each referenced map at most once.
    let mut needed: Vec<usize> = survivors.iter().map(|d| d.anchor_index).collect();
    needed.sort_unstable();
    needed.dedup();
    let mut upsampled: HashMap<usize, Result<Arc<OrientationMap>, String>> = HashMap::new();
    for anchor in needed {
        let entry = match by_anchor.get(&anchor) {
            None => Err(DecoderError::MissingAnchorMap(anchor).to_string()),
            Some(m) => bilinear_upsample(m, image)
                .map(Arc::new)
                .map_err(|e| e.to_string()),
        };
        upsampled.insert(anchor, entry);
    }

    let results: Vec<Result<(Detection, BinaryMask), (Detection, DecoderError)>> = survivors
        .par_iter()
        .map(|det| match upsampled.get(&det.anchor_index) {
            Some(Ok(map)) => Ok((*det, construct_mask(map, det, cfg.contraction))),
            Some(Err(_)) | None => Err((*det, DecoderError::MissingAnchorMap(det.anchor_index))),
        })
        .collect();

    let mut out = DecodeOutput {
        masks: Vec::with_capacity(results.len()),
        skipped: Vec::new(),
    };
    for r in results {
        match r {
            Ok(pair) => out.masks.push(pair),
            Err(pair) => out.skipped.push(pair),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;

    fn det(bbox: Rect, score: f64, category_id: u32, anchor_index: usize) -> Detection {
        Detection {
            bbox,
            score,
            category_id,
            anchor_index,
        }
    }

    #[test]
    fn constant_map_upsamples_to_constant() {
        let mut m = OrientationMap::zeros(4, 4, 4, 0);
        for y in 0..4 {
            for x in 0..4 {
                m.set(x, y, Vec2::new(3.0, -2.0));
            }
        }
        let up = bilinear_upsample(&m, ImageSpec::new(16, 16).unwrap()).unwrap();
        assert_eq!(up.stride(), 1);
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(up.get(x, y), Vec2::new(3.0, -2.0));
            }
        }
    }

    #[test]
    fn stride_one_is_identity() {
        let mut m = OrientationMap::zeros(8, 8, 1, 3);
        m.set(2, 5, Vec2::new(1.0, 2.0));
        let up = bilinear_upsample(&m, ImageSpec::new(8, 8).unwrap()).unwrap();
        assert_eq!(up, m);
    }

    /// Naive double-loop reference interpolator.
    fn reference_upsample(map: &OrientationMap, target: ImageSpec) -> OrientationMap {
        let stride = map.stride() as f64;
        let mut out = OrientationMap::zeros(target.width, target.height, 1, map.anchor_index());
        for y in 0..target.height {
            for x in 0..target.width {
                let sx = ((x as f64 + 0.5) / stride - 0.5).clamp(0.0, (map.grid_width() - 1) as f64);
                let sy = ((y as f64 + 0.5) / stride - 0.5).clamp(0.0, (map.grid_height() - 1) as f64);
                let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
                let x1 = (x0 + 1).min(map.grid_width() - 1);
                let y1 = (y0 + 1).min(map.grid_height() - 1);
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                let v = |gx: u32, gy: u32| map.get(gx, gy);
                let top_x = lerp(v(x0, y0).x, v(x1, y0).x, fx);
                let bot_x = lerp(v(x0, y1).x, v(x1, y1).x, fx);
                let top_y = lerp(v(x0, y0).y, v(x1, y0).y, fx);
                let bot_y = lerp(v(x0, y1).y, v(x1, y1).y, fx);
                out.set(x, y, Vec2::new(lerp(top_x, bot_x, fy), lerp(top_y, bot_y, fy)));
            }
        }
        out
    }

    #[test]
    fn ramp_matches_reference_interpolator() {
        let mut m = OrientationMap::zeros(2, 2, 4, 0);
        m.set(0, 0, Vec2::new(0.0, 1.0));
        m.set(1, 0, Vec2::new(4.0, -1.0));
        m.set(0, 1, Vec2::new(0.0, 7.0));
        m.set(1, 1, Vec2::new(4.0, 3.0));
        let target = ImageSpec::new(8, 8).unwrap();
        let fast = bilinear_upsample(&m, target).unwrap();
        let slow = reference_upsample(&m, target);
        for y in 0..8 {
            for x in 0..8 {
                let a = fast.get(x, y);
                let b = slow.get(x, y);
                assert!(
                    (a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6,
                    "mismatch at ({x},{y}): {a:?} vs {b:?}"
                );
            }
        }
        // edge-clamped linear ramp along x: interior pixels interpolate,
        // boundary pixels clamp to the grid samples
        assert_eq!(fast.get(0, 0).x, 0.0);
        assert_eq!(fast.get(7, 0).x, 4.0);
        let mid = fast.get(3, 0).x;
        assert!(mid > 0.0 && mid < 4.0);
    }

    #[test]
    fn bigger_grid_matches_reference_interpolator() {
        let mut m = OrientationMap::zeros(5, 3, 4, 1);
        let mut v = 0.0;
        for y in 0..3 {
            for x in 0..5 {
                m.set(x, y, Vec2::new((v * 7.0) % 13.0 - 5.0, (v * 3.0) % 11.0 - 4.0));
                v += 1.0;
            }
        }
        let target = ImageSpec::new(20, 12).unwrap();
        let fast = bilinear_upsample(&m, target).unwrap();
        let slow = reference_upsample(&m, target);
        for y in 0..12 {
            for x in 0..20 {
                let (a, b) = (fast.get(x, y), slow.get(x, y));
                assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_map_reduces_to_rectangle_test() {
        let image = ImageSpec::new(100, 100).unwrap();
        let map = OrientationMap::zeros(100, 100, 1, 0);
        let d = det(Rect::new(40.0, 40.0, 60.0, 60.0).unwrap(), 1.0, 1, 0);
        let mask = construct_mask(&map, &d, 0.6);
        // centers strictly inside (38, 62) in both axes: indices 38..=61
        assert_eq!(mask.area(), 24 * 24);
        assert!(mask.get(38, 38));
        assert!(mask.get(61, 61));
        assert!(!mask.get(37, 50));
        assert!(!mask.get(62, 50));
        let _ = image;
    }

    #[test]
    fn zero_size_target_region_gives_empty_mask() {
        let map = OrientationMap::zeros(10, 10, 1, 0);
        let d = det(Rect::new(2.0, 2.0, 8.0, 8.0).unwrap(), 1.0, 1, 0);
        let mask = construct_mask(&map, &d, 0.0);
        assert!(mask.is_empty());
    }

    #[test]
    fn nms_single_and_identical() {
        let a = det(Rect::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.9, 1, 0);
        assert_eq!(nms(&[a], 0.5).len(), 1);

        let b = det(Rect::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.8, 1, 0);
        let kept = nms(&[b, a], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_distinct_categories() {
        let a = det(Rect::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.9, 1, 0);
        let b = det(Rect::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.8, 2, 0);
        assert_eq!(nms(&[a, b], 0.5).len(), 2);
    }

    #[test]
    fn nms_tie_scores_keep_input_order() {
        let a = det(Rect::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.5, 1, 0);
        let b = det(Rect::new(1.0, 0.0, 11.0, 10.0).unwrap(), 0.5, 1, 0);
        let kept = nms(&[a, b], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox, a.bbox);
    }

    #[test]
    fn decode_all_empty_input() {
        let image = ImageSpec::new(16, 16).unwrap();
        let maps = vec![OrientationMap::zeros(16, 16, 1, 0)];
        let out = decode_all(&[], &maps, &DecoderConfig::default(), image);
        assert!(out.masks.is_empty());
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn decode_all_reports_missing_map_and_continues() {
        let image = ImageSpec::new(16, 16).unwrap();
        let maps = vec![OrientationMap::zeros(16, 16, 1, 0)];
        let good = det(Rect::new(2.0, 2.0, 10.0, 10.0).unwrap(), 0.9, 1, 0);
        let bad = det(Rect::new(2.0, 2.0, 10.0, 10.0).unwrap(), 0.8, 2, 5);
        let out = decode_all(&[good, bad], &maps, &DecoderConfig::default(), image);
        assert_eq!(out.masks.len(), 1);
        assert_eq!(out.skipped.len(), 1);
        assert!(matches!(out.skipped[0].1, DecoderError::MissingAnchorMap(5)));
    }

    #[test]
    fn mask_is_monotone_in_tau() {
        // an irregular map makes the property non-trivial
        let mut map = OrientationMap::zeros(32, 32, 1, 0);
        for y in 0..32 {
            for x in 0..32 {
                map.set(
                    x,
                    y,
                    Vec2::new(((x * 7 + y) % 11) as f64 - 5.0, ((y * 5 + x) % 9) as f64 - 4.0),
                );
            }
        }
        let d = det(Rect::new(8.0, 6.0, 24.0, 26.0).unwrap(), 1.0, 1, 0);
        let taus = [0.2, 0.4, 0.6, 0.8];
        let masks: Vec<BinaryMask> = taus.iter().map(|&t| construct_mask(&map, &d, t)).collect();
        for w in masks.windows(2) {
            let (small, large) = (&w[0], &w[1]);
            assert_eq!(small.intersection_area(large), small.area(), "not a subset");
        }
    }

    #[test]
    fn mask_is_translation_equivariant() {
        let (w, h) = (48u32, 40u32);
        let mut map = OrientationMap::zeros(w, h, 1, 0);
        for y in 0..20 {
            for x in 0..20 {
                map.set(x + 4, y + 4, Vec2::new((x % 5) as f64 - 2.0, (y % 7) as f64 - 3.0));
            }
        }
        let d0 = det(Rect::new(6.0, 5.0, 22.0, 21.0).unwrap(), 1.0, 1, 0);
        let m0 = construct_mask(&map, &d0, 0.6);

        let (sx, sy) = (13u32, 9u32);
        let mut shifted = OrientationMap::zeros(w, h, 1, 0);
        for y in 0..h {
            for x in 0..w {
                if x >= sx && y >= sy {
                    shifted.set(x, y, map.get(x - sx, y - sy));
                }
            }
        }
        let d1 = det(
            Rect::new(6.0 + sx as f64, 5.0 + sy as f64, 22.0 + sx as f64, 21.0 + sy as f64).unwrap(),
            1.0,
            1,
            0,
        );
        let m1 = construct_mask(&shifted, &d1, 0.6);
        for y in 0..h {
            for x in 0..w {
                if x >= sx && y >= sy {
                    assert_eq!(m0.get(x - sx, y - sy), m1.get(x, y), "mismatch at ({x},{y})");
                }
            }
        }
    }
}
