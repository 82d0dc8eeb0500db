//! Deterministic synthetic scenes for round-trip checks and benchmarks.
//!
//! The suite generator places convex instances (rectangles, ellipses,
//! diamonds) whose expanded valid areas are pairwise disjoint and fully
//! inside the image, which is exactly the isolation regime where
//! encode -> decode must reproduce every mask bit for bit. Size and aspect
//! bounds per shape keep the boundary-jump-to-interior-variation ratio of
//! the destination field comfortably above the asserted factor.

use crate::annotation::InstanceAnnotation;
use crate::encoder::expand_valid_area;
use crate::field::OrientationMap;
use crate::geom::{pixel_center, ImageSpec, Rect};
use crate::mask::BinaryMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Diamond,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub image: ImageSpec,
    pub num_images: usize,
    pub max_instances: usize,
    /// Expansion ratio the isolation margins are computed against.
    pub expand_ratio: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image: ImageSpec { width: 192, height: 192 },
            num_images: 200,
            max_instances: 8,
            expand_ratio: 1.2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub spec: ImageSpec,
    pub instances: Vec<InstanceAnnotation>,
}

/// Per-shape sampling bounds: (min short side, max short side, max aspect).
fn shape_bounds(kind: ShapeKind) -> (f64, f64, f64) {
    match kind {
        ShapeKind::Rectangle => (26.0, 64.0, 1.8),
        ShapeKind::Ellipse => (26.0, 64.0, 1.5),
        ShapeKind::Diamond => (32.0, 64.0, 1.25),
    }
}

fn rasterize_shape(kind: ShapeKind, bbox: &Rect, image: ImageSpec) -> BinaryMask {
    let mut mask = BinaryMask::new(image.width, image.height);
    let c = crate::geom::centroid(bbox);
    let (hx, hy) = (bbox.width() / 2.0, bbox.height() / 2.0);
    let x0 = bbox.left.floor().max(0.0) as u32;
    let x1 = (bbox.right.ceil() as u32).min(image.width);
    let y0 = bbox.top.floor().max(0.0) as u32;
    let y1 = (bbox.bottom.ceil() as u32).min(image.height);
    for y in y0..y1 {
        for x in x0..x1 {
            let p = pixel_center(x, y, 1);
            let inside_box =
                p.x >= bbox.left && p.x < bbox.right && p.y >= bbox.top && p.y < bbox.bottom;
            if !inside_box {
                continue;
            }
            let (u, v) = ((p.x - c.x) / hx, (p.y - c.y) / hy);
            let inside = match kind {
                ShapeKind::Rectangle => true,
                ShapeKind::Ellipse => u * u + v * v < 1.0,
                ShapeKind::Diamond => u.abs() + v.abs() < 1.0,
            };
            if inside {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Generate a deterministic suite of images with isolated instances.
pub fn generate_suite(cfg: &SynthConfig) -> Vec<SyntheticImage> {
    (0..cfg.num_images)
        .map(|i| generate_image(cfg, cfg.seed.wrapping_add(i as u64).wrapping_mul(0x9e3779b97f4a7c15)))
        .collect()
}

fn generate_image(cfg: &SynthConfig, seed: u64) -> SyntheticImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = cfg.image;
    let target_n = rng.gen_range(1..=cfg.max_instances.max(1));
    let kinds = [ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Diamond];

    let mut areas: Vec<Rect> = Vec::new();
    let mut instances: Vec<InstanceAnnotation> = Vec::new();
    for k in 0..target_n {
        let mut attempts = 0;
        while attempts < 60 {
            attempts += 1;
            let kind = kinds[rng.gen_range(0..kinds.len())];
            let (short_min, short_max, aspect_max) = shape_bounds(kind);
            // crowded images skew small so several instances still fit
            let short_cap = if target_n >= 5 { 40.0 } else { short_max };
            let short = rng.gen_range(short_min..=short_cap.max(short_min + 1.0));
            let aspect = rng.gen_range(1.0..=aspect_max);
            let (mut w, mut h) = (short * aspect, short);
            if rng.gen_bool(0.5) {
                std::mem::swap(&mut w, &mut h);
            }
            // the expanded area must fit strictly inside the image
            let (ehw, ehh) = (w * cfg.expand_ratio / 2.0, h * cfg.expand_ratio / 2.0);
            let margin = 1.0;
            let (lo_x, hi_x) = (ehw + margin, image.width as f64 - ehw - margin);
            let (lo_y, hi_y) = (ehh + margin, image.height as f64 - ehh - margin);
            if lo_x >= hi_x || lo_y >= hi_y {
                continue;
            }
            let cx = rng.gen_range(lo_x..hi_x);
            let cy = rng.gen_range(lo_y..hi_y);
            let bbox = Rect::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).unwrap();
            let area = expand_valid_area(&bbox, cfg.expand_ratio, image, true).unwrap();
            // gap between areas so no pixel center is shared
            let padded = Rect {
                left: area.left - 1.0,
                top: area.top - 1.0,
                right: area.right + 1.0,
                bottom: area.bottom + 1.0,
            };
            if areas.iter().any(|a| a.overlaps(&padded)) {
                continue;
            }
            let mask = rasterize_shape(kind, &bbox, image);
            if mask.is_empty() {
                continue;
            }
            let category = 1 + (k as u32 % 3);
            areas.push(area);
            instances.push(InstanceAnnotation::new(
                category,
                bbox,
                mask,
                instances.len() as u32,
                image,
            ));
            break;
        }
    }
    SyntheticImage {
        spec: image,
        instances,
    }
}

/// Resample a full-resolution field down to the given stride by bilinear
/// sampling at the stride-grid centers — the inverse mapping of
/// [`crate::decoder::bilinear_upsample`]. Emulates a network that predicts
/// at reduced resolution.
pub fn downsample_field(map: &OrientationMap, stride: u32) -> OrientationMap {
    assert_eq!(map.stride(), 1, "downsample expects a full-resolution field");
    assert!(stride >= 1);
    let gw = map.grid_width() / stride;
    let gh = map.grid_height() / stride;
    let mut out = OrientationMap::zeros(gw, gh, stride, map.anchor_index());
    for gy in 0..gh {
        for gx in 0..gw {
            let sx = ((gx as f64 + 0.5) * stride as f64 - 0.5)
                .clamp(0.0, (map.grid_width() - 1) as f64);
            let sy = ((gy as f64 + 0.5) * stride as f64 - 0.5)
                .clamp(0.0, (map.grid_height() - 1) as f64);
            let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
            let x1 = (x0 + 1).min(map.grid_width() - 1);
            let y1 = (y0 + 1).min(map.grid_height() - 1);
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let v00 = map.get(x0, y0);
            let v01 = map.get(x1, y0);
            let v10 = map.get(x0, y1);
            let v11 = map.get(x1, y1);
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            out.set(gx, gy, top + (bot - top) * fy);
        }
    }
    out
}

/// Two same-category, similarly sized instances sharing one anchor and
/// nearly one base position: the overlap regime the representation cannot
/// distinguish. Used to demonstrate the documented failure mode.
pub fn adversarial_concentric_pair(image: ImageSpec) -> SyntheticImage {
    let cx = image.width as f64 / 2.0;
    let cy = image.height as f64 / 2.0;
    let a = Rect::new(cx - 20.0, cy - 20.0, cx + 20.0, cy + 20.0).unwrap();
    let b = Rect::new(cx - 18.0, cy - 19.0, cx + 22.0, cy + 21.0).unwrap();
    let mask_a = rasterize_shape(ShapeKind::Rectangle, &a, image);
    let mask_b = rasterize_shape(ShapeKind::Ellipse, &b, image);
    SyntheticImage {
        spec: image,
        instances: vec![
            InstanceAnnotation::new(1, a, mask_a, 0, image),
            InstanceAnnotation::new(1, b, mask_b, 1, image),
        ],
    }
}
