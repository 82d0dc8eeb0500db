//! Static PNG rendering: mask overlays, signed orientation heatmaps, and
//! destination-field gradient maps.

use image::{Rgb, RgbImage};
use omap_core::field::OrientationMap;
use omap_core::geom::pixel_center;
use omap_core::mask::BinaryMask;

/// Distinct overlay colors, cycled per instance.
const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

/// Blend each mask over the background at 50% alpha; masks below the score
/// threshold are skipped. Returns how many overlays were drawn.
pub fn draw_overlays(
    canvas: &mut RgbImage,
    masks: &[(f64, BinaryMask)],
    score_threshold: f64,
) -> usize {
    let mut drawn = 0;
    for (i, (score, mask)) in masks.iter().enumerate() {
        if *score < score_threshold {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        for (x, y) in mask.iter_set() {
            if x < canvas.width() && y < canvas.height() {
                let px = canvas.get_pixel_mut(x, y);
                for c in 0..3 {
                    px.0[c] = ((px.0[c] as u16 + color[c] as u16) / 2) as u8;
                }
            }
        }
        drawn += 1;
    }
    drawn
}

/// Signed diverging colormap for one channel of an orientation map: negative
/// values toward blue, positive toward red, zero at white.
pub fn heatmap_channel(map: &OrientationMap, channel: usize) -> RgbImage {
    assert!(channel < 2);
    let (w, h) = (map.grid_width(), map.grid_height());
    let data = map.data();
    let max_abs = data
        .iter()
        .skip(channel)
        .step_by(2)
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = data[(y as usize * w as usize + x as usize) * 2 + channel];
            let t = if max_abs > 0.0 { v / max_abs } else { 0.0 };
            let px = if t >= 0.0 {
                let f = t;
                [
                    255,
                    (255.0 * (1.0 - f)) as u8,
                    (255.0 * (1.0 - f)) as u8,
                ]
            } else {
                let f = -t;
                [
                    (255.0 * (1.0 - f)) as u8,
                    (255.0 * (1.0 - f)) as u8,
                    255,
                ]
            };
            img.put_pixel(x, y, Rgb(px));
        }
    }
    img
}

/// Per-pixel gradient magnitude of the destination field `o + p`: the sum of
/// the forward-difference norms along x and y. Boundaries between instances
/// and their surroundings light up because destinations jump there.
pub fn destination_gradient(map: &OrientationMap) -> Vec<f64> {
    let (w, h) = (map.grid_width(), map.grid_height());
    let dest = |x: u32, y: u32| pixel_center(x, y, map.stride()) + map.get(x, y);
    let mut out = vec![0.0f64; w as usize * h as usize];
    for y in 0..h {
        for x in 0..w {
            let d = dest(x, y);
            let gx = if x + 1 < w { (dest(x + 1, y) - d).norm() } else { 0.0 };
            let gy = if y + 1 < h { (dest(x, y + 1) - d).norm() } else { 0.0 };
            out[y as usize * w as usize + x as usize] = gx + gy;
        }
    }
    out
}

/// Render the gradient magnitude as a grayscale PNG, normalized to the max.
pub fn gradient_map_image(map: &OrientationMap) -> RgbImage {
    let (w, h) = (map.grid_width(), map.grid_height());
    let grad = destination_gradient(map);
    let max = grad.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let g = grad[y as usize * w as usize + x as usize];
            let v = if max > 0.0 { (255.0 * g / max) as u8 } else { 0 };
            img.put_pixel(x, y, Rgb([v, v, v]));
        }
    }
    img
}

/// Label-grid PNG palette: ignore black, negative gray, positive white.
pub fn label_image(labels: &omap_core::encoder::LabelGrid) -> image::GrayImage {
    let (w, h) = (labels.width(), labels.height());
    let mut img = image::GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = match labels.label(x, y) {
                omap_core::encoder::Label::Ignore => 0u8,
                omap_core::encoder::Label::Negative => 128,
                omap_core::encoder::Label::Positive(_) => 255,
            };
            img.put_pixel(x, y, image::Luma([v]));
        }
    }
    img
}
