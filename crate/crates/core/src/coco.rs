//! COCO-style annotation ingest and results output, including the
//! compressed-RLE string codec.
//!
//! RLE counts are runs over COLUMN-major pixel order, alternating zeros and
//! ones, always starting with a zero run (possibly of length zero). The
//! compressed string form delta-codes the counts and packs each signed value
//! in 5-bit chunks, low bits first, with bit 0x20 as the continuation flag,
//! offset by 48 into printable ASCII.

use crate::annotation::InstanceAnnotation;
use crate::geom::{ImageSpec, Rect};
use crate::mask::BinaryMask;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CocoError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid json at {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("annotation {ann_id}: references unknown image_id {image_id}")]
    UnknownImage { ann_id: u64, image_id: u64 },
    #[error("annotation {ann_id}: references unknown category_id {category_id}")]
    UnknownCategory { ann_id: u64, category_id: u32 },
    #[error("annotation {ann_id}: invalid bbox {bbox:?}")]
    BadBbox { ann_id: u64, bbox: [f64; 4] },
    #[error("rle counts sum to {got}, expected {expected} for {width}x{height}")]
    BadRleSum {
        got: u64,
        expected: u64,
        width: u32,
        height: u32,
    },
    #[error("compressed rle contains byte {0} outside the valid range")]
    BadRleChar(u8),
    #[error("compressed rle stream is truncated")]
    TruncatedRle,
    #[error("rle run value is negative after delta decoding")]
    NegativeRun,
    #[error("image dimensions invalid: {0}")]
    Geom(#[from] crate::geom::GeomError),
}

/// Uncompressed column-major RLE of a binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RleMask {
    pub height: u32,
    pub width: u32,
    /// Alternating run lengths, zeros first.
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn validate(&self) -> Result<(), CocoError> {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = self.height as u64 * self.width as u64;
        if total != expected {
            return Err(CocoError::BadRleSum {
                got: total,
                expected,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

/// Encode a mask as column-major RLE. Exact inverse of [`rle_decode`].
pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let (w, h) = (mask.width(), mask.height());
    let mut counts = Vec::new();
    let mut current = false; // runs start with zeros
    let mut run: u32 = 0;
    for x in 0..w {
        for y in 0..h {
            let bit = mask.get(x, y);
            if bit == current {
                run += 1;
            } else {
                counts.push(run);
                current = bit;
                run = 1;
            }
        }
    }
    counts.push(run);
    RleMask {
        height: h,
        width: w,
        counts,
    }
}

/// Decode column-major RLE back into a dense mask.
pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask, CocoError> {
    rle.validate()?;
    let mut mask = BinaryMask::new(rle.width, rle.height);
    let mut pos: u64 = 0;
    let h = rle.height as u64;
    for (i, &run) in rle.counts.iter().enumerate() {
        if i % 2 == 1 {
            for p in pos..pos + run as u64 {
                mask.set((p / h) as u32, (p % h) as u32, true);
            }
        }
        pos += run as u64;
    }
    Ok(mask)
}

/// Compress counts to the COCO string form.
pub fn rle_compress(rle: &RleMask) -> String {
    let mut out = Vec::with_capacity(rle.counts.len() * 2);
    for i in 0..rle.counts.len() {
        let mut x = rle.counts[i] as i64;
        if i > 2 {
            x -= rle.counts[i - 2] as i64;
        }
        loop {
            let chunk = (x & 0x1f) as u8;
            x >>= 5;
            let more = if chunk & 0x10 != 0 { x != -1 } else { x != 0 };
            out.push(48 + if more { chunk | 0x20 } else { chunk });
            if !more {
                break;
            }
        }
    }
    // counts are 6-bit chunks offset into ASCII 48..=111
    String::from_utf8(out).expect("chunks are always printable ascii")
}

/// Decompress a COCO counts string. Exact inverse of [`rle_compress`].
pub fn rle_decompress(s: &str, height: u32, width: u32) -> Result<RleMask, CocoError> {
    let bytes = s.as_bytes();
    let mut counts: Vec<u32> = Vec::new();
    let mut p = 0usize;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0u32;
        loop {
            if p >= bytes.len() {
                return Err(CocoError::TruncatedRle);
            }
            let raw = bytes[p];
            if !(48..112).contains(&raw) {
                return Err(CocoError::BadRleChar(raw));
            }
            let c = raw - 48;
            x |= ((c & 0x1f) as i64) << (5 * k);
            p += 1;
            let more = c & 0x20 != 0;
            if !more {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * (k + 1));
                }
                break;
            }
            k += 1;
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2] as i64;
        }
        if x < 0 || x > u32::MAX as i64 {
            return Err(CocoError::NegativeRun);
        }
        counts.push(x as u32);
    }
    let rle = RleMask {
        height,
        width,
        counts,
    };
    rle.validate()?;
    Ok(rle)
}

/// Fill pixels whose centers fall inside any of the polygons under the
/// even-odd rule. Polygons with fewer than three vertices are skipped with a
/// diagnostic. Multiple polygons of one annotation are unioned.
pub fn rasterize_polygons(polys: &[Vec<(f64, f64)>], image: ImageSpec) -> BinaryMask {
    let mut mask = BinaryMask::new(image.width, image.height);
    for (pi, poly) in polys.iter().enumerate() {
        if poly.len() < 3 {
            log::warn!("polygon {pi} has {} vertices, skipped", poly.len());
            continue;
        }
        rasterize_one(poly, &mut mask);
    }
    mask
}

fn rasterize_one(poly: &[(f64, f64)], mask: &mut BinaryMask) {
    let (w, h) = (mask.width(), mask.height());
    let mut crossings: Vec<f64> = Vec::with_capacity(8);
    for y in 0..h {
        let cy = y as f64 + 0.5;
        crossings.clear();
        for i in 0..poly.len() {
            let (x1, y1) = poly[i];
            let (x2, y2) = poly[(i + 1) % poly.len()];
            // half-open crossing rule avoids double-counting vertices
            if (y1 <= cy) != (y2 <= cy) {
                crossings.push(x1 + (cy - y1) * (x2 - x1) / (y2 - y1));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in crossings.chunks_exact(2) {
            let (xa, xb) = (pair[0], pair[1]);
            // centers strictly between the crossings
            let first = (xa - 0.5).ceil().max(0.0) as i64;
            let last = ((xb - 0.5).ceil() - 1.0).min(w as f64 - 1.0) as i64;
            for x in first..=last {
                mask.set(x as u32, y, true);
            }
        }
    }
}

// ---- annotation file schema ----------------------------------------------

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub file_name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    /// Flat `[x, y, x, y, ...]` polygon lists.
    Polygons(Vec<Vec<f64>>),
    /// `{"size": [h, w], "counts": "..."}` compressed RLE.
    CompressedRle { size: [u32; 2], counts: String },
    /// `{"size": [h, w], "counts": [..]}` uncompressed RLE.
    UncompressedRle { size: [u32; 2], counts: Vec<u32> },
}

fn deserialize_iscrowd<'de, D>(deserializer: D) -> Result<bool, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum IsCrowd {
        Bool(bool),
        Int(u8),
    }
    Ok(match IsCrowd::deserialize(deserializer)? {
        IsCrowd::Bool(b) => b,
        IsCrowd::Int(i) => i != 0,
    })
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CocoAnnotation {
    #[serde(default)]
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub segmentation: Option<Segmentation>,
    #[serde(default, deserialize_with = "deserialize_iscrowd")]
    pub iscrowd: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CocoCategory {
    pub id: u32,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct AnnotationFile {
    #[serde(default)]
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

/// One image's ground truth after ingest. `instances` feed the encoder;
/// `crowds` are kept for evaluation only.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub image_id: u64,
    pub file_name: String,
    pub spec: ImageSpec,
    pub instances: Vec<InstanceAnnotation>,
    pub crowds: Vec<InstanceAnnotation>,
}

#[derive(Debug, Clone)]
pub struct AnnotationSet {
    pub images: Vec<LoadedImage>,
    pub categories: Vec<CocoCategory>,
}

/// Parse a COCO instances file: polygons rasterized, RLE decoded, crowd
/// annotations separated. `source_index` follows file order per image.
pub fn load_annotations(path: &Path) -> Result<AnnotationSet, CocoError> {
    let text = std::fs::read_to_string(path).map_err(|source| CocoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: AnnotationFile = serde_json::from_str(&text).map_err(|source| CocoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotation_file(file)
}

pub fn parse_annotation_file(file: AnnotationFile) -> Result<AnnotationSet, CocoError> {
    let mut images: Vec<LoadedImage> = Vec::with_capacity(file.images.len());
    let mut index_of = std::collections::HashMap::new();
    for img in &file.images {
        index_of.insert(img.id, images.len());
        images.push(LoadedImage {
            image_id: img.id,
            file_name: img.file_name.clone(),
            spec: ImageSpec::new(img.width, img.height)?,
            instances: Vec::new(),
            crowds: Vec::new(),
        });
    }
    let category_ids: std::collections::HashSet<u32> =
        file.categories.iter().map(|c| c.id).collect();

    for ann in &file.annotations {
        let &img_idx = index_of.get(&ann.image_id).ok_or(CocoError::UnknownImage {
            ann_id: ann.id,
            image_id: ann.image_id,
        })?;
        if !file.categories.is_empty() && !category_ids.contains(&ann.category_id) {
            return Err(CocoError::UnknownCategory {
                ann_id: ann.id,
                category_id: ann.category_id,
            });
        }
        let spec = images[img_idx].spec;
        let [x, y, w, h] = ann.bbox;
        if !(w >= 0.0 && h >= 0.0) || !(x.is_finite() && y.is_finite()) {
            return Err(CocoError::BadBbox {
                ann_id: ann.id,
                bbox: ann.bbox,
            });
        }
        let mask = match &ann.segmentation {
            Some(Segmentation::Polygons(polys)) => {
                let pts: Vec<Vec<(f64, f64)>> = polys
                    .iter()
                    .map(|flat| {
                        flat.chunks_exact(2).map(|c| (c[0], c[1])).collect::<Vec<_>>()
                    })
                    .collect();
                rasterize_polygons(&pts, spec)
            }
            Some(Segmentation::CompressedRle { size, counts }) => {
                let rle = rle_decompress(counts, size[0], size[1])?;
                rle_decode(&rle)?
            }
            Some(Segmentation::UncompressedRle { size, counts }) => {
                let rle = RleMask {
                    height: size[0],
                    width: size[1],
                    counts: counts.clone(),
                };
                rle_decode(&rle)?
            }
            None => BinaryMask::new(spec.width, spec.height),
        };

        // A non-degenerate bbox is required by the geometry layer; fall back
        // to the mask extents when the annotated box is unusable.
        let bbox = Rect::from_xywh(x, y, w, h).or_else(|_| bbox_from_mask(&mask))?;
        warn_on_bbox_mask_mismatch(ann.id, &bbox, &mask);

        let source_index = (images[img_idx].instances.len() + images[img_idx].crowds.len()) as u32;
        let inst = InstanceAnnotation::new(ann.category_id, bbox, mask, source_index, spec);
        if ann.iscrowd {
            images[img_idx].crowds.push(inst);
        } else {
            images[img_idx].instances.push(inst);
        }
    }

    Ok(AnnotationSet {
        images,
        categories: file.categories,
    })
}

fn bbox_from_mask(mask: &BinaryMask) -> Result<Rect, crate::geom::GeomError> {
    match mask.pixel_bounds() {
        Some((x0, y0, x1, y1)) => {
            Rect::new(x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0)
        }
        None => Rect::new(0.0, 0.0, 1.0, 1.0),
    }
}

/// The mask stays authoritative; a box that disagrees with the mask extents
/// by more than one pixel is only worth a warning.
fn warn_on_bbox_mask_mismatch(ann_id: u64, bbox: &Rect, mask: &BinaryMask) {
    if let Some((x0, y0, x1, y1)) = mask.pixel_bounds() {
        let ext = Rect {
            left: x0 as f64,
            top: y0 as f64,
            right: x1 as f64 + 1.0,
            bottom: y1 as f64 + 1.0,
        };
        let off = (ext.left - bbox.left)
            .abs()
            .max((ext.top - bbox.top).abs())
            .max((ext.right - bbox.right).abs())
            .max((ext.bottom - bbox.bottom).abs());
        if off > 1.0 {
            log::warn!(
                "annotation {ann_id}: bbox disagrees with mask extents by {off:.1}px, mask kept authoritative"
            );
        }
    }
}

// ---- results output --------------------------------------------------------

/// One mask prediction in COCO results form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: u64,
    pub category_id: u32,
    pub segmentation: RleJson,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RleJson {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: String,
}

impl RleJson {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let rle = rle_encode(mask);
        RleJson {
            size: [rle.height, rle.width],
            counts: rle_compress(&rle),
        }
    }

    pub fn to_mask(&self) -> Result<BinaryMask, CocoError> {
        let rle = rle_decompress(&self.counts, self.size[0], self.size[1])?;
        rle_decode(&rle)
    }
}
