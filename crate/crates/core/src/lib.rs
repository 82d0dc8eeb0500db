//! Network-free codec and evaluation toolkit for anchor-bound orientation-map
//! instance masks.
//!
//! The representation stores, per anchor prior, a dense two-channel field of
//! spatial offset vectors. Foreground pixels point centripetally at their
//! instance's base position (the box centroid); background pixels inside an
//! expanded valid training area point centrifugally at that area's border.
//! Masks are reconstructed by testing, per pixel, whether the vector's
//! destination falls strictly inside the detection box contracted by a
//! factor `tau`.
//!
//! Modules:
//!
//! * [`geom`], [`mask`], [`field`], [`annotation`] — shared types and
//!   coordinate conventions.
//! * [`grouping`] — anchor matching and instance grouping.
//! * [`encoder`] — ground-truth orientation maps and label grids.
//! * [`decoder`] — upsampling, NMS, and parallel mask construction.
//! * [`loss`] — the orientation loss and the combined objective.
//! * [`coco`] — annotation ingest and the compressed-RLE codec.
//! * [`eval`] — mask IoU and COCO-style average precision.
//! * [`bench`] — memory accounting and decode throughput.
//! * [`synth`] — deterministic synthetic scenes for tests and benchmarks.

pub mod annotation;
pub mod bench;
pub mod coco;
pub mod decoder;
pub mod encoder;
pub mod eval;
pub mod field;
pub mod geom;
pub mod grouping;
pub mod loss;
pub mod mask;
pub mod synth;

pub use annotation::InstanceAnnotation;
pub use field::OrientationMap;
pub use geom::{centroid, pixel_center, rect_iou, ImageSpec, Rect, Vec2};
pub use mask::BinaryMask;
