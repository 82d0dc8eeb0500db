//! Shared helpers for CLI integration tests: turn synthetic scenes into
//! COCO annotation files and drive the binary.

use omap_core::coco::{AnnotationFile, CocoAnnotation, CocoCategory, CocoImage, Segmentation};
use omap_core::coco::rle_encode;
use omap_core::synth::SyntheticImage;
use std::path::Path;
use std::process::{Command, Output};

/// Serialize scenes as a COCO instances file; masks go out as uncompressed
/// RLE so the round trip is bit-exact.
pub fn write_coco_json(images: &[SyntheticImage], path: &Path) {
    let mut file = AnnotationFile {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: (1..=3)
            .map(|id| CocoCategory {
                id,
                name: format!("cat{id}"),
            })
            .collect(),
    };
    let mut ann_id = 1u64;
    for (i, img) in images.iter().enumerate() {
        let image_id = (i + 1) as u64;
        file.images.push(CocoImage {
            id: image_id,
            width: img.spec.width,
            height: img.spec.height,
            file_name: format!("synthetic_{image_id}.png"),
        });
        for inst in &img.instances {
            let rle = rle_encode(&inst.mask);
            file.annotations.push(CocoAnnotation {
                id: ann_id,
                image_id,
                category_id: inst.category_id,
                bbox: [
                    inst.bbox.left,
                    inst.bbox.top,
                    inst.bbox.width(),
                    inst.bbox.height(),
                ],
                segmentation: Some(Segmentation::UncompressedRle {
                    size: [rle.height, rle.width],
                    counts: rle.counts,
                }),
                iscrowd: false,
            });
            ann_id += 1;
        }
    }
    std::fs::write(path, serde_json::to_string(&file).unwrap()).unwrap();
}

pub fn omap_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_omap"))
}

pub fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}
