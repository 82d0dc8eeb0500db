//! Memory accounting for the representation and decode-stage throughput
//! measurements on synthetic workloads.

use crate::coco::rle_encode;
use crate::decoder::{bilinear_upsample, construct_mask, Detection, DecoderConfig};
use crate::field::OrientationMap;
use crate::geom::{GeomError, ImageSpec, Rect};
use crate::synth::{downsample_field, generate_suite, SynthConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Feature-map memory needed to construct masks at a given input size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub input: ImageSpec,
    pub stride: u32,
    pub num_maps: u32,
    pub channels: u32,
    pub bytes_per_value: u32,
    pub total_bytes: u64,
    pub mebibytes: f64,
}

/// Exact arithmetic: `num_maps x channels x (H/stride) x (W/stride) x bytes`.
pub fn footprint(image: ImageSpec, stride: u32, num_maps: u32) -> Result<FootprintReport, GeomError> {
    image.check_stride(stride)?;
    let channels = 2u32;
    let bytes_per_value = 4u32;
    let gw = (image.width / stride) as u64;
    let gh = (image.height / stride) as u64;
    let total_bytes = num_maps as u64 * channels as u64 * gw * gh * bytes_per_value as u64;
    Ok(FootprintReport {
        input: image,
        stride,
        num_maps,
        channels,
        bytes_per_value,
        total_bytes,
        mebibytes: total_bytes as f64 / (1024.0 * 1024.0),
    })
}

/// Synthetic decode workload: one image worth of orientation maps plus a
/// batch of detections derived from a seeded scene.
#[derive(Debug, Clone, Copy)]
pub struct WorkloadSpec {
    pub image: ImageSpec,
    pub stride: u32,
    pub num_maps: u32,
    pub num_boxes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub boxes_decoded: usize,
    pub upsample_ms: f64,
    pub construct_ms: f64,
    pub rle_ms: f64,
    pub total_ms: f64,
    pub boxes_per_second: f64,
    pub workers: usize,
    pub repeats: usize,
    /// True when the workload had no boxes and throughput is reported as 0.
    pub empty_workload: bool,
    /// FNV-1a digest over the decoded masks, a determinism witness.
    pub mask_digest: String,
}

fn fnv1a64(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

struct Workload {
    maps: Vec<OrientationMap>,
    dets: Vec<Detection>,
}

/// Build the deterministic workload: encode a seeded scene, push the ground
/// truth down to the requested stride, and replicate boxes (each with its
/// own category so NMS keeps all of them) until the batch size is reached.
fn build_workload(spec: &WorkloadSpec) -> Workload {
    use crate::encoder::{encode_targets, EncoderConfig};
    use crate::grouping::{group_instances, match_anchor, AnchorSet};

    let anchors = AnchorSet::default();
    let scene_cfg = SynthConfig {
        image: spec.image,
        num_images: 1,
        max_instances: 8,
        expand_ratio: 1.2,
        seed: spec.seed,
    };
    let scene = generate_suite(&scene_cfg).pop().expect("one image requested");
    let groups = group_instances(&scene.instances, &anchors);
    let bundles = encode_targets(
        &scene.instances,
        &groups,
        &anchors,
        spec.image,
        &EncoderConfig::default(),
    );
    let maps: Vec<OrientationMap> = bundles
        .iter()
        .take(spec.num_maps as usize)
        .map(|b| {
            if spec.stride > 1 {
                downsample_field(&b.orientation, spec.stride)
            } else {
                b.orientation.clone()
            }
        })
        .collect();

    let mut dets = Vec::with_capacity(spec.num_boxes);
    if !scene.instances.is_empty() && !maps.is_empty() {
        for i in 0..spec.num_boxes {
            let inst = &scene.instances[i % scene.instances.len()];
            let jitter = (i / scene.instances.len()) as f64 * 0.25;
            let bbox = Rect::new(
                inst.bbox.left + jitter,
                inst.bbox.top + jitter,
                inst.bbox.right + jitter,
                inst.bbox.bottom + jitter,
            )
            .unwrap();
            dets.push(Detection {
                bbox,
                score: 1.0 - i as f64 * 1e-4,
                category_id: i as u32 + 1,
                anchor_index: match_anchor(&inst.bbox, &anchors).min(maps.len().saturating_sub(1)),
            });
        }
    }
    Workload { maps, dets }
}

/// Time the decode stages over a synthetic workload. Medians over `repeats`
/// runs are reported; the decoded masks are digest-checked so worker counts
/// can be compared for bit-identical output.
pub fn bench_decode(
    spec: &WorkloadSpec,
    cfg: &DecoderConfig,
    workers: usize,
    repeats: usize,
) -> ThroughputReport {
    assert!(repeats >= 3, "medians need at least 3 repeats");
    let workload = build_workload(spec);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool");

    let mut upsample_s = Vec::with_capacity(repeats);
    let mut construct_s = Vec::with_capacity(repeats);
    let mut rle_s = Vec::with_capacity(repeats);
    let mut total_s = Vec::with_capacity(repeats);
    let mut digest = 0xcbf29ce484222325u64;

    for rep in 0..repeats {
        let (elapsed, stage_times, masks_digest) = pool.install(|| {
            let t_all = Instant::now();

            let t0 = Instant::now();
            let upsampled: Vec<OrientationMap> = workload
                .maps
                .par_iter()
                .map(|m| bilinear_upsample(m, spec.image).expect("workload maps cover the image"))
                .collect();
            let upsample = t0.elapsed().as_secs_f64();

            let t1 = Instant::now();
            let masks: Vec<crate::mask::BinaryMask> = workload
                .dets
                .par_iter()
                .map(|d| construct_mask(&upsampled[d.anchor_index], d, cfg.contraction))
                .collect();
            let construct = t1.elapsed().as_secs_f64();

            let t2 = Instant::now();
            let rles: Vec<String> = masks
                .par_iter()
                .map(|m| crate::coco::rle_compress(&rle_encode(m)))
                .collect();
            let rle = t2.elapsed().as_secs_f64();

            let total = t_all.elapsed().as_secs_f64();
            let mut d = 0xcbf29ce484222325u64;
            for m in &masks {
                d = fnv1a64(d, &m.to_bytes());
            }
            for s in &rles {
                d = fnv1a64(d, s.as_bytes());
            }
            (total, (upsample, construct, rle), d)
        });
        upsample_s.push(stage_times.0);
        construct_s.push(stage_times.1);
        rle_s.push(stage_times.2);
        total_s.push(elapsed);
        if rep == 0 {
            digest = masks_digest;
        } else {
            assert_eq!(digest, masks_digest, "decode must be repeatable");
        }
    }

    let total_med = median(&mut total_s);
    let empty = workload.dets.is_empty();
    ThroughputReport {
        boxes_decoded: workload.dets.len(),
        upsample_ms: median(&mut upsample_s) * 1e3,
        construct_ms: median(&mut construct_s) * 1e3,
        rle_ms: median(&mut rle_s) * 1e3,
        total_ms: total_med * 1e3,
        boxes_per_second: if empty || total_med <= 0.0 {
            0.0
        } else {
            workload.dets.len() as f64 / total_med
        },
        workers,
        repeats,
        empty_workload: empty,
        mask_digest: format!("{digest:016x}"),
    }
}
