//! Subcommand implementations. Machine output goes to stdout as JSON;
//! diagnostics and tables go to stderr.

use crate::config::Config;
use crate::container::OmapContainer;
use crate::render;
use anyhow::{anyhow, Context};
use omap_core::coco::{load_annotations, AnnotationSet, LoadedImage, ResultRecord, RleJson};
use omap_core::decoder::{bilinear_upsample, decode_all, Detection, DetectionRecord};
use omap_core::encoder::{encode_targets, TargetBundle};
use omap_core::eval::{coco_thresholds, evaluate, ImageGroundTruth, ImagePredictions};
use omap_core::geom::{ImageSpec, Rect};
use omap_core::grouping::{group_instances, match_anchor, AnchorSet};
use omap_core::loss::{combine_loss, orientation_loss};
use omap_core::{BinaryMask, OrientationMap};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Failure classes mapped to process exit codes by `main`.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable/invalid inputs: exit 2.
    Input(anyhow::Error),
    /// Round-trip quality below the configured floor: exit 3.
    Floor { mean: f64, floor: f64 },
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Input(e.into())
    }
}

pub type CmdResult = Result<(), CliError>;

fn print_json<T: Serialize>(value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    println!("{text}");
    Ok(())
}

fn load_set(path: &Path) -> Result<AnnotationSet, CliError> {
    load_annotations(path)
        .map_err(|e| CliError::Input(anyhow!("{e}").context(format!("loading {}", path.display()))))
}

fn encode_image(img: &LoadedImage, anchors: &AnchorSet, cfg: &Config) -> Vec<TargetBundle> {
    let groups = group_instances(&img.instances, anchors);
    encode_targets(
        &img.instances,
        &groups,
        anchors,
        img.spec,
        &cfg.encoder_config(),
    )
}

// ---- encode -----------------------------------------------------------------

#[derive(Serialize)]
struct EncodeSummary {
    images: usize,
    files: Vec<String>,
}

pub fn cmd_encode(
    annotations: &Path,
    out_dir: &Path,
    cfg: &Config,
    label_pngs: bool,
) -> CmdResult {
    let set = load_set(annotations)?;
    let anchors = cfg.anchor_set()?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let mut files = Vec::new();
    for img in &set.images {
        let bundles = encode_image(img, &anchors, cfg);
        let container = OmapContainer::from_bundles(&bundles, &anchors);
        let path = out_dir.join(format!("{}.omap", img.image_id));
        container.write_file(&path).map_err(anyhow::Error::from)?;
        files.push(path.display().to_string());
        if label_pngs {
            for bundle in &bundles {
                let png = out_dir.join(format!(
                    "{}_a{}_labels.png",
                    img.image_id, bundle.anchor_index
                ));
                render::label_image(&bundle.labels)
                    .save(&png)
                    .with_context(|| format!("writing {}", png.display()))?;
                files.push(png.display().to_string());
            }
        }
    }
    print_json(&EncodeSummary {
        images: set.images.len(),
        files,
    })
}

// ---- decode -----------------------------------------------------------------

#[derive(Serialize)]
struct DecodeSummary {
    results: usize,
    skipped: usize,
    out: String,
}

fn container_for_image(maps_path: &Path, image_id: u64) -> Result<OmapContainer, CliError> {
    let path = if maps_path.is_dir() {
        maps_path.join(format!("{image_id}.omap"))
    } else {
        maps_path.to_path_buf()
    };
    OmapContainer::read_file(&path).map_err(|e| CliError::Input(e.into()))
}

pub fn cmd_decode(
    detections: &Path,
    maps_path: &Path,
    out: &Path,
    cfg: &Config,
) -> CmdResult {
    let text = std::fs::read_to_string(detections)
        .with_context(|| format!("reading {}", detections.display()))?;
    let records: Vec<DetectionRecord> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", detections.display()))?;

    let mut by_image: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for r in &records {
        by_image
            .entry(r.image_id)
            .or_default()
            .push(r.to_detection().map_err(anyhow::Error::from)?);
    }

    let dcfg = cfg.decoder_config();
    let mut results: Vec<ResultRecord> = Vec::new();
    let mut skipped = 0usize;
    for (&image_id, dets) in &by_image {
        let container = container_for_image(maps_path, image_id)?;
        let maps = container.to_orientation_maps().map_err(anyhow::Error::from)?;
        let image = ImageSpec::new(
            container.grid_width * container.stride as u32,
            container.grid_height * container.stride as u32,
        )
        .map_err(anyhow::Error::from)?;
        let output = decode_all(dets, &maps, &dcfg, image);
        for (det, err) in &output.skipped {
            log::warn!("image {image_id}: detection dropped ({err}); bbox {:?}", det.bbox);
            skipped += 1;
        }
        for (det, mask) in &output.masks {
            results.push(ResultRecord {
                image_id,
                category_id: det.category_id,
                segmentation: RleJson::from_mask(mask),
                score: det.score,
            });
        }
    }
    let json = serde_json::to_string_pretty(&results).map_err(anyhow::Error::from)?;
    std::fs::write(out, json).with_context(|| format!("writing {}", out.display()))?;
    print_json(&DecodeSummary {
        results: results.len(),
        skipped,
        out: out.display().to_string(),
    })
}

// ---- roundtrip ----------------------------------------------------------------

#[derive(Serialize)]
struct RoundtripImage {
    image_id: u64,
    per_instance_iou: Vec<f64>,
}

#[derive(Serialize)]
struct RoundtripReport {
    images: Vec<RoundtripImage>,
    instances: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_iou: Option<f64>,
    mean_ap: f64,
    floor: f64,
}

/// Encode every image, decode back with the ground-truth boxes, and score
/// the reconstruction per instance.
pub fn cmd_roundtrip(annotations: &Path, cfg: &Config, floor: f64) -> CmdResult {
    let set = load_set(annotations)?;
    let anchors = cfg.anchor_set()?;
    let dcfg = cfg.decoder_config();

    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut images = Vec::new();
    for img in &set.images {
        let bundles = encode_image(img, &anchors, cfg);
        let maps: Vec<OrientationMap> = bundles.into_iter().map(|b| b.orientation).collect();
        let dets: Vec<Detection> = img
            .instances
            .iter()
            .map(|inst| Detection {
                bbox: inst.bbox,
                score: 1.0,
                category_id: inst.category_id,
                anchor_index: match_anchor(&inst.bbox, &anchors),
            })
            .collect();
        let decoded = decode_all(&dets, &maps, &dcfg, img.spec);
        preds.push(ImagePredictions {
            detections: decoded.masks,
        });
        gts.push(ImageGroundTruth {
            instances: img.instances.clone(),
            crowds: img.crowds.clone(),
        });
        images.push(img.image_id);
    }
    let eval = evaluate(&preds, &gts, &coco_thresholds());

    let mut report = RoundtripReport {
        images: Vec::new(),
        instances: eval.per_instance_iou.len(),
        mean_iou: if eval.per_instance_iou.is_empty() {
            None
        } else {
            Some(eval.per_instance_iou.iter().sum::<f64>() / eval.per_instance_iou.len() as f64)
        },
        mean_ap: eval.mean_ap,
        floor,
    };
    let mut cursor = 0usize;
    for (img, gt) in images.iter().zip(&gts) {
        let n = gt.instances.len();
        report.images.push(RoundtripImage {
            image_id: *img,
            per_instance_iou: eval.per_instance_iou[cursor..cursor + n].to_vec(),
        });
        cursor += n;
    }
    print_json(&report)?;
    if let Some(mean) = report.mean_iou {
        if mean < floor {
            return Err(CliError::Floor { mean, floor });
        }
    }
    Ok(())
}

// ---- loss ---------------------------------------------------------------------

pub fn cmd_loss(
    pred_path: &Path,
    annotations: &Path,
    image_id: Option<u64>,
    det_loss: Option<f64>,
    cfg: &Config,
) -> CmdResult {
    let set = load_set(annotations)?;
    let img = match image_id {
        Some(id) => set
            .images
            .iter()
            .find(|i| i.image_id == id)
            .ok_or_else(|| anyhow!("image_id {id} not present in {}", annotations.display()))?,
        None => {
            if set.images.len() != 1 {
                return Err(CliError::Input(anyhow!(
                    "{} images in the annotation file; pass --image-id",
                    set.images.len()
                )));
            }
            &set.images[0]
        }
    };

    let anchors = cfg.anchor_set()?;
    let targets = encode_image(img, &anchors, cfg);

    let container = OmapContainer::read_file(pred_path).map_err(anyhow::Error::from)?;
    if container.num_maps() != anchors.len() {
        return Err(CliError::Input(anyhow!(
            "prediction container has {} maps, anchor table has {}",
            container.num_maps(),
            anchors.len()
        )));
    }
    for (i, &(w, h)) in container.anchors.iter().enumerate() {
        let a = anchors.anchor(i);
        if (w as f64 - a.width).abs() > 1e-3 || (h as f64 - a.height).abs() > 1e-3 {
            log::warn!(
                "container anchor {i} is ({w}, {h}) but the config says ({}, {})",
                a.width,
                a.height
            );
        }
    }
    let raw = container.to_orientation_maps().map_err(anyhow::Error::from)?;
    let pred: Vec<OrientationMap> = raw
        .iter()
        .map(|m| bilinear_upsample(m, img.spec).map_err(anyhow::Error::from))
        .collect::<Result<_, _>>()?;

    let mut report = orientation_loss(&pred, &targets, &anchors, &cfg.loss_config())
        .map_err(anyhow::Error::from)?;
    if let Some(det) = det_loss {
        report.combined = Some(combine_loss(det, report.orien_total, cfg.loss.lambda));
    }
    print_json(&report)
}

// ---- eval ------------------------------------------------------------------------

pub fn cmd_eval(results_path: &Path, annotations: &Path) -> CmdResult {
    let set = load_set(annotations)?;
    let text = std::fs::read_to_string(results_path)
        .with_context(|| format!("reading {}", results_path.display()))?;
    let records: Vec<ResultRecord> = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", results_path.display()))?;

    let mut by_image: BTreeMap<u64, Vec<(Detection, BinaryMask)>> = BTreeMap::new();
    let known: std::collections::HashSet<u64> = set.images.iter().map(|i| i.image_id).collect();
    for r in &records {
        if !known.contains(&r.image_id) {
            log::warn!("result for unknown image_id {}, skipped", r.image_id);
            continue;
        }
        let mask = r.segmentation.to_mask().map_err(anyhow::Error::from)?;
        let bbox = mask
            .pixel_bounds()
            .map(|(x0, y0, x1, y1)| {
                Rect::new(x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0).unwrap()
            })
            .unwrap_or_else(|| Rect::new(0.0, 0.0, 1.0, 1.0).unwrap());
        by_image.entry(r.image_id).or_default().push((
            Detection {
                bbox,
                score: r.score,
                category_id: r.category_id,
                anchor_index: 0,
            },
            mask,
        ));
    }

    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for img in &set.images {
        preds.push(ImagePredictions {
            detections: by_image.remove(&img.image_id).unwrap_or_default(),
        });
        gts.push(ImageGroundTruth {
            instances: img.instances.clone(),
            crowds: img.crowds.clone(),
        });
    }
    let result = evaluate(&preds, &gts, &coco_thresholds());

    // human-readable table on stderr, machine JSON on stdout
    eprintln!("{:<12} {:>8}", "IoU thr", "AP");
    for t in &result.ap_per_threshold {
        eprintln!("{:<12.2} {:>8.4}", t.iou_threshold, t.ap);
    }
    eprintln!("{:<12} {:>8.4}", "mean", result.mean_ap);
    for (name, v) in [
        ("AP_small", result.ap_small),
        ("AP_medium", result.ap_medium),
        ("AP_large", result.ap_large),
    ] {
        match v {
            Some(v) => eprintln!("{name:<12} {v:>8.4}"),
            None => eprintln!("{name:<12} {:>8}", "n/a"),
        }
    }
    print_json(&result)
}

// ---- bench -------------------------------------------------------------------------

#[derive(Serialize)]
struct BenchReport {
    footprint: omap_core::bench::FootprintReport,
    throughput: omap_core::bench::ThroughputReport,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_bench(
    image: ImageSpec,
    stride: u32,
    num_maps: u32,
    boxes: usize,
    workers: usize,
    seed: u64,
    repeats: usize,
    cfg: &Config,
) -> CmdResult {
    let footprint = omap_core::bench::footprint(image, stride, num_maps)
        .map_err(anyhow::Error::from)?;
    let throughput = omap_core::bench::bench_decode(
        &omap_core::bench::WorkloadSpec {
            image,
            stride,
            num_maps,
            num_boxes: boxes,
            seed,
        },
        &cfg.decoder_config(),
        workers,
        repeats.max(3),
    );
    print_json(&BenchReport {
        footprint,
        throughput,
    })
}

// ---- render ------------------------------------------------------------------------

pub struct RenderArgs {
    pub omap: Option<PathBuf>,
    pub map_index: usize,
    pub results: Option<PathBuf>,
    pub image_id: Option<u64>,
    pub background: Option<PathBuf>,
    pub size: Option<(u32, u32)>,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct RenderSummary {
    files: Vec<String>,
    overlays_drawn: Option<usize>,
}

pub fn cmd_render(args: &RenderArgs, cfg: &Config) -> CmdResult {
    match (&args.omap, &args.results) {
        (Some(omap), None) => render_field(omap, args),
        (None, Some(results)) => render_overlay(results, args, cfg),
        _ => Err(CliError::Input(anyhow!(
            "pass exactly one of --omap or --results"
        ))),
    }
}

fn out_with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    out.with_file_name(format!("{stem}_{suffix}.png"))
}

/// Per-channel signed heatmaps plus the destination-gradient map for one
/// anchor's field, at full resolution.
fn render_field(omap: &Path, args: &RenderArgs) -> CmdResult {
    let container = OmapContainer::read_file(omap).map_err(anyhow::Error::from)?;
    let maps = container.to_orientation_maps().map_err(anyhow::Error::from)?;
    let map = maps
        .get(args.map_index)
        .ok_or_else(|| anyhow!("map index {} out of range ({} maps)", args.map_index, maps.len()))?;
    let image = ImageSpec::new(
        container.grid_width * container.stride as u32,
        container.grid_height * container.stride as u32,
    )
    .map_err(anyhow::Error::from)?;
    let full = bilinear_upsample(map, image).map_err(anyhow::Error::from)?;

    let mut files = Vec::new();
    for (suffix, img) in [
        ("dx", render::heatmap_channel(&full, 0)),
        ("dy", render::heatmap_channel(&full, 1)),
        ("grad", render::gradient_map_image(&full)),
    ] {
        let path = out_with_suffix(&args.out, suffix);
        img.save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        files.push(path.display().to_string());
    }
    // ground-truth containers carry label grids; render them too
    if let Some(grids) = container.to_label_grids().map_err(anyhow::Error::from)? {
        if let Some((_, grid)) = grids.get(args.map_index) {
            let path = out_with_suffix(&args.out, "labels");
            render::label_image(grid)
                .save(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            files.push(path.display().to_string());
        }
    }
    print_json(&RenderSummary {
        files,
        overlays_drawn: None,
    })
}

/// Mask overlays over a background image or a blank canvas.
fn render_overlay(results_path: &Path, args: &RenderArgs, cfg: &Config) -> CmdResult {
    let image_id = args
        .image_id
        .ok_or_else(|| anyhow!("--image-id is required with --results"))?;
    let text = std::fs::read_to_string(results_path)
        .with_context(|| format!("reading {}", results_path.display()))?;
    let records: Vec<ResultRecord> = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", results_path.display()))?;
    let mut masks: Vec<(f64, BinaryMask)> = Vec::new();
    for r in records.iter().filter(|r| r.image_id == image_id) {
        masks.push((r.score, r.segmentation.to_mask().map_err(anyhow::Error::from)?));
    }
    masks.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut canvas = match &args.background {
        Some(path) => image::open(path)
            .with_context(|| format!("reading {}", path.display()))?
            .to_rgb8(),
        None => {
            let (w, h) = args
                .size
                .or_else(|| masks.first().map(|(_, m)| (m.width(), m.height())))
                .ok_or_else(|| anyhow!("no masks for image {image_id} and no --size given"))?;
            image::RgbImage::new(w, h)
        }
    };
    let drawn = render::draw_overlays(&mut canvas, &masks, cfg.decoder.render_threshold);
    canvas
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    print_json(&RenderSummary {
        files: vec![args.out.display().to_string()],
        overlays_drawn: Some(drawn),
    })
}
