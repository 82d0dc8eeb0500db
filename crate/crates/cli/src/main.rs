//! `omap` — encode, decode, score, and benchmark orientation-map instance
//! masks from the command line.

use clap::{Parser, Subcommand};
use omap_cli::commands::{self, CliError, CmdResult, RenderArgs};
use omap_cli::config::Config;
use omap_core::geom::ImageSpec;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "omap",
    about = "Codec and evaluation toolkit for orientation-map instance masks",
    version
)]
struct Cli {
    /// TOML config file; defaults match the shipped ablation winners.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = machine default). Never changes output bytes.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode COCO annotations into per-image OMAP containers.
    Encode {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-anchor label grids as PNG.
        #[arg(long)]
        label_png: bool,
        #[arg(long)]
        expand_ratio: Option<f64>,
    },
    /// Construct masks for detections from OMAP containers.
    Decode {
        /// JSON array of {image_id, bbox, score, category_id, anchor_index}.
        #[arg(long)]
        detections: PathBuf,
        /// A container file, or a directory of <image_id>.omap files.
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        score_threshold: Option<f64>,
        #[arg(long)]
        nms_iou: Option<f64>,
    },
    /// Encode then decode with ground-truth boxes and report per-instance IoU.
    Roundtrip {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        expand_ratio: Option<f64>,
        /// Exit nonzero when the mean IoU falls below this floor.
        #[arg(long, default_value_t = 0.0)]
        min_iou: f64,
    },
    /// Orientation loss of a predicted container against annotations.
    Loss {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        image_id: Option<u64>,
        /// Externally computed detection loss to fold into the combined value.
        #[arg(long)]
        det_loss: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score COCO results JSON against annotations (mask AP).
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Memory footprint and decode throughput on a synthetic workload.
    Bench {
        /// Input size as WxH, e.g. 544x544.
        #[arg(long, default_value = "544x544")]
        size: String,
        #[arg(long, default_value_t = 4)]
        stride: u32,
        #[arg(long, default_value_t = 9)]
        maps: u32,
        #[arg(long, default_value_t = 100)]
        boxes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Render overlays, orientation heatmaps, or gradient maps as PNG.
    Render {
        /// Container to visualize (heatmaps + gradient map).
        #[arg(long)]
        omap: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        map_index: usize,
        /// COCO results JSON to overlay (requires --image-id).
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        image_id: Option<u64>,
        /// Background image; otherwise a blank canvas.
        #[arg(long)]
        background: Option<PathBuf>,
        /// Canvas size as WxH when no background or masks give one.
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        render_threshold: Option<f64>,
    },
}

fn parse_size(s: &str) -> Result<(u32, u32), CliError> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| CliError::Input(anyhow::anyhow!("size must look like 544x544, got {s}")))?;
    let w = w.parse::<u32>().map_err(anyhow::Error::from)?;
    let h = h.parse::<u32>().map_err(anyhow::Error::from)?;
    Ok((w, h))
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(anyhow::Error::from)?;

    pool.install(|| match cli.cmd {
        Cmd::Encode {
            annotations,
            out,
            label_png,
            expand_ratio,
        } => {
            if let Some(r) = expand_ratio {
                cfg.encoder.expand_ratio = r;
            }
            cfg.validate()?;
            commands::cmd_encode(&annotations, &out, &cfg, label_png)
        }
        Cmd::Decode {
            detections,
            maps,
            out,
            tau,
            score_threshold,
            nms_iou,
        } => {
            if let Some(t) = tau {
                cfg.decoder.contraction = t;
            }
            if let Some(s) = score_threshold {
                cfg.decoder.score_threshold = s;
            }
            if let Some(n) = nms_iou {
                cfg.decoder.nms_iou = n;
            }
            cfg.validate()?;
            commands::cmd_decode(&detections, &maps, &out, &cfg)
        }
        Cmd::Roundtrip {
            annotations,
            tau,
            expand_ratio,
            min_iou,
        } => {
            if let Some(t) = tau {
                cfg.decoder.contraction = t;
            }
            if let Some(r) = expand_ratio {
                cfg.encoder.expand_ratio = r;
            }
            cfg.validate()?;
            commands::cmd_roundtrip(&annotations, &cfg, min_iou)
        }
        Cmd::Loss {
            pred,
            annotations,
            image_id,
            det_loss,
            lambda,
        } => {
            if let Some(l) = lambda {
                cfg.loss.lambda = l;
            }
            cfg.validate()?;
            commands::cmd_loss(&pred, &annotations, image_id, det_loss, &cfg)
        }
        Cmd::Eval {
            results,
            annotations,
        } => commands::cmd_eval(&results, &annotations),
        Cmd::Bench {
            size,
            stride,
            maps,
            boxes,
            seed,
            repeats,
        } => {
            let (w, h) = parse_size(&size)?;
            let image = ImageSpec::new(w, h).map_err(anyhow::Error::from)?;
            commands::cmd_bench(image, stride, maps, boxes, cfg.workers, seed, repeats, &cfg)
        }
        Cmd::Render {
            omap,
            map_index,
            results,
            image_id,
            background,
            size,
            out,
            render_threshold,
        } => {
            if let Some(t) = render_threshold {
                cfg.decoder.render_threshold = t;
            }
            cfg.validate()?;
            let size = match size {
                Some(s) => Some(parse_size(&s)?),
                None => None,
            };
            commands::cmd_render(
                &RenderArgs {
                    omap,
                    map_index,
                    results,
                    image_id,
                    background,
                    size,
                    out,
                },
                &cfg,
            )
        }
    })
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Input(e)) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
        Err(CliError::Floor { mean, floor }) => {
            eprintln!("round-trip mean IoU {mean:.4} below the floor {floor:.4}");
            std::process::exit(3);
        }
    }
}
