//! Declarative configuration: a TOML file whose every field has a default
//! and can be overridden from the command line.

use omap_core::decoder::DecoderConfig;
use omap_core::encoder::EncoderConfig;
use omap_core::geom::ImageSpec;
use omap_core::grouping::{Anchor, AnchorSet};
use omap_core::loss::{Aggregation, LossConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Worker threads; 0 lets the pool pick the machine default.
    pub workers: usize,
    pub input: InputConfig,
    pub anchors: AnchorConfig,
    pub encoder: EncoderSection,
    pub decoder: DecoderSection,
    pub loss: LossSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub width: u32,
    pub height: u32,
    pub stride: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub anchors_per_scale: usize,
    /// `[w, h]` pairs, scale-major order.
    pub priors: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub expand_ratio: f64,
    pub clip_to_image: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub contraction: f64,
    pub nms_iou: f64,
    pub score_threshold: f64,
    pub render_threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub smooth_l1_beta: f64,
    pub aggregation: Aggregation,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            workers: 0,
            input: InputConfig::default(),
            anchors: AnchorConfig::default(),
            encoder: EncoderSection::default(),
            decoder: DecoderSection::default(),
            loss: LossSection::default(),
        }
    }
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            width: 544,
            height: 544,
            stride: 4,
        }
    }
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            anchors_per_scale: 3,
            priors: omap_core::grouping::DEFAULT_PRIORS
                .iter()
                .map(|&(w, h)| [w, h])
                .collect(),
        }
    }
}

impl Default for EncoderSection {
    fn default() -> Self {
        let c = EncoderConfig::default();
        EncoderSection {
            expand_ratio: c.expand_ratio,
            clip_to_image: c.clip_to_image,
        }
    }
}

impl Default for DecoderSection {
    fn default() -> Self {
        let c = DecoderConfig::default();
        DecoderSection {
            contraction: c.contraction,
            nms_iou: c.nms_iou,
            score_threshold: c.score_threshold,
            render_threshold: c.render_threshold,
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let c = LossConfig::default();
        LossSection {
            lambda: c.lambda,
            smooth_l1_beta: c.smooth_l1_beta,
            aggregation: c.aggregation,
        }
    }
}

impl Config {
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.anchor_set()?;
        self.image_spec()?;
        if !(self.encoder.expand_ratio >= 1.0) {
            anyhow::bail!("encoder.expand_ratio must be >= 1.0");
        }
        if !(self.decoder.contraction > 0.0) {
            anyhow::bail!("decoder.contraction must be positive");
        }
        for (name, v) in [
            ("decoder.nms_iou", self.decoder.nms_iou),
            ("decoder.score_threshold", self.decoder.score_threshold),
            ("decoder.render_threshold", self.decoder.render_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                anyhow::bail!("{name} must lie in [0, 1]");
            }
        }
        self.loss_config().validate()?;
        Ok(())
    }

    pub fn anchor_set(&self) -> anyhow::Result<AnchorSet> {
        let priors: Vec<Anchor> = self
            .anchors
            .priors
            .iter()
            .map(|&[w, h]| Anchor::new(w, h))
            .collect();
        let aps = self.anchors.anchors_per_scale;
        if aps == 0 || priors.len() % aps != 0 {
            anyhow::bail!(
                "anchor table of {} priors does not divide into scales of {aps}",
                priors.len()
            );
        }
        Ok(AnchorSet::new(priors.clone(), aps, priors.len() / aps)?)
    }

    pub fn image_spec(&self) -> anyhow::Result<ImageSpec> {
        let spec = ImageSpec::new(self.input.width, self.input.height)?;
        spec.check_stride(self.input.stride)?;
        Ok(spec)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            expand_ratio: self.encoder.expand_ratio,
            clip_to_image: self.encoder.clip_to_image,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            contraction: self.decoder.contraction,
            nms_iou: self.decoder.nms_iou,
            score_threshold: self.decoder.score_threshold,
            render_threshold: self.decoder.render_threshold,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.loss.lambda,
            smooth_l1_beta: self.loss.smooth_l1_beta,
            aggregation: self.loss.aggregation,
        }
    }
}
