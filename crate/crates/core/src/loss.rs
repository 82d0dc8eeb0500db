//! Orientation loss between predicted and target maps, plus the combined
//! objective.
//!
//! Per supervised pixel the loss is an elementwise smooth-L1 over the two
//! vector components, with both prediction and target normalized by the
//! anchor size of the map they live on. Positive and negative samples are
//! averaged separately and weighted by the instance count.

use crate::encoder::{Label, TargetBundle};
use crate::field::OrientationMap;
use crate::grouping::AnchorSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("expected {expected} prediction maps, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("prediction map {0} is not aligned with its target (anchor/stride/dims)")]
    Misaligned(usize),
    #[error("loss config invalid: {0}")]
    BadConfig(String),
}

/// How sample counts are pooled before forming the averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Pool `N_inst`, `N_pos`, `N_neg` over the maps of one scale.
    #[default]
    PerScale,
    /// Treat every map as its own pool.
    PerMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the orientation term in the combined objective.
    pub lambda: f64,
    pub smooth_l1_beta: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 20.0,
            smooth_l1_beta: 1.0,
            aggregation: Aggregation::PerScale,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda >= 0.0) {
            return Err(LossError::BadConfig(format!("lambda = {}", self.lambda)));
        }
        if !(self.smooth_l1_beta > 0.0) {
            return Err(LossError::BadConfig(format!(
                "smooth_l1_beta = {}",
                self.smooth_l1_beta
            )));
        }
        Ok(())
    }
}

/// Positive and negative terms of one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTerms {
    pub pos_term: f64,
    pub neg_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_scale: Vec<ScaleTerms>,
    pub orien_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combined: Option<f64>,
}

/// Standard smooth-L1: quadratic within `beta` of zero, linear outside.
pub fn smooth_l1(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

/// Raw per-map sums before any averaging.
#[derive(Debug, Clone, Copy, Default)]
struct MapSums {
    pos_sum: f64,
    neg_sum: f64,
    n_pos: usize,
    n_neg: usize,
    n_inst: usize,
}

fn map_sums(pred: &OrientationMap, target: &TargetBundle, anchor: (f64, f64), beta: f64) -> MapSums {
    let (aw, ah) = anchor;
    let (w, h) = (pred.grid_width(), pred.grid_height());
    let pd = pred.data();
    let td = target.orientation.data();
    let labels = target.labels.labels();
    let mut sums = MapSums {
        n_pos: target.n_pos,
        n_neg: target.n_neg,
        n_inst: target.n_inst,
        ..MapSums::default()
    };
    for idx in 0..(w as usize * h as usize) {
        let label = labels[idx];
        if label == Label::Ignore {
            continue;
        }
        let dx = (pd[idx * 2] - td[idx * 2]) / aw;
        let dy = (pd[idx * 2 + 1] - td[idx * 2 + 1]) / ah;
        let l = smooth_l1(dx, beta) + smooth_l1(dy, beta);
        match label {
            Label::Negative => sums.neg_sum += l,
            Label::Positive(_) => sums.pos_sum += l,
            Label::Ignore => unreachable!(),
        }
    }
    sums
}

/// Orientation loss of full-resolution predictions against targets, reported
/// per scale. Predictions must be upsampled to full resolution first and
/// aligned with targets by anchor index.
pub fn orientation_loss(
    pred: &[OrientationMap],
    targets: &[TargetBundle],
    anchors: &AnchorSet,
    cfg: &LossConfig,
) -> Result<LossReport, LossError> {
    cfg.validate()?;
    if pred.len() != anchors.len() || targets.len() != anchors.len() {
        return Err(LossError::CountMismatch {
            expected: anchors.len(),
            got: pred.len().min(targets.len()),
        });
    }
    for (i, (p, t)) in pred.iter().zip(targets).enumerate() {
        let aligned = p.anchor_index() == i
            && t.anchor_index == i
            && p.stride() == 1
            && t.orientation.stride() == 1
            && p.grid_width() == t.orientation.grid_width()
            && p.grid_height() == t.orientation.grid_height();
        if !aligned {
            return Err(LossError::Misaligned(i));
        }
    }

    // Per-map sums in parallel; reduction below walks anchor order, so the
    // result is independent of scheduling.
    let sums: Vec<MapSums> = pred
        .par_iter()
        .zip(targets.par_iter())
        .enumerate()
        .map(|(i, (p, t))| {
            let a = anchors.anchor(i);
            map_sums(p, t, (a.width, a.height), cfg.smooth_l1_beta)
        })
        .collect();

    let term = |sum: f64, n_inst: usize, n: usize| -> f64 {
        if n == 0 {
            0.0
        } else {
            (n_inst as f64 / n as f64) * sum
        }
    };

    let aps = anchors.anchors_per_scale();
    let mut per_scale = Vec::with_capacity(anchors.num_scales());
    for scale in 0..anchors.num_scales() {
        let range = scale * aps..(scale + 1) * aps;
        let (mut pos_term, mut neg_term) = (0.0, 0.0);
        match cfg.aggregation {
            Aggregation::PerScale => {
                let n_inst: usize = sums[range.clone()].iter().map(|s| s.n_inst).sum();
                let n_pos: usize = sums[range.clone()].iter().map(|s| s.n_pos).sum();
                let n_neg: usize = sums[range.clone()].iter().map(|s| s.n_neg).sum();
                let pos_sum: f64 = sums[range.clone()].iter().map(|s| s.pos_sum).sum();
                let neg_sum: f64 = sums[range.clone()].iter().map(|s| s.neg_sum).sum();
                pos_term = term(pos_sum, n_inst, n_pos);
                neg_term = term(neg_sum, n_inst, n_neg);
            }
            Aggregation::PerMap => {
                for s in &sums[range.clone()] {
                    pos_term += term(s.pos_sum, s.n_inst, s.n_pos);
                    neg_term += term(s.neg_sum, s.n_inst, s.n_neg);
                }
            }
        }
        per_scale.push(ScaleTerms { pos_term, neg_term });
    }

    let orien_total = per_scale.iter().map(|s| s.pos_term + s.neg_term).sum();
    Ok(LossReport {
        per_scale,
        orien_total,
        combined: None,
    })
}

/// Combined objective: the detection loss is supplied externally.
pub fn combine_loss(det_loss: f64, orien_total: f64, lambda: f64) -> f64 {
    det_loss + lambda * orien_total
}
