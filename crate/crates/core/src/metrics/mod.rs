//! Anomaly maps and how well they segment defects.

mod roc;
mod scores;
pub mod ssim;
mod stats;

pub use roc::{auroc, RocResult};
pub use scores::{score_baselines, ScoreMaps};
pub use ssim::{anomaly_map, dssim_map, SsimParams};
pub use stats::{histogram, improvement_rate, summarize, Bin, Summary};

use crate::element::Element;
use crate::models::ModelError;
use crate::projector::ProjectionTrace;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("AUROC needs both classes, got {positives} positive and {negatives} negative labels")]
    SingleClass { positives: usize, negatives: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What a per-pixel score measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Dssim,
    ReconSq,
    GradAbs,
    Product,
    KlGrad,
    KlProduct,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Dssim => "dssim",
            ScoreKind::ReconSq => "recon-sq",
            ScoreKind::GradAbs => "grad-abs",
            ScoreKind::Product => "product",
            ScoreKind::KlGrad => "kl-grad",
            ScoreKind::KlProduct => "kl-product",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A per-pixel score over the `H×W` image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub scores: Tensor<f64>,
    pub kind: ScoreKind,
}

/// `(C, H, W)` of an `[H,W]`, `[C,H,W]` or `[1,C,H,W]` image.
pub(crate) fn image_planes(shape: &[usize]) -> Result<(usize, usize, usize), MetricsError> {
    match *shape {
        [h, w] => Ok((1, h, w)),
        [c, h, w] | [1, c, h, w] => Ok((c, h, w)),
        _ => Err(MetricsError::ShapeMismatch(format!(
            "expected an image shape, got {shape:?}"
        ))),
    }
}

pub(crate) fn channel_mean(v: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let n = h * w;
    (0..n)
        .map(|i| (0..c).map(|ch| v[ch * n + i]).sum::<f64>() / c as f64)
        .collect()
}

/// Ground-truth labels from a mask: a pixel is anomalous when its value
/// exceeds one half.
pub fn mask_labels<E: Element>(mask: &Tensor<E>) -> Vec<bool> {
    mask.data().iter().map(|v| v.to_f64() > 0.5).collect()
}

/// AUROC of one map against one `[H,W]` (or `[1,H,W]`) mask.
pub fn map_auroc<E: Element>(map: &AnomalyMap, mask: &Tensor<E>) -> Result<f64, MetricsError> {
    if map.scores.len() != mask.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "map {:?} vs mask {:?}",
            map.scores.shape(),
            mask.shape()
        )));
    }
    Ok(auroc(map.scores.data(), &mask_labels(mask))?.auroc)
}

/// AUROC over the pixels of all images pooled together.
pub fn pooled_auroc<E: Element>(maps: &[AnomalyMap], masks: &[Tensor<E>]) -> Result<f64, MetricsError> {
    if maps.len() != masks.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} maps vs {} masks",
            maps.len(),
            masks.len()
        )));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (m, k) in maps.iter().zip(masks) {
        if m.scores.len() != k.len() {
            return Err(MetricsError::ShapeMismatch(format!(
                "map {:?} vs mask {:?}",
                m.scores.shape(),
                k.shape()
            )));
        }
        scores.extend_from_slice(m.scores.data());
        labels.extend(mask_labels(k));
    }
    Ok(auroc(&scores, &labels)?.auroc)
}

/// Anomaly maps of one image at a sequence of iterations.
pub type SnapshotMaps = Vec<(usize, AnomalyMap)>;

/// Mean per-image AUROC at each recorded iteration.
///
/// Every image must have been snapshotted at the same iterations, and every
/// mask must contain both classes.
pub fn auroc_per_iteration<E: Element>(
    series: &[SnapshotMaps],
    masks: &[Tensor<E>],
) -> Result<Vec<(usize, f64)>, MetricsError> {
    if series.is_empty() || series.len() != masks.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} snapshot series vs {} masks",
            series.len(),
            masks.len()
        )));
    }
    let iters: Vec<usize> = series[0].iter().map(|(t, _)| *t).collect();
    for (i, s) in series.iter().enumerate() {
        if s.iter().map(|(t, _)| *t).ne(iters.iter().copied()) {
            return Err(MetricsError::InvalidArgument(format!(
                "image {i} was snapshotted at different iterations than image 0"
            )));
        }
    }
    let mut out = Vec::with_capacity(iters.len());
    for (k, &t) in iters.iter().enumerate() {
        let mut total = 0.0;
        for (s, m) in series.iter().zip(masks) {
            total += map_auroc(&s[k].1, m)?;
        }
        out.push((t, total / series.len() as f64));
    }
    Ok(out)
}

/// DSSIM maps of a projection trace's snapshots against `x₀`.
///
/// The iteration-0 map compares `x₀` with its plain reconstruction `f(x₀)`,
/// so a series starts at the baseline score.
pub fn trace_maps<E: Element>(x0: &Tensor<E>, trace: &ProjectionTrace<E>) -> Result<SnapshotMaps, MetricsError> {
    trace
        .snapshots
        .iter()
        .map(|(t, img)| {
            let other = if *t == 0 { &trace.initial_reconstruction } else { img };
            Ok((*t, anomaly_map(x0, other)?))
        })
        .collect()
}
