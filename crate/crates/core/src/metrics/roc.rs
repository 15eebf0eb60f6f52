use super::MetricsError;

/// Area under the ROC curve plus the curve itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub auroc: f64,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
}

/// Pixel-wise AUROC of `scores` against binary `labels` (true = anomalous).
///
/// The area is the trapezoid rule over the ROC with one vertex per distinct
/// score, so a tie block between a positive and a negative counts ½. It is
/// accumulated in integer half-pair units and divided once, which makes it
/// equal to `(#{s⁺ > s⁻} + ½ #{s⁺ = s⁻}) / (P·N)` exactly.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<RocResult, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(format!("score at index {i}")));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass {
            positives: pos as usize,
            negatives: neg as usize,
        });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::with_capacity(16);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut bp, mut bn) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                bp += 1;
            } else {
                bn += 1;
            }
            i += 1;
        }
        // Trapezoid over the block: width bn, heights tp and tp + bp.
        twice_area += bn as u128 * (2 * tp as u128 + bp as u128);
        tp += bp;
        fp += bn;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auroc = twice_area as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocResult { auroc, points })
}
