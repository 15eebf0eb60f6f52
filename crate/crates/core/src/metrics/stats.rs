use super::MetricsError;
use crate::models::quantile_sorted;
use serde::Serialize;

/// `(auc_grad − auc_base) / auc_base`.
pub fn improvement_rate(auc_grad: f64, auc_base: f64) -> Result<f64, MetricsError> {
    if !(auc_base > 0.0) || !auc_grad.is_finite() || !auc_base.is_finite() {
        return Err(MetricsError::InvalidArgument(format!(
            "improvement rate needs a positive finite baseline, got {auc_base}"
        )));
    }
    Ok((auc_grad - auc_base) / auc_base)
}

/// Location summary of a sample; quartiles interpolate linearly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::InvalidArgument("cannot summarize an empty sample".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Summary {
        count: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        median: quantile_sorted(&s, 0.5),
        q1: quantile_sorted(&s, 0.25),
        q3: quantile_sorted(&s, 0.75),
        min: s[0],
        max: s[s.len() - 1],
    })
}

/// One histogram bin, `[lo, hi)` except the last, which is closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins spanning the sample range (a single bin if all equal).
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<Bin>, MetricsError> {
    if values.is_empty() || bins == 0 {
        return Err(MetricsError::InvalidArgument("histogram needs values and bins > 0".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(vec![Bin {
            lo,
            hi,
            count: values.len(),
        }]);
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|b| Bin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    Ok(out)
}
