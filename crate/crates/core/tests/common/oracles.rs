//! Brute-force references for the metrics.

#![allow(dead_code)]

use gradrecon::metrics::SsimParams;

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i - 1 } else if i >= n { 2 * n - i - 1 } else { i };
    j as usize
}

/// DSSIM at every pixel from the window definition: Gaussian-weighted means,
/// variances and covariance over a symmetric-padded neighbourhood.
pub fn dssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize, p: &SsimParams) -> Vec<f64> {
    let r = (p.window / 2) as isize;
    let mut weights = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            weights.push(((-(a * a + b * b) as f64) / (2.0 * p.sigma * p.sigma)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut px = Vec::new();
            let mut py = Vec::new();
            for a in -r..=r {
                for b in -r..=r {
                    let k = reflect(i + a, h) * w + reflect(j + b, w);
                    px.push(x[k]);
                    py.push(y[k]);
                }
            }
            let wsum = |f: &dyn Fn(usize) -> f64| (0..weights.len()).map(|k| weights[k] / total * f(k)).sum::<f64>();
            let (mx, my) = (wsum(&|k| px[k]), wsum(&|k| py[k]));
            let vx = wsum(&|k| (px[k] - mx).powi(2));
            let vy = wsum(&|k| (py[k] - my).powi(2));
            let cxy = wsum(&|k| (px[k] - mx) * (py[k] - my));
            let ssim = ((2.0 * mx * my + p.c1) * (2.0 * cxy + p.c2))
                / ((mx * mx + my * my + p.c1) * (vx + vy + p.c2));
            out.push(((1.0 - ssim) / 2.0).clamp(0.0, 1.0));
        }
    }
    out
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pair_count(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}
