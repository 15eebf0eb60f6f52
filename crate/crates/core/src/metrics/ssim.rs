use super::{image_planes, AnomalyMap, MetricsError, ScoreKind};
use crate::autodiff::kernels::reflect_index;
use crate::element::Element;
use crate::tensor::Tensor;

/// Window and stabilizing constants of SSIM for dynamic range 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Odd side length of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

/// Normalized 1-D Gaussian weights of odd length `size`.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Row-major outer product of the 1-D kernel with itself.
pub fn gaussian_kernel_2d(size: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel_1d(size, sigma);
    k.iter().flat_map(|&a| k.iter().map(move |&b| a * b)).collect()
}

/// Separable Gaussian filter of an `h×w` plane with symmetric borders.
fn blur(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        let row = &plane[i * w..(i + 1) * w];
        for j in 0..w {
            let mut acc = 0.0;
            for (t, &kt) in k.iter().enumerate() {
                acc += kt * row[reflect_index(j as isize + t as isize - r, w)];
            }
            tmp[i * w + j] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for (t, &kt) in k.iter().enumerate() {
            let src = reflect_index(i as isize + t as isize - r, h) * w;
            for j in 0..w {
                out[i * w + j] += kt * tmp[src + j];
            }
        }
    }
    out
}

/// Per-pixel DSSIM `(1 − SSIM)/2` of one pair of planes, unclamped.
pub(crate) fn dssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, p: &SsimParams) -> Vec<f64> {
    let k = gaussian_kernel_1d(p.window, p.sigma);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = blur(x, h, w, &k);
    let my = blur(y, h, w, &k);
    let exx = blur(&prod(x, x), h, w, &k);
    let eyy = blur(&prod(y, y), h, w, &k);
    let exy = blur(&prod(x, y), h, w, &k);
    (0..h * w)
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let vx = exx[i] - a * a;
            let vy = eyy[i] - b * b;
            let cov = exy[i] - a * b;
            let ssim = ((2.0 * a * b + p.c1) * (2.0 * cov + p.c2))
                / ((a * a + b * b + p.c1) * (vx + vy + p.c2));
            (1.0 - ssim) / 2.0
        })
        .collect()
}

/// Per-pixel DSSIM of two same-shaped images, averaged over channels and
/// clamped to `[0, 1]`.
///
/// Images may be `[H,W]`, `[C,H,W]` or `[1,C,H,W]`; the map is `[H,W]`.
pub fn dssim_map<E: Element>(
    x: &Tensor<E>,
    y: &Tensor<E>,
    params: &SsimParams,
) -> Result<AnomalyMap, MetricsError> {
    if x.shape() != y.shape() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if params.window % 2 == 0 || !(params.sigma > 0.0) {
        return Err(MetricsError::InvalidArgument(
            "SSIM window must be odd and sigma positive".into(),
        ));
    }
    let (c, h, w) = image_planes(x.shape())?;
    let xd: Vec<f64> = x.data().iter().map(|v| v.to_f64()).collect();
    let yd: Vec<f64> = y.data().iter().map(|v| v.to_f64()).collect();
    let mut acc = vec![0.0; h * w];
    for ch in 0..c {
        let r = ch * h * w..(ch + 1) * h * w;
        let d = dssim_plane(&xd[r.clone()], &yd[r], h, w, params);
        for (a, v) in acc.iter_mut().zip(d) {
            *a += v;
        }
    }
    let scores = acc
        .into_iter()
        .map(|v| (v / c as f64).clamp(0.0, 1.0))
        .collect();
    Ok(AnomalyMap {
        scores: Tensor::from_raw(vec![h, w], scores),
        kind: ScoreKind::Dssim,
    })
}

/// DSSIM between an image and its projection with the default window.
pub fn anomaly_map<E: Element>(x0: &Tensor<E>, projected: &Tensor<E>) -> Result<AnomalyMap, MetricsError> {
    dssim_map(x0, projected, &SsimParams::default())
}
