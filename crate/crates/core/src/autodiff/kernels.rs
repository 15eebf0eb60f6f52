// Convolution kernels via im2col + GEMM, and symmetric padding.

use crate::element::{gemm, Element, Trans};

/// Geometry shared by im2col/col2im: an image of `channels x height x width`
/// sampled by a `kh x kw` window at `out_h x out_w` positions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output extent of a strided convolution, `None` if the kernel does not fit.
pub(crate) fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution, `None` if non-positive.
pub(crate) fn conv_transpose_out_size(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Option<usize> {
    let full = (input - 1) * stride + kernel;
    (full > 2 * pad).then(|| full - 2 * pad)
}

pub(crate) fn im2col<E: Element>(img: &[E], g: &ConvGeom, cols: &mut [E]) {
    let ncols = g.col_cols();
    debug_assert_eq!(cols.len(), g.col_rows() * ncols);
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oi * g.out_w..(oi + 1) * g.out_w];
                    if ii < 0 || ii >= g.height as isize {
                        seg.iter_mut().for_each(|v| *v = E::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    for (oj, v) in seg.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.width as isize {
                            E::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back into an image (adjoint of `im2col`).
pub(crate) fn col2im_add<E: Element>(cols: &[E], g: &ConvGeom, img: &mut [E]) {
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    let seg = &src[oi * g.out_w..(oi + 1) * g.out_w];
                    for (oj, &v) in seg.iter().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.width as isize {
                            dst[jj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward conv for a batch. `x [n, C*H*W]`, `w [O, C*kh*kw]`, `out [n, O*oh*ow]`.
pub(crate) fn conv2d_forward<E: Element>(
    x: &[E],
    w: &[E],
    bias: Option<&[E]>,
    batch: usize,
    out_channels: usize,
    g: &ConvGeom,
) -> Vec<E> {
    let in_len = g.channels * g.height * g.width;
    let out_len = out_channels * g.col_cols();
    let mut out = vec![E::zero(); batch * out_len];
    let mut cols = if g.is_identity() {
        Vec::new()
    } else {
        vec![E::zero(); g.col_rows() * g.col_cols()]
    };
    for n in 0..batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let on = &mut out[n * out_len..(n + 1) * out_len];
        let src: &[E] = if g.is_identity() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        gemm(out_channels, g.col_rows(), g.col_cols(), w, Trans::No, src, Trans::No, on, false);
        if let Some(b) = bias {
            add_channel_bias(on, b, g.col_cols());
        }
    }
    out
}

/// Backward conv. Returns `(dx, dw, db)`, each only when requested.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub(crate) fn conv2d_backward<E: Element>(
    x: &[E],
    w: &[E],
    dout: &[E],
    batch: usize,
    out_channels: usize,
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<E>>, Option<Vec<E>>, Option<Vec<E>>) {
    let in_len = g.channels * g.height * g.width;
    let out_len = out_channels * g.col_cols();
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut dx = want_dx.then(|| vec![E::zero(); batch * in_len]);
    let mut dw = want_dw.then(|| vec![E::zero(); out_channels * rows]);
    let mut db = want_db.then(|| vec![E::zero(); out_channels]);
    let mut cols = vec![E::zero(); rows * ncols];
    for n in 0..batch {
        let dn = &dout[n * out_len..(n + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            let xn = &x[n * in_len..(n + 1) * in_len];
            let src: &[E] = if g.is_identity() {
                xn
            } else {
                im2col(xn, g, &mut cols);
                &cols
            };
            gemm(out_channels, ncols, rows, dn, Trans::No, src, Trans::Yes, dw, true);
        }
        if let Some(db) = db.as_mut() {
            accumulate_channel_sums(dn, db, ncols);
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_identity() {
                gemm(rows, out_channels, ncols, w, Trans::Yes, dn, Trans::No, dxn, true);
            } else {
                gemm(rows, out_channels, ncols, w, Trans::Yes, dn, Trans::No, &mut cols, false);
                col2im_add(&cols, g, dxn);
            }
        }
    }
    (dx, dw, db)
}

/// Forward transposed conv. `x [n, C*H*W]` where `C*H*W` lives on the column
/// side of `g`; `w [C, O*kh*kw]`; output image side is `O x g.height x g.width`.
pub(crate) fn conv_transpose2d_forward<E: Element>(
    x: &[E],
    w: &[E],
    bias: Option<&[E]>,
    batch: usize,
    in_channels: usize,
    g: &ConvGeom,
) -> Vec<E> {
    let in_len = in_channels * g.col_cols();
    let out_len = g.channels * g.height * g.width;
    let mut out = vec![E::zero(); batch * out_len];
    let mut cols = vec![E::zero(); g.col_rows() * g.col_cols()];
    for n in 0..batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let on = &mut out[n * out_len..(n + 1) * out_len];
        gemm(g.col_rows(), in_channels, g.col_cols(), w, Trans::Yes, xn, Trans::No, &mut cols, false);
        col2im_add(&cols, g, on);
        if let Some(b) = bias {
            add_channel_bias(on, b, g.height * g.width);
        }
    }
    out
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub(crate) fn conv_transpose2d_backward<E: Element>(
    x: &[E],
    w: &[E],
    dout: &[E],
    batch: usize,
    in_channels: usize,
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<E>>, Option<Vec<E>>, Option<Vec<E>>) {
    let in_len = in_channels * g.col_cols();
    let out_len = g.channels * g.height * g.width;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut dx = want_dx.then(|| vec![E::zero(); batch * in_len]);
    let mut dw = want_dw.then(|| vec![E::zero(); in_channels * rows]);
    let mut db = want_db.then(|| vec![E::zero(); g.channels]);
    let mut cols = vec![E::zero(); rows * ncols];
    for n in 0..batch {
        let dn = &dout[n * out_len..(n + 1) * out_len];
        if let Some(db) = db.as_mut() {
            accumulate_channel_sums(dn, db, g.height * g.width);
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        im2col(dn, g, &mut cols);
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            gemm(in_channels, rows, ncols, w, Trans::No, &cols, Trans::No, dxn, false);
        }
        if let Some(dw) = dw.as_mut() {
            let xn = &x[n * in_len..(n + 1) * in_len];
            gemm(in_channels, ncols, rows, xn, Trans::No, &cols, Trans::Yes, dw, true);
        }
    }
    (dx, dw, db)
}

fn add_channel_bias<E: Element>(out: &mut [E], bias: &[E], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_sums<E: Element>(d: &[E], acc: &mut [E], plane: usize) {
    for (c, a) in acc.iter_mut().enumerate() {
        *a += d[c * plane..(c + 1) * plane].iter().copied().sum::<E>();
    }
}

/// Maps a possibly out-of-range index onto `[0, n)` by half-sample symmetric
/// reflection (`-1 -> 0`, `n -> n-1`), folding repeatedly for large offsets.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Symmetric spatial padding of `[planes, h, w]` data.
pub(crate) fn pad_symmetric_forward<E: Element>(
    x: &[E],
    planes: usize,
    h: usize,
    w: usize,
    pad: usize,
) -> Vec<E> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(planes * ph * pw);
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for i in 0..ph {
            let si = reflect_index(i as isize - pad as isize, h);
            for j in 0..pw {
                let sj = reflect_index(j as isize - pad as isize, w);
                out.push(plane[si * w + sj]);
            }
        }
    }
    out
}

pub(crate) fn pad_symmetric_backward<E: Element>(
    dout: &[E],
    planes: usize,
    h: usize,
    w: usize,
    pad: usize,
) -> Vec<E> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut dx = vec![E::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dout[p * ph * pw..(p + 1) * ph * pw];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..ph {
            let si = reflect_index(i as isize - pad as isize, h);
            for j in 0..pw {
                let sj = reflect_index(j as isize - pad as isize, w);
                dst[si * w + sj] += src[i * pw + j];
            }
        }
    }
    dx
}
