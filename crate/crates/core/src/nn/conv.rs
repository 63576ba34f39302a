//! 2-D convolution, stride 1, odd kernel, same zero padding.
//!
//! Kernels are written as row-contiguous AXPY/dot loops so the per-row inner
//! loops vectorize while keeping a fixed summation order; re-running the same
//! inputs reproduces results bit for bit.

use crate::error::{Result, SplitFedError};
use crate::tensor::Tensor;

/// `y += a * x` over matching slices.
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent accumulator lanes and a fixed combine
/// tree, so the reduction order never varies.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut s = [0.0f64; 8];
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            s[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let lo = (s[0] + s[1]) + (s[2] + s[3]);
    let hi = (s[4] + s[5]) + (s[6] + s[7]);
    (lo + hi) + tail
}

fn check_args(x: &Tensor, w: &[f64], b: &[f64], out_ch: usize, k: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, in_ch, h, wd) = x.dims4()?;
    if k == 0 || k % 2 == 0 {
        return Err(SplitFedError::Shape(format!(
            "conv kernel size must be odd, got {k}"
        )));
    }
    if w.len() != out_ch * in_ch * k * k {
        return Err(SplitFedError::Shape(format!(
            "conv weights expect {} values for {out_ch}x{in_ch}x{k}x{k}, got {}",
            out_ch * in_ch * k * k,
            w.len()
        )));
    }
    if b.len() != out_ch {
        return Err(SplitFedError::Shape(format!(
            "conv bias expects {out_ch} values, got {}",
            b.len()
        )));
    }
    Ok((n, in_ch, h, wd))
}

/// Row intersection for a kernel offset: output columns `x0..x1` read input
/// columns `x0+dx..x1+dx`.
#[inline]
fn col_span(width: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = ((width as isize - d).max(0) as usize).min(width);
    (lo, hi.max(lo))
}

/// Accumulates one input row into one output row with a 3-tap kernel row
/// `[w_left, w_center, w_right]`, zero padding at both ends. A single fused
/// pass over the row keeps the loop vectorizable and the tap order fixed.
#[inline]
fn conv3_row(wr: &[f64], src: &[f64], dst: &mut [f64]) {
    let w = dst.len();
    debug_assert_eq!(src.len(), w);
    if w == 1 {
        dst[0] += wr[1] * src[0];
        return;
    }
    dst[0] += wr[1] * src[0] + wr[2] * src[1];
    let interior = w - 2;
    let (a, rest) = (&src[..interior], &src[1..]);
    let b = &rest[..interior];
    let c = &src[2..];
    for (i, out) in dst[1..w - 1].iter_mut().enumerate() {
        *out += wr[0] * a[i] + wr[1] * b[i] + wr[2] * c[i];
    }
    dst[w - 1] += wr[0] * src[w - 2] + wr[1] * src[w - 1];
}

/// 3x3 fast path shared by the forward pass and the input-gradient pass
/// (which is a correlation with the flipped kernel): accumulates `src_plane`
/// into `dst_plane` through the 3x3 taps in `w9`.
#[inline]
fn conv3_plane(w9: &[f64], src: &[f64], dst: &mut [f64], h: usize, wd: usize) {
    for y in 0..h {
        let dst_row_start = y * wd;
        for ky in 0..3usize {
            let iy = y as isize + ky as isize - 1;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let src_row_start = iy as usize * wd;
            conv3_row(
                &w9[ky * 3..ky * 3 + 3],
                &src[src_row_start..src_row_start + wd],
                &mut dst[dst_row_start..dst_row_start + wd],
            );
        }
    }
}

pub fn forward(x: &Tensor, w: &[f64], b: &[f64], out_ch: usize, k: usize) -> Result<Tensor> {
    let (n, in_ch, h, wd) = check_args(x, w, b, out_ch, k)?;
    let pad = (k / 2) as isize;
    let xs = x.data();
    let mut out = vec![0.0f64; n * out_ch * h * wd];
    let plane = h * wd;
    for bi in 0..n {
        for oc in 0..out_ch {
            let obase = (bi * out_ch + oc) * plane;
            out[obase..obase + plane].fill(b[oc]);
            for ic in 0..in_ch {
                let ibase = (bi * in_ch + ic) * plane;
                let wbase = (oc * in_ch + ic) * k * k;
                if k == 3 {
                    conv3_plane(
                        &w[wbase..wbase + 9],
                        &xs[ibase..ibase + plane],
                        &mut out[obase..obase + plane],
                        h,
                        wd,
                    );
                    continue;
                }
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let wv = w[wbase + ky * k + kx];
                        let (x0, x1) = col_span(wd, dx);
                        if x0 == x1 {
                            continue;
                        }
                        let (y0, y1) = col_span(h, dy);
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let irow = ibase + iy * wd;
                            let orow = obase + y * wd;
                            let src = &xs[irow + (x0 as isize + dx) as usize
                                ..irow + (x1 as isize + dx) as usize];
                            axpy(wv, src, &mut out[orow + x0..orow + x1]);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, out_ch, h, wd], out)
}

/// Returns `(dw, db, dx)` for the cached input `x` and upstream gradient `dy`.
pub fn backward(
    x: &Tensor,
    w: &[f64],
    dy: &Tensor,
    out_ch: usize,
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>, Tensor)> {
    let (n, in_ch, h, wd) = check_args(x, w, &vec![0.0; out_ch], out_ch, k)?;
    let (dn, dc, dh, dw_) = dy.dims4()?;
    if (dn, dc, dh, dw_) != (n, out_ch, h, wd) {
        return Err(SplitFedError::Shape(format!(
            "conv backward: gradient shape {:?} does not match output of {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let pad = (k / 2) as isize;
    let plane = h * wd;
    let xs = x.data();
    let dys = dy.data();

    // Bias gradient: plain sums per output channel, batch-major order.
    let mut db = vec![0.0f64; out_ch];
    for bi in 0..n {
        for oc in 0..out_ch {
            let base = (bi * out_ch + oc) * plane;
            let mut acc = 0.0;
            for v in &dys[base..base + plane] {
                acc += v;
            }
            db[oc] += acc;
        }
    }

    // Weight gradient: dw[oc][ic][ky][kx] = sum over batch and rows of
    // dot(dy row segment, shifted x row segment). Batch-outer order keeps the
    // per-sample planes (a few KB) cache-resident across the channel loops.
    let mut dwv = vec![0.0f64; out_ch * in_ch * k * k];
    for bi in 0..n {
        for oc in 0..out_ch {
            let gbase = (bi * out_ch + oc) * plane;
            for ic in 0..in_ch {
                let ibase = (bi * in_ch + ic) * plane;
                let wbase = (oc * in_ch + ic) * k * k;
                for ky in 0..k {
                    let dyy = ky as isize - pad;
                    for kx in 0..k {
                        let dxx = kx as isize - pad;
                        let (x0, x1) = col_span(wd, dxx);
                        if x0 == x1 {
                            continue;
                        }
                        let (y0, y1) = col_span(h, dyy);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let iy = (y as isize + dyy) as usize;
                            let grow = gbase + y * wd;
                            let irow = ibase + iy * wd;
                            acc += dot(
                                &dys[grow + x0..grow + x1],
                                &xs[irow + (x0 as isize + dxx) as usize
                                    ..irow + (x1 as isize + dxx) as usize],
                            );
                        }
                        dwv[wbase + ky * k + kx] += acc;
                    }
                }
            }
        }
    }

    // Input gradient: correlation of dy with the flipped kernel, same row
    // structure as the forward pass.
    let mut dx = vec![0.0f64; n * in_ch * plane];
    let mut flipped = vec![0.0f64; k * k];
    for bi in 0..n {
        for ic in 0..in_ch {
            let ibase = (bi * in_ch + ic) * plane;
            for oc in 0..out_ch {
                let gbase = (bi * out_ch + oc) * plane;
                let wbase = (oc * in_ch + ic) * k * k;
                if k == 3 {
                    for t in 0..9 {
                        flipped[t] = w[wbase + 8 - t];
                    }
                    conv3_plane(
                        &flipped,
                        &dys[gbase..gbase + plane],
                        &mut dx[ibase..ibase + plane],
                        h,
                        wd,
                    );
                    continue;
                }
                for ky in 0..k {
                    let dyy = -(ky as isize - pad);
                    for kx in 0..k {
                        let dxx = -(kx as isize - pad);
                        let wv = w[wbase + ky * k + kx];
                        let (x0, x1) = col_span(wd, dxx);
                        if x0 == x1 {
                            continue;
                        }
                        let (y0, y1) = col_span(h, dyy);
                        for y in y0..y1 {
                            let gy = (y as isize + dyy) as usize;
                            let grow = gbase + gy * wd;
                            let irow = ibase + y * wd;
                            let src = &dys[grow + (x0 as isize + dxx) as usize
                                ..grow + (x1 as isize + dxx) as usize];
                            axpy(wv, src, &mut dx[irow + x0..irow + x1]);
                        }
                    }
                }
            }
        }
    }

    let dx = Tensor::new(vec![n, in_ch, h, wd], dx)?;
    Ok((dwv, db, dx))
}
