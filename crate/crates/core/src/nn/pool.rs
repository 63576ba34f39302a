//! 2x2 max pooling and 2x2 nearest-neighbor upsampling.

use crate::error::{Result, SplitFedError};
use crate::tensor::Tensor;

/// Flat input offsets of each output cell's maximum.
#[derive(Debug)]
pub struct PoolCache {
    pub argmax: Vec<u32>,
    pub in_h: usize,
    pub in_w: usize,
}

pub fn maxpool_forward(x: &Tensor) -> Result<(Tensor, PoolCache)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(SplitFedError::Shape(format!(
            "2x2 max pool requires even spatial dims, got {h}x{w}"
        )));
    }
    if x.len() > u32::MAX as usize {
        return Err(SplitFedError::Shape("tensor too large for pool cache".into()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let anchor = base + (2 * oy) * w + 2 * ox;
                // Scan order (0,0),(0,1),(1,0),(1,1); strict > keeps the
                // first occurrence on ties.
                let mut best_idx = anchor;
                let mut best = xs[anchor];
                for &off in &[1, w, w + 1] {
                    let idx = anchor + off;
                    if xs[idx] > best {
                        best = xs[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    let out = Tensor::new(vec![n, c, oh, ow], out)?;
    Ok((out, PoolCache { argmax, in_h: h, in_w: w }))
}

pub fn maxpool_backward(cache: &PoolCache, x_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    let (n, c, oh, ow) = dy.dims4()?;
    if cache.argmax.len() != n * c * oh * ow {
        return Err(SplitFedError::Shape(format!(
            "pool backward: gradient has {} cells, cache has {}",
            n * c * oh * ow,
            cache.argmax.len()
        )));
    }
    let len: usize = x_shape.iter().product();
    let mut dx = vec![0.0f64; len];
    for (i, &g) in dy.data().iter().enumerate() {
        dx[cache.argmax[i] as usize] += g;
    }
    Tensor::new(x_shape.to_vec(), dx)
}

pub fn upsample_forward(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h * 2, w * 2);
    let xs = x.data();
    let mut out = vec![0.0f64; n * c * oh * ow];
    for plane_idx in 0..n * c {
        let ibase = plane_idx * h * w;
        let obase = plane_idx * oh * ow;
        for y in 0..h {
            for x_ in 0..w {
                let v = xs[ibase + y * w + x_];
                let o = obase + (2 * y) * ow + 2 * x_;
                out[o] = v;
                out[o + 1] = v;
                out[o + ow] = v;
                out[o + ow + 1] = v;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn upsample_backward(dy: &Tensor) -> Result<Tensor> {
    let (n, c, oh, ow) = dy.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(SplitFedError::Shape(format!(
            "upsample backward requires even dims, got {oh}x{ow}"
        )));
    }
    let (h, w) = (oh / 2, ow / 2);
    let dys = dy.data();
    let mut dx = vec![0.0f64; n * c * h * w];
    for plane_idx in 0..n * c {
        let obase = plane_idx * oh * ow;
        let ibase = plane_idx * h * w;
        for y in 0..h {
            for x_ in 0..w {
                let o = obase + (2 * y) * ow + 2 * x_;
                // Fixed order: (0,0) + (0,1) + (1,0) + (1,1).
                dx[ibase + y * w + x_] =
                    ((dys[o] + dys[o + 1]) + dys[o + ow]) + dys[o + ow + 1];
            }
        }
    }
    Tensor::new(vec![n, c, h, w], dx)
}
