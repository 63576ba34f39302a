//! Batch normalization over the batch and spatial axes.
//!
//! Statistics are always the current batch's (biased variance, epsilon
//! 1e-5); there is no running-average inference mode, so a forward pass is a
//! pure function of its inputs wherever it runs.

use crate::error::{Result, SplitFedError};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

pub fn forward(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<(Tensor, BnCache)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(SplitFedError::Shape(format!(
            "batchnorm expects {c} per-channel parameters, got gamma {} / beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let xs = x.data();
    let mut out = vec![0.0f64; xs.len()];
    let mut xhat = vec![0.0f64; xs.len()];
    let mut inv_std = vec![0.0f64; c];
    for ci in 0..c {
        let mut sum = 0.0;
        for bi in 0..n {
            let base = (bi * c + ci) * plane;
            for v in &xs[base..base + plane] {
                sum += v;
            }
        }
        let mean = sum / m;
        let mut var_sum = 0.0;
        for bi in 0..n {
            let base = (bi * c + ci) * plane;
            for v in &xs[base..base + plane] {
                let d = v - mean;
                var_sum += d * d;
            }
        }
        let var = var_sum / m;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ci] = inv;
        let (g, b) = (gamma[ci], beta[ci]);
        for bi in 0..n {
            let base = (bi * c + ci) * plane;
            for i in base..base + plane {
                let xh = (xs[i] - mean) * inv;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    let out = Tensor::new(vec![n, c, h, w], out)?;
    let xhat = Tensor::new(vec![n, c, h, w], xhat)?;
    Ok((out, BnCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`, differentiating through the batch
/// statistics.
pub fn backward(cache: &BnCache, gamma: &[f64], dy: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = dy.dims4()?;
    if cache.xhat.shape() != dy.shape() {
        return Err(SplitFedError::Shape(format!(
            "batchnorm backward: gradient shape {:?} does not match cached {:?}",
            dy.shape(),
            cache.xhat.shape()
        )));
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let xh = cache.xhat.data();
    let dys = dy.data();
    let mut dx = vec![0.0f64; dys.len()];
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for ci in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for bi in 0..n {
            let base = (bi * c + ci) * plane;
            for i in base..base + plane {
                sum_dy += dys[i];
                sum_dy_xh += dys[i] * xh[i];
            }
        }
        dbeta[ci] = sum_dy;
        dgamma[ci] = sum_dy_xh;
        let scale = gamma[ci] * cache.inv_std[ci] / m;
        for bi in 0..n {
            let base = (bi * c + ci) * plane;
            for i in base..base + plane {
                dx[i] = scale * (m * dys[i] - sum_dy - xh[i] * sum_dy_xh);
            }
        }
    }
    let dx = Tensor::new(vec![n, c, h, w], dx)?;
    Ok((dx, dgamma, dbeta))
}
