//! Softmax cross-entropy over per-pixel class logits.

use crate::error::{Result, SplitFedError};
use crate::mask::Mask;
use crate::tensor::Tensor;

fn check(logits: &Tensor, masks: &[Mask]) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = logits.dims4()?;
    if masks.len() != n {
        return Err(SplitFedError::Shape(format!(
            "{n} logit samples but {} masks",
            masks.len()
        )));
    }
    for m in masks {
        if m.height() != h || m.width() != w {
            return Err(SplitFedError::Shape(format!(
                "mask {}x{} does not match logits {h}x{w}",
                m.height(),
                m.width()
            )));
        }
        m.validate_classes(c)?;
    }
    Ok((n, c, h, w))
}

/// Per-sample mean pixel losses plus the gradient of the batch-mean loss
/// with respect to the logits.
///
/// Pixel loss is `logsumexp(z) - z[true]` with max subtraction; the batch
/// loss averaged over every pixel gives `d z = (softmax(z) - onehot) / (N*H*W)`.
pub fn cross_entropy_with_grad(logits: &Tensor, masks: &[Mask]) -> Result<(Vec<f64>, Tensor)> {
    let (n, c, h, w) = check(logits, masks)?;
    let plane = h * w;
    let zs = logits.data();
    let inv_total = 1.0 / (n * plane) as f64;
    let mut grad = vec![0.0f64; zs.len()];
    let mut per_sample = Vec::with_capacity(n);
    let mut probs = vec![0.0f64; c];
    for bi in 0..n {
        let mask = &masks[bi];
        let mut sample_loss = 0.0;
        for y in 0..h {
            for x in 0..w {
                let pix = y * w + x;
                let base = bi * c * plane + pix;
                let mut zmax = f64::NEG_INFINITY;
                for ci in 0..c {
                    zmax = zmax.max(zs[base + ci * plane]);
                }
                let mut denom = 0.0;
                for ci in 0..c {
                    let e = (zs[base + ci * plane] - zmax).exp();
                    probs[ci] = e;
                    denom += e;
                }
                let truth = usize::from(mask.data()[pix]);
                sample_loss += denom.ln() - (zs[base + truth * plane] - zmax);
                let inv_denom = 1.0 / denom;
                for ci in 0..c {
                    let p = probs[ci] * inv_denom;
                    let target = if ci == truth { 1.0 } else { 0.0 };
                    grad[base + ci * plane] = (p - target) * inv_total;
                }
            }
        }
        per_sample.push(sample_loss / plane as f64);
    }
    let grad = Tensor::new(vec![n, c, h, w], grad)?;
    Ok((per_sample, grad))
}

/// Mean loss over all pixels in the batch and its logit gradient.
pub fn cross_entropy(logits: &Tensor, masks: &[Mask]) -> Result<(f64, Tensor)> {
    let (per_sample, grad) = cross_entropy_with_grad(logits, masks)?;
    let loss = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((loss, grad))
}

/// Per-sample mean pixel losses without allocating a gradient.
pub fn per_sample_losses(logits: &Tensor, masks: &[Mask]) -> Result<Vec<f64>> {
    let (n, c, h, w) = check(logits, masks)?;
    let plane = h * w;
    let zs = logits.data();
    let mut out = Vec::with_capacity(n);
    for bi in 0..n {
        let mask = &masks[bi];
        let mut sample_loss = 0.0;
        for pix in 0..plane {
            let base = bi * c * plane + pix;
            let mut zmax = f64::NEG_INFINITY;
            for ci in 0..c {
                zmax = zmax.max(zs[base + ci * plane]);
            }
            let mut denom = 0.0;
            for ci in 0..c {
                denom += (zs[base + ci * plane] - zmax).exp();
            }
            let truth = usize::from(mask.data()[pix]);
            sample_loss += denom.ln() - (zs[base + truth * plane] - zmax);
        }
        out.push(sample_loss / plane as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_num_classes() {
        let logits = Tensor::new(vec![1, 5, 2, 2], vec![0.7; 20]).unwrap();
        let mask = Mask::new(2, 2, vec![0, 1, 2, 4]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[mask]).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn two_class_single_pixel_matches_hand_values() {
        // Logits [0, 0], true class 0: loss = ln 2, grad = [-0.5, +0.5].
        let logits = Tensor::new(vec![1, 2, 1, 1], vec![0.0, 0.0]).unwrap();
        let mask = Mask::new(1, 1, vec![0]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[mask]).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
        assert!((grad.data()[0] + 0.5).abs() < 1e-12);
        assert!((grad.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let logits = Tensor::new(vec![1, 2, 1, 1], vec![800.0, -800.0]).unwrap();
        let mask = Mask::new(1, 1, vec![1]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[mask]).unwrap();
        assert!(loss.is_finite());
        assert!((loss - 1600.0).abs() < 1e-9);
        assert!(grad.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn per_sample_losses_match_grad_path() {
        let logits = Tensor::new(
            vec![2, 3, 1, 2],
            vec![0.3, -1.0, 0.2, 0.9, -0.4, 0.0, 1.5, 0.1, -0.7, 0.6, 0.0, 2.0],
        )
        .unwrap();
        let masks = vec![
            Mask::new(1, 2, vec![0, 2]).unwrap(),
            Mask::new(1, 2, vec![1, 1]).unwrap(),
        ];
        let a = per_sample_losses(&logits, &masks).unwrap();
        let (b, _) = cross_entropy_with_grad(&logits, &masks).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_sums_to_zero_over_classes() {
        let logits = Tensor::new(vec![1, 3, 1, 1], vec![0.1, 0.9, -0.3]).unwrap();
        let mask = Mask::new(1, 1, vec![2]).unwrap();
        let (_, grad) = cross_entropy(&logits, &[mask]).unwrap();
        let s: f64 = grad.data().iter().sum();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_class() {
        let logits = Tensor::new(vec![1, 2, 1, 1], vec![0.0, 0.0]).unwrap();
        let mask = Mask::new(1, 1, vec![2]).unwrap();
        assert!(cross_entropy(&logits, &[mask]).is_err());
    }
}
