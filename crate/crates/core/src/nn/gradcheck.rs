//! Central finite-difference gradients, used as the independent oracle for
//! the backward pass. Only the forward pass and the loss are involved.

use crate::error::Result;
use crate::mask::Mask;
use crate::params::ParamVector;
use crate::tensor::Tensor;

use super::loss::cross_entropy;
use super::{forward, Network};

fn loss_of(net: &Network, params: &ParamVector, input: &Tensor, masks: &[Mask]) -> Result<f64> {
    let (logits, _) = forward(net, params, input)?;
    Ok(cross_entropy(&logits, masks)?.0)
}

/// Numerically approximates `d loss / d params` with central differences of
/// step `eps` on every scalar parameter.
pub fn finite_difference_gradient(
    net: &Network,
    params: &ParamVector,
    input: &Tensor,
    masks: &[Mask],
    eps: f64,
) -> Result<ParamVector> {
    let mut work = params.clone();
    let mut out = params.zeros_like();
    for si in 0..params.segments().len() {
        for j in 0..params.segments()[si].data.len() {
            let orig = params.segments()[si].data[j];
            work.segments_mut()[si].data[j] = orig + eps;
            let lp = loss_of(net, &work, input, masks)?;
            work.segments_mut()[si].data[j] = orig - eps;
            let lm = loss_of(net, &work, input, masks)?;
            work.segments_mut()[si].data[j] = orig;
            out.segments_mut()[si].data[j] = (lp - lm) / (2.0 * eps);
        }
    }
    Ok(out)
}

/// Largest relative disagreement between an analytic and a numeric gradient:
/// `|a - n| / max(floor, |a| + |n|)` over all coordinates.
///
/// Pick `floor` above the finite-difference noise `ulp(loss) / (2 * eps)`
/// (about 5e-12 for unit-scale losses at `eps = 1e-5`): some coordinates
/// have an exactly zero true gradient — a conv bias feeding batchnorm, for
/// instance, cannot move the loss at all — and there the numeric estimate is
/// pure roundoff that a tiny floor would misread as relative error.
pub fn max_relative_error(analytic: &ParamVector, numeric: &ParamVector, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (sa, sn) in analytic.segments().iter().zip(numeric.segments()) {
        for (a, n) in sa.data.iter().zip(&sn.data) {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}
