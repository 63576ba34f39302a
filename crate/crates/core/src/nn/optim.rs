//! Plain SGD and classical-momentum SGD over parameter vectors.

use crate::error::{Result, SplitFedError};
use crate::params::ParamVector;

#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    /// `v = momentum * v + g; p = p - lr * v`, velocity starting at zero.
    Momentum {
        lr: f64,
        momentum: f64,
        velocity: Option<ParamVector>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Optimizer {
        Optimizer::Sgd { lr }
    }

    pub fn momentum(lr: f64, momentum: f64) -> Optimizer {
        Optimizer::Momentum { lr, momentum, velocity: None }
    }

    /// Applies one update in place; `grads` must be compatible with `params`.
    pub fn step(&mut self, params: &mut ParamVector, grads: &ParamVector) -> Result<()> {
        if !params.compatible(grads) {
            return Err(SplitFedError::Shape(
                "optimizer step: gradient vector incompatible with parameters".into(),
            ));
        }
        match self {
            Optimizer::Sgd { lr } => params.add_scaled(-*lr, grads),
            Optimizer::Momentum { lr, momentum, velocity } => {
                let v = velocity.get_or_insert_with(|| grads.zeros_like());
                if !v.compatible(grads) {
                    return Err(SplitFedError::Shape(
                        "optimizer step: velocity incompatible with gradients".into(),
                    ));
                }
                for (vs, gs) in v.segments_mut().iter_mut().zip(grads.segments()) {
                    for (vv, gv) in vs.data.iter_mut().zip(&gs.data) {
                        *vv = *momentum * *vv + gv;
                    }
                }
                params.add_scaled(-*lr, v)
            }
        }
    }

    /// Drops accumulated state (used when fresh global weights arrive).
    pub fn reset(&mut self) {
        if let Optimizer::Momentum { velocity, .. } = self {
            *velocity = None;
        }
    }
}
