//! Dense row-major tensors of `f64`.
//!
//! Activations use NCHW layout: index `(n, c, y, x)` maps to
//! `((n * C + c) * H + y) * W + x`. All constructors reject non-finite
//! values so NaN/Inf cannot propagate silently through a forward pass.

use crate::error::{Result, SplitFedError};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating that dimensions are positive, the payload
    /// length matches the shape product, and every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(SplitFedError::Shape(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(SplitFedError::Shape(format!(
                "shape {shape:?} expects {expected} values, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SplitFedError::Numerics(
                "tensor contains NaN or infinite values".into(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Interprets the tensor as NCHW and returns `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(SplitFedError::Shape(format!(
                "expected a rank-4 NCHW tensor, got shape {other:?}"
            ))),
        }
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(SplitFedError::Shape(format!(
                "cannot add tensors of shape {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    /// Concatenates rank-4 tensors along the channel axis in argument order.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(SplitFedError::Shape("concat of zero tensors".into()));
        }
        let (n, _, h, w) = parts[0].dims4()?;
        let mut channels = 0usize;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(SplitFedError::Shape(format!(
                    "channel concat needs matching batch and spatial dims, got {:?} vs {:?}",
                    parts[0].shape(),
                    p.shape()
                )));
            }
            channels += pc;
        }
        let mut data = Vec::with_capacity(n * channels * h * w);
        for b in 0..n {
            for p in parts {
                let pc = p.shape()[1];
                let plane = pc * h * w;
                let start = b * plane;
                data.extend_from_slice(&p.data[start..start + plane]);
            }
        }
        Tensor::new(vec![n, channels, h, w], data)
    }

    /// Splits a rank-4 tensor back into channel groups of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor>> {
        let (n, c, h, w) = self.dims4()?;
        if sizes.iter().sum::<usize>() != c {
            return Err(SplitFedError::Shape(format!(
                "channel split sizes {sizes:?} do not sum to {c}"
            )));
        }
        let mut out: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&s| Vec::with_capacity(n * s * h * w))
            .collect();
        for b in 0..n {
            let mut offset = 0usize;
            for (slot, &s) in sizes.iter().enumerate() {
                let start = (b * c + offset) * h * w;
                out[slot].extend_from_slice(&self.data[start..start + s * h * w]);
                offset += s;
            }
        }
        sizes
            .iter()
            .zip(out)
            .map(|(&s, data)| Tensor::new(vec![n, s, h, w], data))
            .collect()
    }
}
