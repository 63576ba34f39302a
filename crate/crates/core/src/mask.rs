//! Per-pixel class masks for segmentation samples.

use crate::error::{Result, SplitFedError};

/// A dense `h x w` grid of class ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(SplitFedError::Shape(format!(
                "mask dimensions must be positive, got {h}x{w}"
            )));
        }
        if data.len() != h * w {
            return Err(SplitFedError::Shape(format!(
                "mask {h}x{w} expects {} values, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(Mask { h, w, data })
    }

    pub fn filled(h: usize, w: usize, class: u8) -> Result<Self> {
        Mask::new(h, w, vec![class; h * w])
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        self.data[y * self.w + x] = class;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Errors if any pixel's class id is `>= num_classes`.
    pub fn validate_classes(&self, num_classes: usize) -> Result<()> {
        if let Some(&bad) = self.data.iter().find(|&&c| usize::from(c) >= num_classes) {
            return Err(SplitFedError::Data(format!(
                "mask contains class id {bad}, but the model has {num_classes} classes"
            )));
        }
        Ok(())
    }

    /// Fraction of pixels labeled `class`.
    pub fn class_share(&self, class: u8) -> f64 {
        let hits = self.data.iter().filter(|&&c| c == class).count();
        hits as f64 / self.data.len() as f64
    }
}
