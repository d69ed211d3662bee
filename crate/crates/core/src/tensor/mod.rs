//! Dense single-precision tensors and the layer kernels YOLOv3/tiny
//! require, with a naive reference convolution and an im2col/GEMM
//! optimized path validated against it.

mod conv;
mod exec;
mod ops;

pub use conv::{convolve_optimized, convolve_reference, ConvSpec};
pub use exec::{forward, ExecContext, LayerTiming};
pub use ops::{leaky_relu, leaky_relu_in_place, maxpool, route, shortcut, upsample};

use thiserror::Error;

use crate::cfg::{CfgError, Shape};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {got} does not match shape ({expected} values)")]
    BadDataLength { expected: usize, got: usize },
    #[error("input has {got} channels, weights expect {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("convolution output extent is not positive")]
    NonPositiveOutput,
    #[error("route inputs disagree spatially: {a} vs {b}")]
    SpatialMismatch { a: Shape, b: Shape },
    #[error("shortcut operands differ in shape: {a} vs {b}")]
    ShapeMismatch { a: Shape, b: Shape },
    #[error("network expects input {expected}, got {got}")]
    InputShapeMismatch { expected: Shape, got: Shape },
    #[error("weights carry {got} convolutional layers, config has {expected}")]
    WeightsLayerCount { expected: usize, got: usize },
    #[error("weight block holds {got} values, layer needs {expected}")]
    WeightBlockSize { expected: usize, got: usize },
    #[error("layer {layer}: unsupported activation `{activation}`")]
    UnsupportedActivation { layer: usize, activation: String },
    #[error(transparent)]
    Cfg(#[from] CfgError),
}

/// Rank-3 channels-major tensor: index `(c, y, x)` lives at
/// `c * h * w + y * w + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        assert!(c >= 1 && h >= 1 && w >= 1, "tensor dimensions must be >= 1");
        Tensor {
            shape: Shape::new(c, h, w),
            data: vec![0.0; c * h * w],
        }
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f32) -> Self {
        let mut t = Tensor::zeros(c, h, w);
        t.data.fill(value);
        t
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if data.len() != c * h * w || c == 0 || h == 0 || w == 0 {
            return Err(TensorError::BadDataLength {
                expected: c * h * w,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: Shape::new(c, h, w),
            data,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn c(&self) -> usize {
        self.shape.c
    }

    pub fn h(&self) -> usize {
        self.shape.h
    }

    pub fn w(&self) -> usize {
        self.shape.w
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.shape.h + y) * self.shape.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        self.data[(c * self.shape.h + y) * self.shape.w + x] = value;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// One full channel plane as a contiguous slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape.h * self.shape.w;
        &self.data[c * plane..(c + 1) * plane]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channel_major() {
        let mut t = Tensor::zeros(2, 3, 4);
        t.set(1, 2, 3, 9.0);
        assert_eq!(t.as_slice()[1 * 12 + 2 * 4 + 3], 9.0);
        assert_eq!(t.at(1, 2, 3), 9.0);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(Tensor::from_vec(2, 2, 2, vec![0.0; 8]).is_ok());
    }

    #[test]
    fn channel_slices_are_disjoint_planes() {
        let t = Tensor::from_vec(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.channel(0), &[1.0, 2.0]);
        assert_eq!(t.channel(1), &[3.0, 4.0]);
    }
}
