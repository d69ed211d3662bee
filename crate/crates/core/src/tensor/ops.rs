//! The non-convolution layer kernels: leaky ReLU, Darknet-convention
//! max pooling, nearest-neighbor upsampling, channel concatenation, and
//! the residual shortcut.

use super::{Tensor, TensorError};

pub fn leaky_relu_in_place(t: &mut Tensor) {
    for v in t.as_mut_slice() {
        if *v < 0.0 {
            *v *= 0.1;
        }
    }
}

/// Elementwise `x if x > 0 else 0.1 * x`.
pub fn leaky_relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    leaky_relu_in_place(&mut out);
    out
}

/// Sliding-window maximum with Darknet's padding convention: the window may
/// hang over the right/bottom edge (and, for larger paddings, the left/top),
/// and out-of-bounds positions count as negative infinity. With the default
/// `padding = size - 1` the output extent is `ceil(in / stride)`.
pub fn maxpool(input: &Tensor, size: usize, stride: usize) -> Tensor {
    maxpool_padded(input, size, stride, size.saturating_sub(1))
}

pub fn maxpool_padded(input: &Tensor, size: usize, stride: usize, padding: usize) -> Tensor {
    assert!(size >= 1 && stride >= 1);
    let oh = (input.h() + padding).saturating_sub(size) / stride + 1;
    let ow = (input.w() + padding).saturating_sub(size) / stride + 1;
    let mut out = Tensor::zeros(input.c(), oh, ow);
    maxpool_into(input, size, stride, padding, &mut out);
    out
}

pub(super) fn maxpool_into(
    input: &Tensor,
    size: usize,
    stride: usize,
    padding: usize,
    out: &mut Tensor,
) {
    let offset = -((padding / 2) as i64);
    let (h, w) = (input.h() as i64, input.w() as i64);
    for c in 0..out.c() {
        let src = input.channel(c);
        for oy in 0..out.h() {
            for ox in 0..out.w() {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..size {
                    let iy = oy as i64 * stride as i64 + dy as i64 + offset;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for dx in 0..size {
                        let ix = ox as i64 * stride as i64 + dx as i64 + offset;
                        if ix < 0 || ix >= w {
                            continue;
                        }
                        let v = src[(iy * w + ix) as usize];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.set(c, oy, ox, best);
            }
        }
    }
}

/// Nearest-neighbor upsample: every value becomes a `stride x stride` block.
pub fn upsample(input: &Tensor, stride: usize) -> Tensor {
    assert!(stride >= 1);
    let mut out = Tensor::zeros(input.c(), input.h() * stride, input.w() * stride);
    upsample_into(input, stride, &mut out);
    out
}

pub(super) fn upsample_into(input: &Tensor, stride: usize, out: &mut Tensor) {
    for c in 0..input.c() {
        for y in 0..out.h() {
            for x in 0..out.w() {
                out.set(c, y, x, input.at(c, y / stride, x / stride));
            }
        }
    }
}

/// Concatenates inputs along the channel axis; spatial extents must agree.
pub fn route(inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    assert!(!inputs.is_empty(), "route needs at least one input");
    let first = inputs[0].shape();
    let mut channels = 0;
    for t in inputs {
        let s = t.shape();
        if s.h != first.h || s.w != first.w {
            return Err(TensorError::SpatialMismatch { a: first, b: s });
        }
        channels += s.c;
    }
    let mut out = Tensor::zeros(channels, first.h, first.w);
    route_into(inputs, &mut out);
    Ok(out)
}

pub(super) fn route_into(inputs: &[&Tensor], out: &mut Tensor) {
    let mut offset = 0;
    let data = out.as_mut_slice();
    for t in inputs {
        let src = t.as_slice();
        data[offset..offset + src.len()].copy_from_slice(src);
        offset += src.len();
    }
}

/// Elementwise sum of two equally-shaped tensors (linear activation).
pub fn shortcut(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            a: a.shape(),
            b: b.shape(),
        });
    }
    let mut out = a.clone();
    shortcut_accumulate(&mut out, b);
    Ok(out)
}

pub(super) fn shortcut_accumulate(out: &mut Tensor, other: &Tensor) {
    for (o, v) in out.as_mut_slice().iter_mut().zip(other.as_slice()) {
        *o += *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_slope() {
        let t = Tensor::from_vec(1, 1, 3, vec![0.0, -1.0, 2.0]).unwrap();
        let out = leaky_relu(&t);
        assert_eq!(out.as_slice(), &[0.0, -0.1, 2.0]);
    }

    #[test]
    fn leaky_relu_elementwise_bounds() {
        let t = Tensor::from_vec(1, 2, 2, vec![-3.0, -0.5, 0.25, 4.0]).unwrap();
        let out = leaky_relu(&t);
        for (x, y) in t.as_slice().iter().zip(out.as_slice()) {
            assert!(*y >= 0.1 * *x - 1e-7);
            assert!(*y <= x.max(0.1 * *x) + 1e-7);
        }
    }

    #[test]
    fn maxpool_two_by_two() {
        let t = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = maxpool(&t, 2, 2);
        assert_eq!(out.shape(), crate::cfg::Shape::new(1, 1, 1));
        assert_eq!(out.as_slice(), &[4.0]);
    }

    #[test]
    fn maxpool_stride_one_pads_with_neg_infinity() {
        // The size=2 stride=1 tail pool of the tiny network: output keeps
        // the input extent because missing entries act as -inf.
        let t = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = maxpool(&t, 2, 1);
        assert_eq!(out.shape(), crate::cfg::Shape::new(1, 2, 2));
        assert_eq!(out.as_slice(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn maxpool_constant_tensor_is_identity_valued() {
        let t = Tensor::filled(2, 5, 5, 3.5);
        let out = maxpool(&t, 2, 1);
        assert_eq!(out.shape(), t.shape());
        assert!(out.as_slice().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn maxpool_one_by_one_input() {
        let t = Tensor::filled(1, 1, 1, 2.0);
        let out = maxpool(&t, 2, 2);
        assert_eq!(out.shape(), crate::cfg::Shape::new(1, 1, 1));
        assert_eq!(out.as_slice(), &[2.0]);
    }

    #[test]
    fn upsample_replicates_blocks() {
        let t = Tensor::filled(1, 1, 1, 7.0);
        let out = upsample(&t, 2);
        assert_eq!(out.shape(), crate::cfg::Shape::new(1, 2, 2));
        assert_eq!(out.as_slice(), &[7.0; 4]);
    }

    #[test]
    fn upsample_stride_one_is_identity() {
        let t = Tensor::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(upsample(&t, 1), t);
    }

    #[test]
    fn strided_downsample_inverts_upsample() {
        let t = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = upsample(&t, 2);
        let mut back = Tensor::zeros(1, 2, 2);
        for y in 0..2 {
            for x in 0..2 {
                back.set(0, y, x, up.at(0, y * 2, x * 2));
            }
        }
        assert_eq!(back, t);
    }

    #[test]
    fn route_concatenates_in_argument_order() {
        let a = Tensor::filled(2, 4, 4, 1.0);
        let b = Tensor::filled(3, 4, 4, 2.0);
        let out = route(&[&a, &b]).unwrap();
        assert_eq!(out.shape(), crate::cfg::Shape::new(5, 4, 4));
        assert_eq!(out.channel(0), &[1.0; 16]);
        assert_eq!(out.channel(2), &[2.0; 16]);
        // Slicing the output recovers each input.
        assert_eq!(&out.as_slice()[..32], a.as_slice());
        assert_eq!(&out.as_slice()[32..], b.as_slice());
    }

    #[test]
    fn route_single_input_is_identity() {
        let a = Tensor::filled(2, 3, 3, 0.5);
        assert_eq!(route(&[&a]).unwrap(), a);
    }

    #[test]
    fn route_rejects_spatial_mismatch() {
        let a = Tensor::zeros(1, 4, 4);
        let b = Tensor::zeros(1, 2, 2);
        assert!(matches!(
            route(&[&a, &b]),
            Err(TensorError::SpatialMismatch { .. })
        ));
    }

    #[test]
    fn shortcut_is_elementwise_sum() {
        let a = Tensor::from_vec(1, 1, 2, vec![1.0, -2.0]).unwrap();
        let b = Tensor::from_vec(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(shortcut(&a, &b).unwrap().as_slice(), &[1.5, -1.5]);
        assert_eq!(shortcut(&a, &b).unwrap(), shortcut(&b, &a).unwrap());
        let zeros = Tensor::zeros(1, 1, 2);
        assert_eq!(shortcut(&a, &zeros).unwrap(), a);
    }

    #[test]
    fn shortcut_rejects_shape_mismatch() {
        let a = Tensor::zeros(1, 2, 2);
        let b = Tensor::zeros(2, 2, 2);
        assert!(matches!(
            shortcut(&a, &b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }
}
