//! Convolution kernels: a direct six-loop reference implementation and an
//! im2col + blocked-GEMM path. Both accumulate in single precision, like
//! Darknet, and satisfy the same contract; the optimized path is validated
//! against the reference in the test suites.

use rayon::prelude::*;

use super::{Tensor, TensorError};

/// Geometry of one convolution: square kernel, symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub size: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if padded < self.size || self.stride == 0 {
            return None;
        }
        Some((padded - self.size) / self.stride + 1)
    }
}

fn check_geometry(
    input: &Tensor,
    weights: &[f32],
    bias: &[f32],
    spec: &ConvSpec,
) -> Result<(usize, usize, usize), TensorError> {
    let filters = bias.len();
    let expected = filters * input.c() * spec.size * spec.size;
    if weights.len() != expected {
        // A length mismatch with a consistent filter count means the caller
        // built the block for a different channel count.
        if filters > 0 && weights.len() % (filters * spec.size * spec.size) == 0 {
            return Err(TensorError::ChannelMismatch {
                expected: weights.len() / (filters * spec.size * spec.size),
                got: input.c(),
            });
        }
        return Err(TensorError::WeightBlockSize {
            expected,
            got: weights.len(),
        });
    }
    let oh = spec
        .output_extent(input.h())
        .ok_or(TensorError::NonPositiveOutput)?;
    let ow = spec
        .output_extent(input.w())
        .ok_or(TensorError::NonPositiveOutput)?;
    Ok((filters, oh, ow))
}

/// Direct cross-correlation plus per-filter bias. Slow; the oracle the
/// optimized path is checked against.
pub fn convolve_reference(
    input: &Tensor,
    weights: &[f32],
    bias: &[f32],
    spec: &ConvSpec,
) -> Result<Tensor, TensorError> {
    let (filters, oh, ow) = check_geometry(input, weights, bias, spec)?;
    let mut out = Tensor::zeros(filters, oh, ow);
    convolve_reference_into(input, weights, bias, spec, &mut out);
    Ok(out)
}

pub(super) fn convolve_reference_into(
    input: &Tensor,
    weights: &[f32],
    bias: &[f32],
    spec: &ConvSpec,
    out: &mut Tensor,
) {
    let (c_in, h, w) = (input.c(), input.h() as i64, input.w() as i64);
    let (oh, ow) = (out.h(), out.w());
    let k = spec.size;
    for f in 0..out.c() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[f];
                for c in 0..c_in {
                    for ky in 0..k {
                        let iy = (oy * spec.stride + ky) as i64 - spec.pad as i64;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * spec.stride + kx) as i64 - spec.pad as i64;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let wv = weights[((f * c_in + c) * k + ky) * k + kx];
                            acc += wv * input.at(c, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(f, oy, ox, acc);
            }
        }
    }
}

/// Patch-matrix lowering: row `(c, ky, kx)`, column `(oy, ox)`, zero where
/// the window leaves the input.
pub(super) fn im2col(input: &Tensor, spec: &ConvSpec, oh: usize, ow: usize, patches: &mut [f32]) {
    let k = spec.size;
    let (h, w) = (input.h() as i64, input.w() as i64);
    let plane = oh * ow;
    debug_assert!(patches.len() >= input.c() * k * k * plane);
    for c in 0..input.c() {
        let src = input.channel(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * plane;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as i64 - spec.pad as i64;
                    let dst = &mut patches[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * w as usize..(iy as usize + 1) * w as usize];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx) as i64 - spec.pad as i64;
                        *d = if ix < 0 || ix >= w {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Columns processed per block so the accumulator rows stay cache-resident.
const COL_BLOCK: usize = 1024;
/// Filters per GEMM micro-kernel step; each patch row is streamed once per
/// group instead of once per filter.
const ROW_BLOCK: usize = 4;

/// `out[f][j] = bias[f] + sum_k w[f][k] * patches[k][j]`, parallel over
/// filter groups. Summation order over `k` is fixed, so results are
/// bit-identical for any thread count.
fn gemm_bias(
    out: &mut [f32],
    w: &[f32],
    patches: &[f32],
    ckk: usize,
    cols: usize,
    bias: &[f32],
) {
    out.par_chunks_mut(ROW_BLOCK * cols)
        .enumerate()
        .for_each(|(group, rows)| {
            let f0 = group * ROW_BLOCK;
            let nf = rows.len() / cols;
            for (r, row) in rows.chunks_mut(cols).enumerate() {
                row.fill(bias[f0 + r]);
            }
            let mut jb = 0;
            while jb < cols {
                let je = (jb + COL_BLOCK).min(cols);
                for k in 0..ckk {
                    let b = &patches[k * cols + jb..k * cols + je];
                    for r in 0..nf {
                        let a = w[(f0 + r) * ckk + k];
                        let c = &mut rows[r * cols + jb..r * cols + je];
                        for (cv, bv) in c.iter_mut().zip(b) {
                            *cv += a * *bv;
                        }
                    }
                }
                jb = je;
            }
        });
}

/// im2col + GEMM convolution with a caller-provided scratch patch matrix.
pub(super) fn convolve_optimized_into(
    input: &Tensor,
    weights: &[f32],
    bias: &[f32],
    spec: &ConvSpec,
    scratch: &mut Vec<f32>,
    out: &mut Tensor,
) {
    let (oh, ow) = (out.h(), out.w());
    let cols = oh * ow;
    let ckk = input.c() * spec.size * spec.size;
    if scratch.len() < ckk * cols {
        scratch.resize(ckk * cols, 0.0);
    }
    // 1x1 stride-1 unpadded convolution is already a matrix product over
    // the raw input; skip the copy.
    let patches: &[f32] = if spec.size == 1 && spec.stride == 1 && spec.pad == 0 {
        input.as_slice()
    } else {
        im2col(input, spec, oh, ow, scratch);
        &scratch[..ckk * cols]
    };
    gemm_bias(out.as_mut_slice(), weights, patches, ckk, cols, bias);
}

/// The production convolution path. Contract identical to
/// [`convolve_reference`].
pub fn convolve_optimized(
    input: &Tensor,
    weights: &[f32],
    bias: &[f32],
    spec: &ConvSpec,
) -> Result<Tensor, TensorError> {
    let (filters, oh, ow) = check_geometry(input, weights, bias, spec)?;
    let mut out = Tensor::zeros(filters, oh, ow);
    let mut scratch = Vec::new();
    convolve_optimized_into(input, weights, bias, spec, &mut scratch, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_kernel_passes_input_through() {
        let input = Tensor::filled(1, 3, 3, 1.0);
        let spec = ConvSpec {
            size: 1,
            stride: 1,
            pad: 0,
        };
        let out = convolve_reference(&input, &[1.0], &[0.0], &spec).unwrap();
        assert_eq!(out, input);
        let opt = convolve_optimized(&input, &[1.0], &[0.0], &spec).unwrap();
        assert_eq!(opt, input);
    }

    #[test]
    fn all_ones_kernel_sums_the_window() {
        let input =
            Tensor::from_vec(1, 3, 3, vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let spec = ConvSpec {
            size: 3,
            stride: 1,
            pad: 0,
        };
        let out = convolve_reference(&input, &[1.0; 9], &[0.0], &spec).unwrap();
        assert_eq!(out.shape(), crate::cfg::Shape::new(1, 1, 1));
        assert_eq!(out.as_slice(), &[45.0]);
    }

    #[test]
    fn bias_is_added_per_filter() {
        let input = Tensor::filled(1, 2, 2, 0.0);
        let spec = ConvSpec {
            size: 1,
            stride: 1,
            pad: 0,
        };
        let out = convolve_optimized(&input, &[1.0, 1.0], &[0.5, -1.5], &spec).unwrap();
        assert_eq!(out.channel(0), &[0.5; 4]);
        assert_eq!(out.channel(1), &[-1.5; 4]);
    }

    #[test]
    fn channel_mismatch_is_detected() {
        let input = Tensor::zeros(3, 4, 4);
        let spec = ConvSpec {
            size: 1,
            stride: 1,
            pad: 0,
        };
        // Weight block sized for 2 input channels.
        let err = convolve_reference(&input, &[0.0; 2], &[0.0], &spec).unwrap_err();
        assert!(matches!(
            err,
            TensorError::ChannelMismatch {
                expected: 2,
                got: 3
            }
        ));
    }

    #[test]
    fn window_larger_than_padded_input_is_rejected() {
        let input = Tensor::zeros(1, 2, 2);
        let spec = ConvSpec {
            size: 5,
            stride: 1,
            pad: 0,
        };
        let err = convolve_reference(&input, &[0.0; 25], &[0.0], &spec).unwrap_err();
        assert!(matches!(err, TensorError::NonPositiveOutput));
    }

    fn random_case(rng: &mut StdRng) -> (Tensor, Vec<f32>, Vec<f32>, ConvSpec) {
        let c = rng.random_range(1..=8);
        let h = rng.random_range(1..=16);
        let w = rng.random_range(1..=16);
        let size = [1, 3, 5][rng.random_range(0..3)];
        let stride = rng.random_range(1..=2);
        let pad = if rng.random_bool(0.5) { size / 2 } else { 0 };
        let filters = rng.random_range(1..=8);
        let input = Tensor::from_vec(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let weights: Vec<f32> = (0..filters * c * size * size)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let bias: Vec<f32> = (0..filters).map(|_| rng.random_range(-1.0..1.0)).collect();
        (input, weights, bias, ConvSpec { size, stride, pad })
    }

    #[test]
    fn optimized_matches_reference_on_random_cases() {
        let mut rng = StdRng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 60 {
            let (input, weights, bias, spec) = random_case(&mut rng);
            if spec.output_extent(input.h()).is_none() || spec.output_extent(input.w()).is_none()
            {
                continue;
            }
            let a = convolve_reference(&input, &weights, &bias, &spec).unwrap();
            let b = convolve_optimized(&input, &weights, &bias, &spec).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                let denom = x.abs().max(1.0);
                assert!(
                    (x - y).abs() / denom <= 1e-4,
                    "mismatch {x} vs {y} (spec {spec:?})"
                );
            }
            checked += 1;
        }
    }
}
