//! Darknet `.weights` binary files: header parsing, per-layer weight
//! loading, byte accounting, and inference-time batch-norm folding.
//!
//! Layout (little-endian throughout): header, then for each convolutional
//! layer in config order either `biases, scales, rolling_means,
//! rolling_variances, weights` (batch-normalized) or `biases, weights`.
//! All values are 4-byte floats; weight blocks are
//! `filters x in_channels x size x size`, row-major in that nesting order.

use std::io::Read;

use thiserror::Error;

use crate::cfg::{self, CfgError, LayerKind, NetworkConfig};

/// Epsilon used when folding batch normalization, matching the constant in
/// the Darknet reference implementation so numerical comparisons against
/// it stay meaningful.
pub const BN_EPSILON: f32 = 1e-6;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("truncated weights file: expected {expected} bytes, got {got}")]
    TruncatedFile { expected: u64, got: u64 },
    #[error("{count} trailing bytes after the last layer (config/weights mismatch)")]
    TrailingBytes { count: u64 },
    #[error("non-finite value in layer {layer} at float offset {offset}")]
    NonFiniteValue { layer: usize, offset: usize },
    #[error("negative rolling variance in layer {layer}, channel {channel}")]
    NegativeVariance { layer: usize, channel: usize },
    #[error("negative header field `{field}`")]
    NegativeHeaderField { field: &'static str },
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The version/seen preamble of a weights file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightsHeader {
    pub major: u32,
    pub minor: u32,
    pub revision: u32,
    pub seen: u64,
}

impl WeightsHeader {
    /// Byte length on disk: the `seen` counter widened from four to eight
    /// bytes once the format version reached 0.2.
    pub fn byte_len(&self) -> u64 {
        if self.major * 10 + self.minor >= 2 {
            20
        } else {
            16
        }
    }
}

impl Default for WeightsHeader {
    fn default() -> Self {
        WeightsHeader {
            major: 0,
            minor: 2,
            revision: 0,
            seen: 0,
        }
    }
}

/// Loaded parameters of one convolutional layer, batch norm already folded.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub filters: usize,
    pub in_channels: usize,
    pub size: usize,
    /// `filters * in_channels * size * size` values, filter-major.
    pub weights: Vec<f32>,
    /// One bias per filter.
    pub bias: Vec<f32>,
    /// True when this layer was stored batch-normalized and folded at load.
    pub folded_bn: bool,
}

/// Every convolutional layer of a network, in config order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub header: WeightsHeader,
    pub layers: Vec<ConvWeights>,
}

/// Exact on-disk byte length implied by a config and header: header bytes
/// plus four per stored float (bias, batch-norm statistics, weights).
pub fn expected_size(cfg: &NetworkConfig, header: &WeightsHeader) -> Result<u64, CfgError> {
    Ok(header.byte_len() + 4 * cfg::count_parameters(cfg)?)
}

/// Folds batch-normalization parameters into convolution weights and bias:
/// `w' = w * gamma / sqrt(var + eps)`, `b' = beta - gamma * mean / sqrt(var + eps)`.
/// `bias` holds beta on entry and the folded bias on return.
pub fn fold_batchnorm(
    weights: &mut [f32],
    bias: &mut [f32],
    scales: &[f32],
    means: &[f32],
    variances: &[f32],
    eps: f32,
) -> Result<(), WeightsError> {
    let filters = bias.len();
    assert_eq!(scales.len(), filters);
    assert_eq!(means.len(), filters);
    assert_eq!(variances.len(), filters);
    assert_eq!(weights.len() % filters, 0);
    let per_filter = weights.len() / filters;

    for f in 0..filters {
        if variances[f] < 0.0 {
            return Err(WeightsError::NegativeVariance {
                layer: 0,
                channel: f,
            });
        }
        let k = scales[f] / (variances[f] + eps).sqrt();
        for w in &mut weights[f * per_filter..(f + 1) * per_filter] {
            *w *= k;
        }
        bias[f] -= k * means[f];
    }
    Ok(())
}

struct CountingReader<R> {
    inner: R,
    consumed: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        CountingReader { inner, consumed: 0 }
    }

    /// Fills `buf` exactly or reports how far the stream actually went.
    fn read_exact_or_eof(&mut self, buf: &mut [u8]) -> Result<bool, std::io::Error> {
        let mut filled = 0;
        while filled < buf.len() {
            let n = self.inner.read(&mut buf[filled..])?;
            if n == 0 {
                self.consumed += filled as u64;
                return if filled == 0 {
                    Ok(false)
                } else {
                    Err(std::io::Error::new(
                        std::io::ErrorKind::UnexpectedEof,
                        "partial read",
                    ))
                };
            }
            filled += n;
        }
        self.consumed += filled as u64;
        Ok(true)
    }
}

fn read_u32<R: Read>(r: &mut CountingReader<R>) -> Result<Option<u32>, std::io::Error> {
    let mut buf = [0u8; 4];
    Ok(r.read_exact_or_eof(&mut buf)?.then(|| u32::from_le_bytes(buf)))
}

fn map_eof(e: std::io::Error, expected: u64, got: u64) -> WeightsError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        WeightsError::TruncatedFile { expected, got }
    } else {
        WeightsError::Io(e)
    }
}

/// Sequential float view over the body bytes.
struct FloatCursor<'a> {
    body: &'a [u8],
    offset: usize,
}

impl<'a> FloatCursor<'a> {
    fn take(&mut self, count: usize) -> Vec<f32> {
        let bytes = &self.body[self.offset..self.offset + count * 4];
        self.offset += count * 4;
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

/// Reads and validates a weights stream against `cfg`, folding batch norm
/// so the runtime has a single conv+bias path. The stream must be consumed
/// exactly; leftover bytes signal a config/weights mismatch.
pub fn read_weights<R: Read>(reader: R, cfg: &NetworkConfig) -> Result<ModelWeights, WeightsError> {
    let shapes = cfg::compute_output_shapes(cfg)?;
    let input = cfg.input_shape()?;
    let mut r = CountingReader::new(reader);

    // Header. Field widths are only known once major/minor are read, so the
    // running `expected` starts at the smaller header size.
    let major = read_u32(&mut r)?.ok_or(WeightsError::TruncatedFile {
        expected: 16,
        got: 0,
    })?;
    let minor = read_u32(&mut r)?.ok_or(WeightsError::TruncatedFile {
        expected: 16,
        got: 4,
    })?;
    let revision = read_u32(&mut r)?.ok_or(WeightsError::TruncatedFile {
        expected: 16,
        got: 8,
    })?;
    for (field, value) in [("major", major), ("minor", minor), ("revision", revision)] {
        if (value as i32) < 0 {
            return Err(WeightsError::NegativeHeaderField { field });
        }
    }
    let seen = if major * 10 + minor >= 2 {
        let mut buf = [0u8; 8];
        if !r
            .read_exact_or_eof(&mut buf)
            .map_err(|e| map_eof(e, 20, r.consumed))?
        {
            return Err(WeightsError::TruncatedFile {
                expected: 20,
                got: r.consumed,
            });
        }
        u64::from_le_bytes(buf)
    } else {
        read_u32(&mut r)?.ok_or(WeightsError::TruncatedFile {
            expected: 16,
            got: r.consumed,
        })? as u64
    };
    let header = WeightsHeader {
        major,
        minor,
        revision,
        seen,
    };
    let expected = expected_size(cfg, &header)?;

    // Pull the whole body before interpreting any value: a short stream is
    // a config/weights mismatch and must surface as TruncatedFile, not as
    // whatever garbage-value error the misalignment happens to produce.
    let body_len = (expected - header.byte_len()) as usize;
    let mut body = vec![0u8; body_len];
    let full = r
        .read_exact_or_eof(&mut body)
        .map_err(|e| map_eof(e, expected, r.consumed))?;
    if !full && body_len > 0 {
        return Err(WeightsError::TruncatedFile {
            expected,
            got: r.consumed,
        });
    }
    let mut cursor = FloatCursor {
        body: &body,
        offset: 0,
    };

    let mut layers = Vec::with_capacity(cfg.conv_layer_count());
    for (i, layer) in cfg.layers.iter().enumerate() {
        if layer.kind != LayerKind::Convolutional {
            continue;
        }
        let filters = layer.require_usize("filters")?;
        let size = layer.require_usize("size")?;
        let in_channels = if i == 0 { input.c } else { shapes[i - 1].c };
        let weight_count = filters * in_channels * size * size;

        let record = if layer.batch_normalize() {
            let mut bias = cursor.take(filters);
            let scales = cursor.take(filters);
            let means = cursor.take(filters);
            let variances = cursor.take(filters);
            let mut weights = cursor.take(weight_count);
            fold_batchnorm(&mut weights, &mut bias, &scales, &means, &variances, BN_EPSILON)
                .map_err(|e| match e {
                    WeightsError::NegativeVariance { channel, .. } => {
                        WeightsError::NegativeVariance { layer: i, channel }
                    }
                    other => other,
                })?;
            ConvWeights {
                filters,
                in_channels,
                size,
                weights,
                bias,
                folded_bn: true,
            }
        } else {
            let bias = cursor.take(filters);
            let weights = cursor.take(weight_count);
            ConvWeights {
                filters,
                in_channels,
                size,
                weights,
                bias,
                folded_bn: false,
            }
        };

        scan_finite(i, &record.bias, 0)?;
        let bias_len = record.bias.len();
        scan_finite(i, &record.weights, bias_len)?;
        layers.push(record);
    }

    // The stream must end exactly here.
    let mut probe = [0u8; 1];
    if r.read_exact_or_eof(&mut probe)? {
        let mut extra: u64 = 1;
        let mut sink = [0u8; 8192];
        loop {
            let n = r.inner.read(&mut sink)?;
            if n == 0 {
                break;
            }
            extra += n as u64;
        }
        return Err(WeightsError::TrailingBytes { count: extra });
    }

    Ok(ModelWeights { header, layers })
}

fn scan_finite(layer: usize, values: &[f32], base: usize) -> Result<(), WeightsError> {
    for (j, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(WeightsError::NonFiniteValue {
                layer,
                offset: base + j,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::parse_config;

    fn cfg_of(text: &str) -> NetworkConfig {
        parse_config(text).unwrap().config
    }

    fn header_bytes(major: u32, minor: u32, revision: u32, seen: u64) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&major.to_le_bytes());
        out.extend_from_slice(&minor.to_le_bytes());
        out.extend_from_slice(&revision.to_le_bytes());
        if major * 10 + minor >= 2 {
            out.extend_from_slice(&seen.to_le_bytes());
        } else {
            out.extend_from_slice(&(seen as u32).to_le_bytes());
        }
        out
    }

    fn push_floats(out: &mut Vec<u8>, values: &[f32]) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    const NET_ONLY: &str = "[net]\nwidth=4\nheight=4\nchannels=3\n";

    #[test]
    fn header_only_stream_against_net_only_config() {
        let cfg = cfg_of(NET_ONLY);
        let bytes = header_bytes(0, 2, 0, 0);
        assert_eq!(bytes.len(), 20);
        let model = read_weights(bytes.as_slice(), &cfg).unwrap();
        assert_eq!(model.layers.len(), 0);
        assert_eq!(model.header.minor, 2);
        assert_eq!(expected_size(&cfg, &model.header).unwrap(), 20);
    }

    #[test]
    fn old_header_is_sixteen_bytes() {
        let cfg = cfg_of(NET_ONLY);
        let bytes = header_bytes(0, 1, 0, 7);
        assert_eq!(bytes.len(), 16);
        let model = read_weights(bytes.as_slice(), &cfg).unwrap();
        assert_eq!(model.header.seen, 7);
        assert_eq!(model.header.byte_len(), 16);
    }

    #[test]
    fn trailing_bytes_are_reported() {
        let cfg = cfg_of(NET_ONLY);
        let mut bytes = header_bytes(0, 2, 0, 0);
        bytes.extend_from_slice(&[0u8; 5]);
        let err = read_weights(bytes.as_slice(), &cfg).unwrap_err();
        assert!(matches!(err, WeightsError::TrailingBytes { count: 5 }));
    }

    #[test]
    fn truncated_stream_reports_expected_and_got() {
        let cfg = cfg_of(
            "[net]\nwidth=4\nheight=4\nchannels=3\n[convolutional]\nfilters=2\nsize=1\nactivation=linear\n",
        );
        let mut bytes = header_bytes(0, 2, 0, 0);
        push_floats(&mut bytes, &[1.0]); // one of the 8 floats the layer needs
        let err = read_weights(bytes.as_slice(), &cfg).unwrap_err();
        match err {
            WeightsError::TruncatedFile { expected, got } => {
                assert_eq!(expected, 20 + 8 * 4);
                assert_eq!(got, 24);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn plain_conv_layer_loads_in_order() {
        let cfg = cfg_of(
            "[net]\nwidth=4\nheight=4\nchannels=1\n[convolutional]\nfilters=2\nsize=1\nactivation=linear\n",
        );
        let mut bytes = header_bytes(0, 2, 0, 0);
        push_floats(&mut bytes, &[0.5, -0.5]); // biases
        push_floats(&mut bytes, &[1.0, 2.0]); // weights
        let model = read_weights(bytes.as_slice(), &cfg).unwrap();
        assert_eq!(model.layers[0].bias, vec![0.5, -0.5]);
        assert_eq!(model.layers[0].weights, vec![1.0, 2.0]);
        assert!(!model.layers[0].folded_bn);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let cfg = cfg_of(
            "[net]\nwidth=4\nheight=4\nchannels=1\n[convolutional]\nfilters=1\nsize=1\nactivation=linear\n",
        );
        let mut bytes = header_bytes(0, 2, 0, 0);
        push_floats(&mut bytes, &[0.0]); // bias
        push_floats(&mut bytes, &[f32::NAN]); // weight
        let err = read_weights(bytes.as_slice(), &cfg).unwrap_err();
        assert!(matches!(
            err,
            WeightsError::NonFiniteValue { layer: 0, offset: 1 }
        ));
    }

    #[test]
    fn identity_batchnorm_folds_to_unchanged_weights() {
        let mut weights = vec![1.0, 2.0, 3.0];
        let mut bias = vec![0.0];
        fold_batchnorm(
            &mut weights,
            &mut bias,
            &[1.0],
            &[0.0],
            &[1.0 - BN_EPSILON],
            BN_EPSILON,
        )
        .unwrap();
        assert_eq!(weights, vec![1.0, 2.0, 3.0]);
        assert_eq!(bias, vec![0.0]);
    }

    #[test]
    fn fold_formulas_match_hand_computation() {
        // gamma=2, beta=3, mean=0, var=1-eps, scalar weight 5 -> w'=10, b'=3.
        let mut weights = vec![5.0];
        let mut bias = vec![3.0];
        fold_batchnorm(
            &mut weights,
            &mut bias,
            &[2.0],
            &[0.0],
            &[1.0 - BN_EPSILON],
            BN_EPSILON,
        )
        .unwrap();
        assert!((weights[0] - 10.0).abs() < 1e-6);
        assert!((bias[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn negative_variance_is_rejected_with_channel() {
        let cfg = cfg_of(
            "[net]\nwidth=4\nheight=4\nchannels=1\n[convolutional]\nbatch_normalize=1\nfilters=2\nsize=1\nactivation=leaky\n",
        );
        let mut bytes = header_bytes(0, 2, 0, 0);
        push_floats(&mut bytes, &[0.0, 0.0]); // beta
        push_floats(&mut bytes, &[1.0, 1.0]); // gamma
        push_floats(&mut bytes, &[0.0, 0.0]); // mean
        push_floats(&mut bytes, &[1.0, -0.5]); // variance, channel 1 negative
        push_floats(&mut bytes, &[1.0, 1.0]); // weights
        let err = read_weights(bytes.as_slice(), &cfg).unwrap_err();
        assert!(matches!(
            err,
            WeightsError::NegativeVariance { layer: 0, channel: 1 }
        ));
    }

    #[test]
    fn batchnorm_layer_size_accounting() {
        // One BN conv layer: 2 filters, 1 input channel, 3x3.
        let text = "[net]\nwidth=8\nheight=8\nchannels=1\n[convolutional]\nbatch_normalize=1\nfilters=2\nsize=3\nstride=1\npad=1\nactivation=leaky\n";
        let cfg = cfg_of(text);
        let header = WeightsHeader::default();
        // 2*1*9 weights + 2 bias + 3*2 bn stats = 26 floats.
        assert_eq!(expected_size(&cfg, &header).unwrap(), 20 + 26 * 4);
    }
}
