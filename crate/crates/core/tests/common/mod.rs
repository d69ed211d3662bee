//! Shared test helpers: synthetic weight generation. The byte writer here
//! follows the documented file layout independently of the reader it is
//! used to test.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use breathgate_core::cfg::{self, LayerKind, NetworkConfig};
use breathgate_core::weights::{ConvWeights, ModelWeights, WeightsHeader};

/// Per-layer geometry: (filters, in_channels, kernel size, batch-normalized).
fn conv_geometry(config: &NetworkConfig) -> Vec<(usize, usize, usize, bool)> {
    let shapes = cfg::compute_output_shapes(config).expect("valid config");
    let input = config.input_shape().expect("net dims");
    let mut out = Vec::new();
    for (i, layer) in config.layers.iter().enumerate() {
        if layer.kind != LayerKind::Convolutional {
            continue;
        }
        let filters = layer.require_usize("filters").unwrap();
        let size = layer.require_usize("size").unwrap();
        let in_c = if i == 0 { input.c } else { shapes[i - 1].c };
        out.push((filters, in_c, size, layer.batch_normalize()));
    }
    out
}

/// Writes a weights byte stream for `config` by walking the documented
/// layout: header, then per conv layer either
/// `biases, scales, means, variances, weights` or `biases, weights`,
/// all little-endian f32.
pub fn synthesize_weights_bytes(config: &NetworkConfig, header: &WeightsHeader, seed: u64) -> Vec<u8> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.extend_from_slice(&header.major.to_le_bytes());
    out.extend_from_slice(&header.minor.to_le_bytes());
    out.extend_from_slice(&header.revision.to_le_bytes());
    if header.major * 10 + header.minor >= 2 {
        out.extend_from_slice(&header.seen.to_le_bytes());
    } else {
        out.extend_from_slice(&(header.seen as u32).to_le_bytes());
    }

    let mut push = |out: &mut Vec<u8>, count: usize, lo: f32, hi: f32| {
        for _ in 0..count {
            let v: f32 = rng.random_range(lo..hi);
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (filters, in_c, size, bn) in conv_geometry(config) {
        if bn {
            push(&mut out, filters, -0.1, 0.1); // beta
            push(&mut out, filters, 0.9, 1.1); // gamma
            push(&mut out, filters, -0.1, 0.1); // rolling mean
            push(&mut out, filters, 0.5, 1.5); // rolling variance
        } else {
            push(&mut out, filters, -0.1, 0.1); // bias
        }
        let limit = (3.0 / (in_c * size * size) as f32).sqrt();
        push(&mut out, filters * in_c * size * size, -limit, limit);
    }
    out
}

/// In-memory random weights with activation-preserving scaling, so deep
/// forwards neither vanish nor explode.
pub fn random_model(config: &NetworkConfig, seed: u64) -> ModelWeights {
    let mut rng = StdRng::seed_from_u64(seed);
    let layers = conv_geometry(config)
        .into_iter()
        .map(|(filters, in_channels, size, bn)| {
            let limit = (3.0 / (in_channels * size * size) as f32).sqrt();
            ConvWeights {
                filters,
                in_channels,
                size,
                weights: (0..filters * in_channels * size * size)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect(),
                bias: vec![0.0; filters],
                folded_bn: bn,
            }
        })
        .collect();
    ModelWeights {
        header: WeightsHeader::default(),
        layers,
    }
}
