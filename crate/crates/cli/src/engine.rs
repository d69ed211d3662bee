//! Model loading and the image-to-detections pipeline that glues the core
//! modules together.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use breathgate_core::cfg::{self, LayerKind, NetworkConfig, YoloHead};
use breathgate_core::detect::{
    decode_head, letterbox, load_names, nms, unletterbox, Detection, PixelImage,
};
use breathgate_core::tensor::{forward, ExecContext, Tensor};
use breathgate_core::weights::{read_weights, ConvWeights, ModelWeights, WeightsHeader};

/// A loaded network ready for inference.
pub struct Model {
    pub config: NetworkConfig,
    pub weights: ModelWeights,
    pub names: Vec<String>,
    pub heads: Vec<YoloHead>,
    pub net_w: usize,
    pub net_h: usize,
}

/// Parses a config file, reporting warnings on stderr.
pub fn load_config(path: &Path) -> Result<NetworkConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed =
        cfg::parse_config(&text).with_context(|| format!("parsing {}", path.display()))?;
    for warning in &parsed.warnings {
        eprintln!("{}: warning: {}", path.display(), warning);
    }
    Ok(parsed.config)
}

/// Uniform random weights scaled per layer fan-in, so deep forwards stay
/// numerically tame; used when benchmarking without a weights file.
pub fn random_weights(config: &NetworkConfig, seed: u64) -> Result<ModelWeights> {
    let shapes = cfg::compute_output_shapes(config)?;
    let input = config.input_shape()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (i, layer) in config.layers.iter().enumerate() {
        if layer.kind != LayerKind::Convolutional {
            continue;
        }
        let filters = layer.require_usize("filters")?;
        let size = layer.require_usize("size")?;
        let in_channels = if i == 0 { input.c } else { shapes[i - 1].c };
        let limit = (3.0 / (in_channels * size * size) as f32).sqrt();
        layers.push(ConvWeights {
            filters,
            in_channels,
            size,
            weights: (0..filters * in_channels * size * size)
                .map(|_| rng.random_range(-limit..limit))
                .collect(),
            bias: vec![0.0; filters],
            folded_bn: false,
        });
    }
    Ok(ModelWeights {
        header: WeightsHeader::default(),
        layers,
    })
}

impl Model {
    pub fn load(cfg_path: &Path, weights_path: &Path, names_path: &Path) -> Result<Self> {
        let config = load_config(cfg_path)?;
        let file = fs::File::open(weights_path)
            .with_context(|| format!("opening weights file {}", weights_path.display()))?;
        let weights = read_weights(std::io::BufReader::new(file), &config)
            .with_context(|| format!("loading {}", weights_path.display()))?;
        let names_text = fs::read_to_string(names_path)
            .with_context(|| format!("reading names file {}", names_path.display()))?;
        Self::assemble(config, weights, load_names(&names_text))
    }

    pub fn with_random_weights(cfg_path: &Path, names: Vec<String>, seed: u64) -> Result<Self> {
        let config = load_config(cfg_path)?;
        let weights = random_weights(&config, seed)?;
        Self::assemble(config, weights, names)
    }

    /// Bench loader: forces the input resolution, takes real weights when
    /// given and seeded random ones otherwise, and needs no names file.
    pub fn load_for_bench(
        cfg_path: &Path,
        weights_path: Option<&Path>,
        size: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut config = load_config(cfg_path)?;
        config.net.set("width", size.to_string());
        config.net.set("height", size.to_string());
        let weights = match weights_path {
            Some(path) => {
                let file = fs::File::open(path)
                    .with_context(|| format!("opening weights file {}", path.display()))?;
                read_weights(std::io::BufReader::new(file), &config)
                    .with_context(|| format!("loading {}", path.display()))?
            }
            None => random_weights(&config, seed)?,
        };
        Self::assemble(config, weights, Vec::new())
    }

    fn assemble(
        config: NetworkConfig,
        weights: ModelWeights,
        names: Vec<String>,
    ) -> Result<Self> {
        let input = config.input_shape()?;
        let heads = config.yolo_heads()?;
        Ok(Model {
            net_w: input.w,
            net_h: input.h,
            config,
            weights,
            names,
            heads,
        })
    }

    /// Full pipeline for one image: letterbox, forward, decode every head,
    /// per-class NMS, and mapping back to original-image coordinates.
    pub fn detect(
        &self,
        ctx: &mut ExecContext,
        image: &PixelImage,
        conf_threshold: f32,
        iou_threshold: f32,
    ) -> Result<Vec<Detection>> {
        let (input, transform) = letterbox(image, self.net_w, self.net_h);
        let head_tensors = self.forward_tensor(ctx, &input)?;
        let mut candidates = Vec::new();
        for (head, spec) in head_tensors.iter().zip(&self.heads) {
            let anchors = spec.masked_anchors();
            candidates.extend(decode_head(
                head,
                &anchors,
                self.net_w,
                self.net_h,
                spec.classes,
                conf_threshold,
                &self.names,
            )?);
        }
        let mut kept = nms(candidates, iou_threshold);
        unletterbox(&mut kept, &transform);
        Ok(kept)
    }

    /// Raw head tensors for a pre-letterboxed input; the bench path.
    pub fn forward_tensor(&self, ctx: &mut ExecContext, input: &Tensor) -> Result<Vec<Tensor>> {
        Ok(forward(&self.config, &self.weights, input, ctx)?)
    }
}
