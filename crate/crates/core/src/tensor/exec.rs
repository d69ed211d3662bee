//! Network execution: runs the layer list in order, keeping activations
//! alive only while a later route/shortcut still needs them, and returns
//! the raw feature map feeding each yolo layer.

use std::time::{Duration, Instant};

use crate::cfg::{self, LayerKind, NetworkConfig, Shape};
use crate::weights::ModelWeights;

use super::conv::{convolve_optimized_into, convolve_reference_into, ConvSpec};
use super::ops::{
    leaky_relu_in_place, maxpool_into, route_into, shortcut_accumulate, upsample_into,
};
use super::{Tensor, TensorError};

/// Wall-clock cost of one executed layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerTiming {
    pub layer: usize,
    pub kind: LayerKind,
    pub duration: Duration,
}

/// Per-execution state: the reusable im2col scratch buffer, the optional
/// thread pool for the convolution GEMM, timing records, and allocation
/// counters used by tests to pin down the memory behavior.
pub struct ExecContext {
    scratch: Vec<f32>,
    pool: Option<rayon::ThreadPool>,
    reference_conv: bool,
    tensor_allocs: u64,
    scratch_allocs: u64,
    timings: Vec<LayerTiming>,
}

impl Default for ExecContext {
    fn default() -> Self {
        Self::new()
    }
}

impl ExecContext {
    pub fn new() -> Self {
        ExecContext {
            scratch: Vec::new(),
            pool: None,
            reference_conv: false,
            tensor_allocs: 0,
            scratch_allocs: 0,
            timings: Vec::new(),
        }
    }

    /// Pins the convolution GEMM to a dedicated pool of `threads` workers.
    pub fn with_threads(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()?;
        let mut ctx = Self::new();
        ctx.pool = Some(pool);
        Ok(ctx)
    }

    /// Forces the naive convolution for every layer; test/oracle use only.
    pub fn use_reference_conv(&mut self, yes: bool) {
        self.reference_conv = yes;
    }

    pub fn timings(&self) -> &[LayerTiming] {
        &self.timings
    }

    /// Tensor buffers allocated by forward passes on this context.
    pub fn tensor_allocs(&self) -> u64 {
        self.tensor_allocs
    }

    /// Times the im2col scratch buffer had to grow. Stays at one once the
    /// context has run the largest layer it will see.
    pub fn scratch_allocs(&self) -> u64 {
        self.scratch_allocs
    }

    pub fn reset_counters(&mut self) {
        self.tensor_allocs = 0;
        self.scratch_allocs = 0;
    }

    fn alloc(&mut self, shape: Shape) -> Tensor {
        self.tensor_allocs += 1;
        Tensor::zeros(shape.c, shape.h, shape.w)
    }

    fn clone_tensor(&mut self, t: &Tensor) -> Tensor {
        self.tensor_allocs += 1;
        t.clone()
    }

    fn ensure_scratch(&mut self, len: usize) {
        if self.scratch.len() < len {
            self.scratch.resize(len, 0.0);
            self.scratch_allocs += 1;
        }
    }
}

#[derive(Clone, Copy)]
enum Activation {
    Linear,
    Leaky,
}

impl Activation {
    fn parse(name: &str, layer: usize) -> Result<Self, TensorError> {
        match name {
            "linear" => Ok(Activation::Linear),
            "leaky" => Ok(Activation::Leaky),
            other => Err(TensorError::UnsupportedActivation {
                layer,
                activation: other.to_string(),
            }),
        }
    }

    fn apply(self, t: &mut Tensor) {
        if let Activation::Leaky = self {
            leaky_relu_in_place(t);
        }
    }
}

enum LayerPlan {
    Conv {
        weights_index: usize,
        spec: ConvSpec,
        activation: Activation,
    },
    Maxpool {
        size: usize,
        stride: usize,
        padding: usize,
    },
    Route {
        sources: Vec<usize>,
    },
    Shortcut {
        from: usize,
        activation: Activation,
    },
    Upsample {
        stride: usize,
    },
    Yolo,
}

fn build_plan(cfg: &NetworkConfig) -> Result<Vec<LayerPlan>, TensorError> {
    let mut plans = Vec::with_capacity(cfg.layers.len());
    let mut conv_count = 0;
    for (i, layer) in cfg.layers.iter().enumerate() {
        let plan = match layer.kind {
            LayerKind::Convolutional => {
                let spec = ConvSpec {
                    size: layer.require_usize("size")?,
                    stride: layer.usize_or("stride", 1)?,
                    pad: cfg::conv_padding(layer)?,
                };
                let activation = Activation::parse(layer.activation(), i)?;
                let plan = LayerPlan::Conv {
                    weights_index: conv_count,
                    spec,
                    activation,
                };
                conv_count += 1;
                plan
            }
            LayerKind::Maxpool => {
                let stride = layer.usize_or("stride", 1)?;
                let size = layer.usize_or("size", stride)?;
                let padding = layer.usize_or("padding", size.saturating_sub(1))?;
                LayerPlan::Maxpool {
                    size,
                    stride,
                    padding,
                }
            }
            LayerKind::Route => {
                let sources = layer
                    .i64_list("layers")?
                    .into_iter()
                    .map(|r| {
                        cfg::resolve_layer_ref(i, r).ok_or(CfgDangling {
                            layer: i,
                            line: layer.source_line,
                            reference: r,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|d| {
                        TensorError::Cfg(cfg::CfgError::DanglingReference {
                            layer: d.layer,
                            line: d.line,
                            reference: d.reference,
                        })
                    })?;
                LayerPlan::Route { sources }
            }
            LayerKind::Shortcut => {
                let reference = layer
                    .get("from")
                    .unwrap_or("0")
                    .trim()
                    .parse::<i64>()
                    .unwrap_or(0);
                let from = cfg::resolve_layer_ref(i, reference).ok_or(TensorError::Cfg(
                    cfg::CfgError::DanglingReference {
                        layer: i,
                        line: layer.source_line,
                        reference,
                    },
                ))?;
                LayerPlan::Shortcut {
                    from,
                    activation: Activation::parse(layer.activation(), i)?,
                }
            }
            LayerKind::Upsample => LayerPlan::Upsample {
                stride: layer.usize_or("stride", 2)?,
            },
            LayerKind::Yolo => LayerPlan::Yolo,
            LayerKind::Net => unreachable!("net section is not a layer"),
        };
        plans.push(plan);
    }
    Ok(plans)
}

struct CfgDangling {
    layer: usize,
    line: usize,
    reference: i64,
}

/// Slots a layer reads. `None` stands for the network input.
fn consumed_slots(i: usize, plan: &LayerPlan) -> Vec<Option<usize>> {
    let prev = i.checked_sub(1);
    match plan {
        LayerPlan::Conv { .. }
        | LayerPlan::Maxpool { .. }
        | LayerPlan::Upsample { .. }
        | LayerPlan::Yolo => vec![prev],
        LayerPlan::Shortcut { from, .. } => vec![prev, Some(*from)],
        LayerPlan::Route { sources } => sources.iter().map(|&s| Some(s)).collect(),
    }
}

/// Executes the network over `input` and returns the feature map feeding
/// each yolo layer, in layer order. Activations are released as soon as no
/// later layer needs them.
pub fn forward(
    cfg: &NetworkConfig,
    weights: &ModelWeights,
    input: &Tensor,
    ctx: &mut ExecContext,
) -> Result<Vec<Tensor>, TensorError> {
    let net_shape = cfg.input_shape()?;
    if input.shape() != net_shape {
        return Err(TensorError::InputShapeMismatch {
            expected: net_shape,
            got: input.shape(),
        });
    }
    if weights.layers.len() != cfg.conv_layer_count() {
        return Err(TensorError::WeightsLayerCount {
            expected: cfg.conv_layer_count(),
            got: weights.layers.len(),
        });
    }

    let shapes = cfg::compute_output_shapes(cfg)?;
    let plans = build_plan(cfg)?;

    // Weight blocks must agree with the geometry the config implies.
    for (i, plan) in plans.iter().enumerate() {
        if let LayerPlan::Conv {
            weights_index,
            spec,
            ..
        } = plan
        {
            let w = &weights.layers[*weights_index];
            let in_c = if i == 0 { net_shape.c } else { shapes[i - 1].c };
            if w.in_channels != in_c {
                return Err(TensorError::ChannelMismatch {
                    expected: w.in_channels,
                    got: in_c,
                });
            }
            let expected = shapes[i].c * in_c * spec.size * spec.size;
            if w.weights.len() != expected {
                return Err(TensorError::WeightBlockSize {
                    expected,
                    got: w.weights.len(),
                });
            }
        }
    }

    // Reference counts per produced activation.
    let mut remaining = vec![0usize; plans.len()];
    for (i, plan) in plans.iter().enumerate() {
        for slot in consumed_slots(i, plan).into_iter().flatten() {
            remaining[slot] += 1;
        }
    }

    // Size the im2col scratch once for the largest lowered layer.
    if !ctx.reference_conv {
        let mut max_patch = 0usize;
        for (i, plan) in plans.iter().enumerate() {
            if let LayerPlan::Conv { spec, .. } = plan {
                if spec.size == 1 && spec.stride == 1 && spec.pad == 0 {
                    continue;
                }
                let in_c = if i == 0 { net_shape.c } else { shapes[i - 1].c };
                max_patch =
                    max_patch.max(in_c * spec.size * spec.size * shapes[i].h * shapes[i].w);
            }
        }
        ctx.ensure_scratch(max_patch);
    }

    ctx.timings.clear();
    let mut outputs: Vec<Option<Tensor>> = (0..plans.len()).map(|_| None).collect();
    let mut heads = Vec::new();

    for (i, plan) in plans.iter().enumerate() {
        let started = Instant::now();
        let kind = cfg.layers[i].kind;

        match plan {
            LayerPlan::Yolo => {
                // Pass-through: hand the incoming feature map to the caller,
                // moving it when this layer is its last consumer.
                let head = match i.checked_sub(1) {
                    None => ctx.clone_tensor(input),
                    Some(prev) => {
                        remaining[prev] -= 1;
                        if remaining[prev] == 0 {
                            outputs[prev].take().expect("live activation")
                        } else {
                            let t = outputs[prev].as_ref().expect("live activation");
                            let t = t.clone();
                            ctx.tensor_allocs += 1;
                            t
                        }
                    }
                };
                if remaining[i] > 0 {
                    outputs[i] = Some(ctx.clone_tensor(&head));
                }
                ctx.timings.push(LayerTiming {
                    layer: i,
                    kind,
                    duration: started.elapsed(),
                });
                heads.push(head);
                continue;
            }
            _ => {}
        }

        fn prev_tensor<'a>(
            i: usize,
            input: &'a Tensor,
            outputs: &'a [Option<Tensor>],
        ) -> &'a Tensor {
            match i.checked_sub(1) {
                None => input,
                Some(p) => outputs[p].as_ref().expect("live activation"),
            }
        }

        let mut out = ctx.alloc(shapes[i]);
        match plan {
            LayerPlan::Conv {
                weights_index,
                spec,
                activation,
            } => {
                let w = &weights.layers[*weights_index];
                let src = prev_tensor(i, input, &outputs);
                if ctx.reference_conv {
                    convolve_reference_into(src, &w.weights, &w.bias, spec, &mut out);
                } else {
                    let scratch = &mut ctx.scratch;
                    match &ctx.pool {
                        Some(pool) => pool.install(|| {
                            convolve_optimized_into(
                                src, &w.weights, &w.bias, spec, scratch, &mut out,
                            )
                        }),
                        None => convolve_optimized_into(
                            src, &w.weights, &w.bias, spec, scratch, &mut out,
                        ),
                    }
                }
                activation.apply(&mut out);
            }
            LayerPlan::Maxpool {
                size,
                stride,
                padding,
            } => {
                maxpool_into(prev_tensor(i, input, &outputs), *size, *stride, *padding, &mut out);
            }
            LayerPlan::Route { sources } => {
                let tensors: Vec<&Tensor> = sources
                    .iter()
                    .map(|&s| outputs[s].as_ref().expect("live activation"))
                    .collect();
                route_into(&tensors, &mut out);
            }
            LayerPlan::Shortcut { from, activation } => {
                let primary = prev_tensor(i, input, &outputs);
                out.as_mut_slice().copy_from_slice(primary.as_slice());
                let other = outputs[*from].as_ref().expect("live activation");
                shortcut_accumulate(&mut out, other);
                activation.apply(&mut out);
            }
            LayerPlan::Upsample { stride } => {
                upsample_into(prev_tensor(i, input, &outputs), *stride, &mut out);
            }
            LayerPlan::Yolo => unreachable!("handled above"),
        }

        ctx.timings.push(LayerTiming {
            layer: i,
            kind,
            duration: started.elapsed(),
        });

        for slot in consumed_slots(i, plan).into_iter().flatten() {
            remaining[slot] -= 1;
            if remaining[slot] == 0 {
                outputs[slot] = None;
            }
        }
        outputs[i] = Some(out);
    }

    Ok(heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::parse_config;
    use crate::weights::{ConvWeights, ModelWeights, WeightsHeader};

    /// conv(4f 3x3 BN-style folded) -> maxpool -> conv(2f 1x1) -> yolo,
    /// plus a route back to layer 0 -> upsample -> yolo.
    const SMALL_NET: &str = "\
[net]
width=8
height=8
channels=3

[convolutional]
filters=4
size=3
stride=1
pad=1
activation=leaky

[maxpool]
size=2
stride=2

[convolutional]
filters=2
size=1
stride=1
pad=1
activation=linear

[yolo]
mask=0
anchors=10,14
classes=1

[route]
layers = 0

[convolutional]
filters=2
size=1
stride=1
pad=1
activation=linear

[yolo]
mask=0
anchors=10,14
classes=1
";

    fn small_cfg() -> NetworkConfig {
        parse_config(SMALL_NET).unwrap().config
    }

    fn uniform_weights(cfg: &NetworkConfig, value: f32) -> ModelWeights {
        let shapes = cfg::compute_output_shapes(cfg).unwrap();
        let input = cfg.input_shape().unwrap();
        let mut layers = Vec::new();
        for (i, layer) in cfg.layers.iter().enumerate() {
            if layer.kind != LayerKind::Convolutional {
                continue;
            }
            let filters = layer.require_usize("filters").unwrap();
            let size = layer.require_usize("size").unwrap();
            let in_channels = if i == 0 { input.c } else { shapes[i - 1].c };
            layers.push(ConvWeights {
                filters,
                in_channels,
                size,
                weights: vec![value; filters * in_channels * size * size],
                bias: vec![0.0; filters],
                folded_bn: false,
            });
        }
        ModelWeights {
            header: WeightsHeader::default(),
            layers,
        }
    }

    #[test]
    fn forward_returns_heads_in_layer_order() {
        let cfg = small_cfg();
        let weights = uniform_weights(&cfg, 0.01);
        let input = Tensor::filled(3, 8, 8, 1.0);
        let mut ctx = ExecContext::new();
        let heads = forward(&cfg, &weights, &input, &mut ctx).unwrap();
        assert_eq!(heads.len(), 2);
        assert_eq!(heads[0].shape(), Shape::new(2, 4, 4));
        assert_eq!(heads[1].shape(), Shape::new(2, 8, 8));
    }

    #[test]
    fn zero_weights_produce_zero_heads() {
        let cfg = small_cfg();
        let weights = uniform_weights(&cfg, 0.0);
        let input = Tensor::zeros(3, 8, 8);
        let mut ctx = ExecContext::new();
        let heads = forward(&cfg, &weights, &input, &mut ctx).unwrap();
        for head in heads {
            assert!(head.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn input_shape_is_enforced() {
        let cfg = small_cfg();
        let weights = uniform_weights(&cfg, 0.0);
        let input = Tensor::zeros(3, 4, 4);
        let mut ctx = ExecContext::new();
        assert!(matches!(
            forward(&cfg, &weights, &input, &mut ctx),
            Err(TensorError::InputShapeMismatch { .. })
        ));
    }

    #[test]
    fn weights_layer_count_is_enforced() {
        let cfg = small_cfg();
        let mut weights = uniform_weights(&cfg, 0.0);
        weights.layers.pop();
        let input = Tensor::zeros(3, 8, 8);
        let mut ctx = ExecContext::new();
        assert!(matches!(
            forward(&cfg, &weights, &input, &mut ctx),
            Err(TensorError::WeightsLayerCount { .. })
        ));
    }

    #[test]
    fn optimized_and_reference_paths_agree_end_to_end() {
        let cfg = small_cfg();
        let weights = uniform_weights(&cfg, 0.05);
        let input = Tensor::from_vec(
            3,
            8,
            8,
            (0..192).map(|i| (i as f32 * 0.37).sin()).collect(),
        )
        .unwrap();

        let mut fast = ExecContext::new();
        let a = forward(&cfg, &weights, &input, &mut fast).unwrap();
        let mut slow = ExecContext::new();
        slow.use_reference_conv(true);
        let b = forward(&cfg, &weights, &input, &mut slow).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
                assert!((u - v).abs() <= 1e-4 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn forward_is_deterministic_across_thread_counts() {
        let cfg = small_cfg();
        let weights = uniform_weights(&cfg, 0.02);
        let input = Tensor::from_vec(
            3,
            8,
            8,
            (0..192).map(|i| ((i * 31 % 97) as f32) / 97.0).collect(),
        )
        .unwrap();

        let mut one = ExecContext::with_threads(1).unwrap();
        let mut four = ExecContext::with_threads(4).unwrap();
        let a = forward(&cfg, &weights, &input, &mut one).unwrap();
        let b = forward(&cfg, &weights, &input, &mut four).unwrap();
        assert_eq!(a, b, "results must be bit-identical across thread counts");
    }

    #[test]
    fn allocation_accounting_is_exact() {
        let cfg = small_cfg();
        let weights = uniform_weights(&cfg, 0.01);
        let input = Tensor::filled(3, 8, 8, 0.5);
        let mut ctx = ExecContext::new();
        forward(&cfg, &weights, &input, &mut ctx).unwrap();

        // Every non-yolo layer allocates exactly one output; both yolo heads
        // are moves of their last-use inputs; the scratch buffer was sized
        // once. SMALL_NET has 5 non-yolo layers.
        assert_eq!(ctx.tensor_allocs(), 5);
        assert_eq!(ctx.scratch_allocs(), 1);

        // A second run on the same context reuses the scratch buffer.
        ctx.reset_counters();
        forward(&cfg, &weights, &input, &mut ctx).unwrap();
        assert_eq!(ctx.tensor_allocs(), 5);
        assert_eq!(ctx.scratch_allocs(), 0);
    }

    #[test]
    fn per_layer_timings_cover_every_layer() {
        let cfg = small_cfg();
        let weights = uniform_weights(&cfg, 0.01);
        let input = Tensor::filled(3, 8, 8, 0.5);
        let mut ctx = ExecContext::new();
        forward(&cfg, &weights, &input, &mut ctx).unwrap();
        assert_eq!(ctx.timings().len(), cfg.layers.len());
        assert_eq!(ctx.timings()[0].kind, LayerKind::Convolutional);
    }
}
