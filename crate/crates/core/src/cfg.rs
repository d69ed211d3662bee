//! Darknet-format network configuration files: parsing, validation,
//! shape propagation, and the retraining rewrites (class-count change,
//! layer freezing).
//!
//! The dialect is the classic Darknet one: `[section]` headers,
//! `key=value` lines, `#`/`;` comments, blank lines ignored. Only the
//! seven layer kinds used by YOLOv3 and YOLOv3-tiny are accepted.

use std::fmt;

use thiserror::Error;

/// Channels-height-width extent of one activation map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Net,
    Convolutional,
    Maxpool,
    Route,
    Shortcut,
    Upsample,
    Yolo,
}

impl LayerKind {
    pub fn from_section(name: &str) -> Option<Self> {
        match name {
            "net" | "network" => Some(LayerKind::Net),
            "convolutional" | "conv" => Some(LayerKind::Convolutional),
            "maxpool" | "max" => Some(LayerKind::Maxpool),
            "route" => Some(LayerKind::Route),
            "shortcut" => Some(LayerKind::Shortcut),
            "upsample" => Some(LayerKind::Upsample),
            "yolo" => Some(LayerKind::Yolo),
            _ => None,
        }
    }

    pub fn section_name(&self) -> &'static str {
        match self {
            LayerKind::Net => "net",
            LayerKind::Convolutional => "convolutional",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Route => "route",
            LayerKind::Shortcut => "shortcut",
            LayerKind::Upsample => "upsample",
            LayerKind::Yolo => "yolo",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.section_name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CfgError {
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { name: String, line: usize },
    #[error("line {line}: duplicate [net] section")]
    DuplicateNetSection { line: usize },
    #[error("line {line}: the first section must be [net]")]
    NetNotFirst { line: usize },
    #[error("config has no [net] section")]
    MissingNetSection,
    #[error("line {line}: malformed line `{content}`")]
    MalformedLine { line: usize, content: String },
    #[error("layer {layer} (line {line}): reference {reference} does not resolve to an earlier layer")]
    DanglingReference {
        layer: usize,
        line: usize,
        reference: i64,
    },
    #[error("layer {layer} (line {line}): route groups are not supported by this dialect")]
    UnsupportedRouteGroups { layer: usize, line: usize },
    #[error("line {line}: [{section}] is missing required key `{key}`")]
    MissingKey {
        section: String,
        key: String,
        line: usize,
    },
    #[error("line {line}: key `{key}` has invalid value `{value}`")]
    InvalidValue {
        key: String,
        value: String,
        line: usize,
    },
    #[error("layer {layer} (line {line}): mask index {mask} out of range for {anchors} anchor pairs")]
    MaskOutOfRange {
        layer: usize,
        line: usize,
        mask: usize,
        anchors: usize,
    },
    #[error("layer {layer}: shape mismatch, expected {expected} but got {got}")]
    ShapeMismatch {
        layer: usize,
        expected: Shape,
        got: Shape,
    },
    #[error("layer {layer}: output shape has a non-positive dimension")]
    NonPositiveShape { layer: usize },
    #[error("layer {layer}: [yolo] is not immediately preceded by a [convolutional] layer")]
    YoloWithoutHeadConv { layer: usize },
    #[error("freeze index {index} out of range (network has {len} layers)")]
    IndexOutOfRange { index: usize, len: usize },
}

/// One `[section]` of a config file, with its key/value lines in file order.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub params: Vec<(String, String)>,
    pub source_line: usize,
}

/// Equality is structural: `source_line` is diagnostic only and two specs
/// that differ solely in where they appeared in a file compare equal.
impl PartialEq for LayerSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.params == other.params
    }
}

impl Eq for LayerSpec {}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            params: Vec::new(),
            source_line: 0,
        }
    }

    /// First occurrence wins, mirroring Darknet's option lookup.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Replaces the first occurrence in place, or appends if absent.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.params.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => *v = value,
            None => self.params.push((key.to_string(), value)),
        }
    }

    /// Removes every occurrence of `key`; returns true if any was present.
    pub fn remove(&mut self, key: &str) -> bool {
        let before = self.params.len();
        self.params.retain(|(k, _)| k != key);
        self.params.len() != before
    }

    fn invalid(&self, key: &str, value: &str) -> CfgError {
        CfgError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            line: self.source_line,
        }
    }

    pub fn usize_param(&self, key: &str) -> Result<Option<usize>, CfgError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| self.invalid(key, v)),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CfgError> {
        Ok(self.usize_param(key)?.unwrap_or(default))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize, CfgError> {
        self.usize_param(key)?.ok_or_else(|| CfgError::MissingKey {
            section: self.kind.section_name().to_string(),
            key: key.to_string(),
            line: self.source_line,
        })
    }

    pub fn i64_list(&self, key: &str) -> Result<Vec<i64>, CfgError> {
        let Some(raw) = self.get(key) else {
            return Ok(Vec::new());
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<i64>().map_err(|_| self.invalid(key, raw)))
            .collect()
    }

    pub fn f32_list(&self, key: &str) -> Result<Vec<f32>, CfgError> {
        let Some(raw) = self.get(key) else {
            return Ok(Vec::new());
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f32>().map_err(|_| self.invalid(key, raw)))
            .collect()
    }

    pub fn activation(&self) -> &str {
        self.get("activation").unwrap_or("linear")
    }

    pub fn batch_normalize(&self) -> bool {
        self.get("batch_normalize") == Some("1")
    }

    /// Anchor (width, height) pairs of a `[yolo]` section.
    pub fn anchor_pairs(&self) -> Result<Vec<(f32, f32)>, CfgError> {
        let values = self.f32_list("anchors")?;
        if values.len() % 2 != 0 {
            return Err(self.invalid("anchors", self.get("anchors").unwrap_or("")));
        }
        Ok(values.chunks(2).map(|p| (p[0], p[1])).collect())
    }

    pub fn mask_indices(&self) -> Result<Vec<usize>, CfgError> {
        self.i64_list("mask")?
            .into_iter()
            .map(|v| {
                usize::try_from(v).map_err(|_| self.invalid("mask", self.get("mask").unwrap_or("")))
            })
            .collect()
    }
}

/// A parsed network: the `[net]` preamble plus the layer list in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub net: LayerSpec,
    pub layers: Vec<LayerSpec>,
}

/// Anchors, mask, and class count of one `[yolo]` layer.
#[derive(Debug, Clone, PartialEq)]
pub struct YoloHead {
    pub layer_index: usize,
    pub classes: usize,
    pub anchors: Vec<(f32, f32)>,
    pub mask: Vec<usize>,
}

impl YoloHead {
    /// The anchor pairs this head actually predicts with, in mask order.
    pub fn masked_anchors(&self) -> Vec<(f32, f32)> {
        self.mask.iter().map(|&i| self.anchors[i]).collect()
    }
}

impl NetworkConfig {
    /// Network input extent from the `[net]` section.
    pub fn input_shape(&self) -> Result<Shape, CfgError> {
        Ok(Shape {
            c: self.net.require_usize("channels")?,
            h: self.net.require_usize("height")?,
            w: self.net.require_usize("width")?,
        })
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::Convolutional)
            .count()
    }

    pub fn yolo_heads(&self) -> Result<Vec<YoloHead>, CfgError> {
        let mut heads = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.kind != LayerKind::Yolo {
                continue;
            }
            let anchors = layer.anchor_pairs()?;
            let mut mask = layer.mask_indices()?;
            if mask.is_empty() {
                // No mask means the head uses every anchor pair.
                mask = (0..anchors.len()).collect();
            }
            heads.push(YoloHead {
                layer_index: i,
                classes: layer.usize_or("classes", 20)?,
                anchors,
                mask,
            });
        }
        Ok(heads)
    }
}

/// Non-fatal observation made while parsing (unknown keys and the like).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Result of [`parse_config`]: the config plus any warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: NetworkConfig,
    pub warnings: Vec<ParseWarning>,
}

const NET_KEYS: &[&str] = &[
    "batch",
    "subdivisions",
    "width",
    "height",
    "channels",
    "momentum",
    "decay",
    "angle",
    "saturation",
    "exposure",
    "hue",
    "learning_rate",
    "burn_in",
    "max_batches",
    "policy",
    "steps",
    "scales",
    "inputs",
    "max_crop",
    "min_crop",
    "flip",
    "mosaic",
    "mixup",
    "cutmix",
    "blur",
    "gaussian_noise",
    "letter_box",
    "resize",
    "adam",
    "b1",
    "b2",
    "eps",
    "power",
    "gamma",
    "step",
    "scale",
    "time_steps",
];

const CONV_KEYS: &[&str] = &[
    "batch_normalize",
    "filters",
    "size",
    "stride",
    "pad",
    "padding",
    "activation",
    "stopbackward",
];

const MAXPOOL_KEYS: &[&str] = &["size", "stride", "padding", "stopbackward"];
const ROUTE_KEYS: &[&str] = &["layers", "stopbackward"];
const SHORTCUT_KEYS: &[&str] = &["from", "activation", "stopbackward"];
const UPSAMPLE_KEYS: &[&str] = &["stride", "scale", "stopbackward"];
const YOLO_KEYS: &[&str] = &[
    "mask",
    "anchors",
    "classes",
    "num",
    "jitter",
    "ignore_thresh",
    "truth_thresh",
    "random",
    "scale_x_y",
    "iou_normalizer",
    "cls_normalizer",
    "iou_loss",
    "nms_kind",
    "beta_nms",
    "max_delta",
    "stopbackward",
];

fn known_keys(kind: LayerKind) -> &'static [&'static str] {
    match kind {
        LayerKind::Net => NET_KEYS,
        LayerKind::Convolutional => CONV_KEYS,
        LayerKind::Maxpool => MAXPOOL_KEYS,
        LayerKind::Route => ROUTE_KEYS,
        LayerKind::Shortcut => SHORTCUT_KEYS,
        LayerKind::Upsample => UPSAMPLE_KEYS,
        LayerKind::Yolo => YOLO_KEYS,
    }
}

/// Resolves a route/shortcut reference (relative negative or absolute
/// non-negative) against the index of the referring layer. The target must
/// be strictly earlier.
pub fn resolve_layer_ref(current: usize, reference: i64) -> Option<usize> {
    let resolved = if reference < 0 {
        let back = reference.unsigned_abs() as usize;
        current.checked_sub(back)?
    } else {
        reference as usize
    };
    (resolved < current).then_some(resolved)
}

/// Parses a Darknet config. Layer order is preserved; unknown keys inside
/// known sections are kept verbatim and reported as warnings.
pub fn parse_config(text: &str) -> Result<ParsedConfig, CfgError> {
    let mut sections: Vec<LayerSpec> = Vec::new();
    let mut warnings = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return Err(CfgError::MalformedLine {
                    line: line_no,
                    content: line.to_string(),
                });
            };
            let name = name.trim();
            let Some(kind) = LayerKind::from_section(name) else {
                return Err(CfgError::UnknownSection {
                    name: name.to_string(),
                    line: line_no,
                });
            };
            if kind == LayerKind::Net {
                if sections.iter().any(|s| s.kind == LayerKind::Net) {
                    return Err(CfgError::DuplicateNetSection { line: line_no });
                }
                if !sections.is_empty() {
                    return Err(CfgError::NetNotFirst { line: line_no });
                }
            }
            sections.push(LayerSpec {
                kind,
                params: Vec::new(),
                source_line: line_no,
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CfgError::MalformedLine {
                line: line_no,
                content: line.to_string(),
            });
        };
        let Some(section) = sections.last_mut() else {
            return Err(CfgError::MalformedLine {
                line: line_no,
                content: line.to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !known_keys(section.kind).contains(&key.as_str()) {
            warnings.push(ParseWarning {
                line: line_no,
                message: format!("unknown key `{}` in [{}]", key, section.kind),
            });
        }
        section.params.push((key, value));
    }

    let mut iter = sections.into_iter();
    let net = match iter.next() {
        Some(s) if s.kind == LayerKind::Net => s,
        _ => return Err(CfgError::MissingNetSection),
    };
    let layers: Vec<LayerSpec> = iter.collect();

    validate_layers(&layers)?;

    Ok(ParsedConfig {
        config: NetworkConfig { net, layers },
        warnings,
    })
}

fn validate_layers(layers: &[LayerSpec]) -> Result<(), CfgError> {
    for (i, layer) in layers.iter().enumerate() {
        match layer.kind {
            LayerKind::Convolutional => {
                let filters = layer.require_usize("filters")?;
                let size = layer.require_usize("size")?;
                let stride = layer.usize_or("stride", 1)?;
                if filters == 0 || size == 0 {
                    return Err(layer.invalid(
                        if filters == 0 { "filters" } else { "size" },
                        "0",
                    ));
                }
                if stride == 0 {
                    return Err(layer.invalid("stride", "0"));
                }
            }
            LayerKind::Route => {
                if layer.get("groups").is_some() || layer.get("group_id").is_some() {
                    return Err(CfgError::UnsupportedRouteGroups {
                        layer: i,
                        line: layer.source_line,
                    });
                }
                let refs = layer.i64_list("layers")?;
                if refs.is_empty() {
                    return Err(CfgError::MissingKey {
                        section: "route".to_string(),
                        key: "layers".to_string(),
                        line: layer.source_line,
                    });
                }
                for r in refs {
                    if resolve_layer_ref(i, r).is_none() {
                        return Err(CfgError::DanglingReference {
                            layer: i,
                            line: layer.source_line,
                            reference: r,
                        });
                    }
                }
            }
            LayerKind::Shortcut => {
                let from = layer
                    .get("from")
                    .ok_or_else(|| CfgError::MissingKey {
                        section: "shortcut".to_string(),
                        key: "from".to_string(),
                        line: layer.source_line,
                    })?
                    .trim()
                    .parse::<i64>()
                    .map_err(|_| layer.invalid("from", layer.get("from").unwrap_or("")))?;
                if resolve_layer_ref(i, from).is_none() {
                    return Err(CfgError::DanglingReference {
                        layer: i,
                        line: layer.source_line,
                        reference: from,
                    });
                }
            }
            LayerKind::Yolo => {
                let anchors = layer.anchor_pairs()?;
                for m in layer.mask_indices()? {
                    if m >= anchors.len() {
                        return Err(CfgError::MaskOutOfRange {
                            layer: i,
                            line: layer.source_line,
                            mask: m,
                            anchors: anchors.len(),
                        });
                    }
                }
            }
            LayerKind::Maxpool | LayerKind::Upsample => {}
            LayerKind::Net => unreachable!("net sections are split off before validation"),
        }
    }
    Ok(())
}

/// Effective zero-padding (pixels per side) of a convolutional layer.
/// `pad=1` selects Darknet's same-padding (`size/2`); otherwise an explicit
/// `padding` value applies.
pub fn conv_padding(layer: &LayerSpec) -> Result<usize, CfgError> {
    if layer.usize_or("pad", 0)? != 0 {
        Ok(layer.require_usize("size")? / 2)
    } else {
        layer.usize_or("padding", 0)
    }
}

/// Propagates shapes through every layer, Darknet semantics throughout.
pub fn compute_output_shapes(cfg: &NetworkConfig) -> Result<Vec<Shape>, CfgError> {
    let input = cfg.input_shape()?;
    if input.len() == 0 {
        return Err(CfgError::NonPositiveShape { layer: 0 });
    }
    let mut shapes: Vec<Shape> = Vec::with_capacity(cfg.layers.len());
    let mut prev = input;

    for (i, layer) in cfg.layers.iter().enumerate() {
        let out = match layer.kind {
            LayerKind::Convolutional => {
                let filters = layer.require_usize("filters")?;
                let size = layer.require_usize("size")?;
                let stride = layer.usize_or("stride", 1)?;
                let pad = conv_padding(layer)?;
                let oh = conv_extent(prev.h, size, stride, 2 * pad)
                    .ok_or(CfgError::NonPositiveShape { layer: i })?;
                let ow = conv_extent(prev.w, size, stride, 2 * pad)
                    .ok_or(CfgError::NonPositiveShape { layer: i })?;
                Shape::new(filters, oh, ow)
            }
            LayerKind::Maxpool => {
                let stride = layer.usize_or("stride", 1)?;
                let size = layer.usize_or("size", stride)?;
                let padding = layer.usize_or("padding", size.saturating_sub(1))?;
                let oh = conv_extent(prev.h, size, stride, padding)
                    .ok_or(CfgError::NonPositiveShape { layer: i })?;
                let ow = conv_extent(prev.w, size, stride, padding)
                    .ok_or(CfgError::NonPositiveShape { layer: i })?;
                Shape::new(prev.c, oh, ow)
            }
            LayerKind::Route => {
                let refs = layer.i64_list("layers")?;
                let mut total_c = 0usize;
                let mut spatial: Option<Shape> = None;
                for r in refs {
                    let j = resolve_layer_ref(i, r).ok_or(CfgError::DanglingReference {
                        layer: i,
                        line: layer.source_line,
                        reference: r,
                    })?;
                    let s = shapes[j];
                    if let Some(first) = spatial {
                        if s.h != first.h || s.w != first.w {
                            return Err(CfgError::ShapeMismatch {
                                layer: i,
                                expected: first,
                                got: s,
                            });
                        }
                    } else {
                        spatial = Some(s);
                    }
                    total_c += s.c;
                }
                let s = spatial.expect("route has at least one reference");
                Shape::new(total_c, s.h, s.w)
            }
            LayerKind::Shortcut => {
                let from = layer
                    .get("from")
                    .unwrap_or("0")
                    .trim()
                    .parse::<i64>()
                    .map_err(|_| layer.invalid("from", layer.get("from").unwrap_or("")))?;
                let j = resolve_layer_ref(i, from).ok_or(CfgError::DanglingReference {
                    layer: i,
                    line: layer.source_line,
                    reference: from,
                })?;
                if shapes[j] != prev {
                    return Err(CfgError::ShapeMismatch {
                        layer: i,
                        expected: prev,
                        got: shapes[j],
                    });
                }
                prev
            }
            LayerKind::Upsample => {
                let stride = layer.usize_or("stride", 2)?;
                if stride == 0 {
                    return Err(layer.invalid("stride", "0"));
                }
                Shape::new(prev.c, prev.h * stride, prev.w * stride)
            }
            LayerKind::Yolo => prev,
            LayerKind::Net => unreachable!(),
        };
        if out.len() == 0 {
            return Err(CfgError::NonPositiveShape { layer: i });
        }
        shapes.push(out);
        prev = out;
    }
    Ok(shapes)
}

/// `(in + pad_total - size) / stride + 1`, or None when the window does not fit.
fn conv_extent(input: usize, size: usize, stride: usize, pad_total: usize) -> Option<usize> {
    let padded = input + pad_total;
    if padded < size {
        return None;
    }
    Some((padded - size) / stride + 1)
}

/// Stored-value count over all convolutional layers: weights + bias, plus
/// scale/mean/variance per filter when batch-normalized. Multiply by four
/// for bytes on disk.
pub fn count_parameters(cfg: &NetworkConfig) -> Result<u64, CfgError> {
    let shapes = compute_output_shapes(cfg)?;
    let input = cfg.input_shape()?;
    let mut total: u64 = 0;
    for (i, layer) in cfg.layers.iter().enumerate() {
        if layer.kind != LayerKind::Convolutional {
            continue;
        }
        let in_c = if i == 0 { input.c } else { shapes[i - 1].c } as u64;
        let filters = layer.require_usize("filters")? as u64;
        let size = layer.require_usize("size")? as u64;
        total += filters * in_c * size * size + filters;
        if layer.batch_normalize() {
            total += 3 * filters;
        }
    }
    Ok(total)
}

/// Retargets every `[yolo]` head to `num_classes` and resizes each head's
/// convolution to `(num_classes + 5) * masks` filters.
pub fn rewrite_for_classes(
    cfg: &NetworkConfig,
    num_classes: usize,
) -> Result<NetworkConfig, CfgError> {
    let mut out = cfg.clone();
    let heads = cfg.yolo_heads()?;
    for head in &heads {
        let i = head.layer_index;
        if i == 0 || out.layers[i - 1].kind != LayerKind::Convolutional {
            return Err(CfgError::YoloWithoutHeadConv { layer: i });
        }
        let filters = (num_classes + 5) * head.mask.len();
        out.layers[i].set("classes", num_classes.to_string());
        out.layers[i - 1].set("filters", filters.to_string());
    }
    Ok(out)
}

/// Marks layers `0..first_trainable_layer` as frozen by placing Darknet's
/// `stopbackward=1` directive on the last frozen layer. `0` freezes nothing;
/// `layer count` freezes everything. Any pre-existing directive is cleared.
pub fn apply_freeze(
    cfg: &NetworkConfig,
    first_trainable_layer: usize,
) -> Result<NetworkConfig, CfgError> {
    if first_trainable_layer > cfg.layers.len() {
        return Err(CfgError::IndexOutOfRange {
            index: first_trainable_layer,
            len: cfg.layers.len(),
        });
    }
    let mut out = cfg.clone();
    for layer in &mut out.layers {
        layer.remove("stopbackward");
    }
    if first_trainable_layer > 0 {
        out.layers[first_trainable_layer - 1].set("stopbackward", "1");
    }
    Ok(out)
}

/// Emits config text that reparses to an equal `NetworkConfig`. Key order
/// within each section is preserved; comments from the source are not.
pub fn serialize_config(cfg: &NetworkConfig) -> String {
    let mut out = String::new();
    let mut write_section = |s: &LayerSpec, first: bool| {
        if !first {
            out.push('\n');
        }
        out.push('[');
        out.push_str(s.kind.section_name());
        out.push_str("]\n");
        for (k, v) in &s.params {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
    };
    write_section(&cfg.net, true);
    for layer in &cfg.layers {
        write_section(layer, false);
    }
    out
}
