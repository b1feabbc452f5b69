//! Static model analytics: shapes, parameter counts, mult-adds and memory.
//!
//! Profiles are plain text, one layer per line:
//!
//! ```text
//! # comment
//! input 3x224x224
//! conv2d block1_conv1 out_channels=64 kernel=3 stride=1 padding=1
//! relu block1_relu1
//! maxpool2d block1_pool kernel=2 stride=2
//! flatten flatten
//! dense fc1 out_features=4096
//! ```
//!
//! Input channels and features are inferred by shape propagation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layer::{LayerKind, LayerSpec};
use crate::saliency::{eligible_layers, feature_layer};
use crate::splitting::latent_channels;

pub const VGG16_PROFILE: &str = include_str!("../profiles/vgg16.profile");
pub const DEFAULT_BATCH: usize = 16;
pub const BYTES_PER_ELEMENT: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub name: String,
    /// Per-sample input shape, batch excluded.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerStat {
    pub name: String,
    pub kind: &'static str,
    /// Batch first.
    pub output_shape: Vec<usize>,
    pub param_count: u64,
    pub mult_adds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelStats {
    pub total_params: u64,
    pub trainable_params: u64,
    pub total_mult_adds: u64,
    pub forward_backward_bytes: u64,
    pub input_bytes: u64,
    pub param_bytes: u64,
    pub estimated_total_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadSize {
    pub bytes: u64,
    /// `⌈ρ·z⌉ == z`: the bottleneck keeps every channel.
    pub degenerate: bool,
}

pub fn megabytes(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

/// Statistics of one layer applied to a batch of `input_shape` samples.
pub fn layer_stats(layer: &LayerSpec, input_shape: &[usize], batch: usize) -> Result<LayerStat> {
    let out = layer.output_shape(0, input_shape)?;
    let mut output_shape = vec![batch];
    output_shape.extend_from_slice(&out);
    Ok(LayerStat {
        name: layer.name.clone(),
        kind: layer.kind_name(),
        output_shape,
        param_count: layer.param_count() as u64,
        mult_adds: batch as u64 * layer.mult_adds(&out),
    })
}

/// Per-layer rows plus model totals for a batch.
///
/// The forward/backward size counts the outputs of parameterized layers
/// (conv and dense) twice, once for activations and once for gradients.
pub fn model_stats(layers: &[LayerSpec], input_shape: &[usize], batch: usize) -> Result<(Vec<LayerStat>, ModelStats)> {
    if batch == 0 {
        return Err(Error::invalid("batch must be at least 1"));
    }
    let mut rows = Vec::with_capacity(layers.len());
    let mut shape = input_shape.to_vec();
    let mut stored_elements: u64 = 0;
    for (i, layer) in layers.iter().enumerate() {
        let stat = layer_stats(layer, &shape, batch).map_err(|e| match e {
            Error::Shape { expected, got, .. } => Error::Shape {
                layer: i,
                expected,
                got,
            },
            other => other,
        })?;
        if layer.has_params() {
            stored_elements += stat.output_shape.iter().map(|&d| d as u64).product::<u64>();
        }
        shape = stat.output_shape[1..].to_vec();
        rows.push(stat);
    }
    let total_params: u64 = rows.iter().map(|r| r.param_count).sum();
    let total_mult_adds = rows.iter().map(|r| r.mult_adds).sum();
    let input_elements: u64 = input_shape.iter().map(|&d| d as u64).product();
    let forward_backward_bytes = 2 * BYTES_PER_ELEMENT * stored_elements;
    let input_bytes = BYTES_PER_ELEMENT * batch as u64 * input_elements;
    let param_bytes = BYTES_PER_ELEMENT * total_params;
    Ok((
        rows,
        ModelStats {
            total_params,
            trainable_params: total_params,
            total_mult_adds,
            forward_backward_bytes,
            input_bytes,
            param_bytes,
            estimated_total_bytes: input_bytes + forward_backward_bytes + param_bytes,
        },
    ))
}

impl Profile {
    pub fn vgg16() -> Self {
        Self::parse("vgg16", VGG16_PROFILE).expect("bundled profile is valid")
    }

    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut input_shape: Option<Vec<usize>> = None;
        let mut layers = Vec::new();
        let mut shape: Vec<usize> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: line_no, message };
            let mut words = line.split_whitespace();
            let kind = words.next().expect("non-empty line").to_ascii_lowercase();
            if kind == "input" {
                if input_shape.is_some() {
                    return Err(err("duplicate input line".into()));
                }
                let dims = words
                    .next()
                    .ok_or_else(|| err("input needs a shape like 3x224x224".into()))?;
                let parsed: Vec<usize> = dims
                    .split('x')
                    .map(|d| d.parse::<usize>().ok().filter(|v| *v > 0))
                    .collect::<Option<_>>()
                    .ok_or_else(|| err(format!("bad input shape {dims:?}")))?;
                if parsed.is_empty() || parsed.len() > 3 {
                    return Err(err(format!("bad input shape {dims:?}")));
                }
                shape = parsed.clone();
                input_shape = Some(parsed);
                continue;
            }
            if input_shape.is_none() {
                return Err(err("layers must follow an input line".into()));
            }

            let mut name = None;
            let mut params = BTreeMap::new();
            for w in words {
                match w.split_once('=') {
                    Some((k, v)) => {
                        let v: usize = v
                            .parse()
                            .map_err(|_| err(format!("{k} must be an integer, got {v:?}")))?;
                        params.insert(k.to_string(), v);
                    }
                    None if name.is_none() => name = Some(w.to_string()),
                    None => return Err(err(format!("unexpected token {w:?}"))),
                }
            }
            let name = name.unwrap_or_else(|| format!("{kind}_{}", layers.len() + 1));
            let mut take = |key: &str, default: Option<usize>| -> Result<usize> {
                params
                    .remove(key)
                    .or(default)
                    .ok_or_else(|| err(format!("{kind} needs {key}=")))
            };
            let layer_kind = match kind.as_str() {
                "conv2d" => LayerKind::Conv2d {
                    in_channels: shape[0],
                    out_channels: take("out_channels", None)?,
                    kernel: take("kernel", None)?,
                    stride: take("stride", Some(1))?,
                    padding: take("padding", Some(0))?,
                },
                "relu" => LayerKind::Relu,
                "maxpool2d" => {
                    let kernel = take("kernel", None)?;
                    LayerKind::MaxPool2d {
                        kernel,
                        stride: take("stride", Some(kernel))?,
                    }
                }
                "flatten" => LayerKind::Flatten,
                "dense" => LayerKind::Dense {
                    in_features: shape.iter().product(),
                    out_features: take("out_features", None)?,
                },
                other => return Err(err(format!("unknown layer kind {other:?}"))),
            };
            if let Some(extra) = params.keys().next() {
                return Err(err(format!("unknown key {extra:?} for {kind}")));
            }
            let layer = LayerSpec::new(name, layer_kind);
            shape = layer
                .output_shape(layers.len(), &shape)
                .map_err(|e| err(e.to_string()))?;
            layers.push(layer);
        }
        let input_shape = input_shape.ok_or(Error::Parse {
            line: 0,
            message: "missing input line".into(),
        })?;
        if layers.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "profile has no layers".into(),
            });
        }
        Ok(Self {
            name: name.to_string(),
            input_shape,
            layers,
        })
    }

    pub fn stats(&self, batch: usize) -> Result<(Vec<LayerStat>, ModelStats)> {
        model_stats(&self.layers, &self.input_shape, batch)
    }

    /// Per-sample mult-adds of layers in `range`.
    pub fn mult_adds(&self, range: std::ops::Range<usize>) -> Result<u64> {
        let (rows, _) = self.stats(1)?;
        Ok(rows[range].iter().map(|r| r.mult_adds).sum())
    }

    pub fn total_mult_adds(&self) -> Result<u64> {
        self.mult_adds(0..self.layers.len())
    }

    /// Per-sample output shape of every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        crate::layer::propagate_shapes(&self.layers, &self.input_shape)
    }

    pub fn eligible_layers(&self) -> Vec<usize> {
        eligible_layers(&self.layers)
    }

    /// Model index of split position `split_index` (0-based among Conv2D and
    /// MaxPool2D layers).
    pub fn split_layer(&self, split_index: usize) -> Result<usize> {
        self.eligible_layers()
            .get(split_index)
            .copied()
            .ok_or_else(|| Error::invalid(format!("profile has no split index {split_index}")))
    }

    pub fn input_bytes(&self) -> u64 {
        BYTES_PER_ELEMENT * self.input_shape.iter().map(|&d| d as u64).product::<u64>()
    }

    /// Computation split of a bottlenecked partition after `layer`.
    pub fn split_cost(&self, layer: usize, rate: f64) -> Result<SplitCost> {
        let shapes = self.shapes()?;
        let spec = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("layer {layer} does not exist")))?;
        if !spec.is_spatial() {
            return Err(Error::NotSpatial { layer });
        }
        let cut = feature_layer(&self.layers, layer) + 1;
        let &[z, n, m] = &shapes[cut - 1][..] else {
            return Err(Error::NotSpatial { layer });
        };
        let latent = latent_channels(z, rate);
        let bottleneck_half = (n * m * latent * z * 9) as u64;
        Ok(SplitCost {
            head_mult_adds: self.mult_adds(0..cut)? + bottleneck_half,
            tail_mult_adds: bottleneck_half + self.mult_adds(cut..self.layers.len())?,
            payload: PayloadSize {
                bytes: BYTES_PER_ELEMENT * (latent * n * m) as u64,
                degenerate: latent >= z,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCost {
    /// Head plus encoder, per sample.
    pub head_mult_adds: u64,
    /// Decoder plus tail, per sample.
    pub tail_mult_adds: u64,
    pub payload: PayloadSize,
}

/// Bytes sent for one frame when splitting after `layer` with rate `rate`.
pub fn payload_bytes(profile: &Profile, layer: usize, rate: f64) -> Result<PayloadSize> {
    Ok(profile.split_cost(layer, rate)?.payload)
}

fn group_thousands(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn shape_string(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    format!("[{}]", dims.join(", "))
}

/// Human-readable summary: one row per layer, then model totals.
pub fn render_summary(profile: &Profile, batch: usize) -> Result<String> {
    let (rows, stats) = profile.stats(batch)?;
    let mut out = String::new();
    let rule = "=".repeat(78);
    writeln!(out, "{rule}").ok();
    writeln!(
        out,
        "{:<36}{:<26}{:>16}",
        "Layer (type: name)", "Output Shape", "Param #"
    )
    .ok();
    writeln!(out, "{rule}").ok();
    for r in &rows {
        let params = if r.param_count == 0 {
            "--".to_string()
        } else {
            group_thousands(r.param_count)
        };
        let label = format!("{}: {}", r.kind, r.name);
        writeln!(out, "{:<36}{:<26}{:>16}", label, shape_string(&r.output_shape), params).ok();
    }
    writeln!(out, "{rule}").ok();
    writeln!(out, "Total params: {}", group_thousands(stats.total_params)).ok();
    writeln!(out, "Trainable params: {}", group_thousands(stats.trainable_params)).ok();
    writeln!(out, "Total mult-adds (G): {:.2}", stats.total_mult_adds as f64 / 1e9).ok();
    writeln!(out, "{rule}").ok();
    writeln!(out, "Input size (MB): {:.2}", megabytes(stats.input_bytes)).ok();
    writeln!(
        out,
        "Forward/backward pass size (MB): {:.2}",
        megabytes(stats.forward_backward_bytes)
    )
    .ok();
    writeln!(out, "Params size (MB): {:.2}", megabytes(stats.param_bytes)).ok();
    writeln!(
        out,
        "Estimated Total Size (MB): {:.2}",
        megabytes(stats.estimated_total_bytes)
    )
    .ok();
    writeln!(out, "{rule}").ok();
    Ok(out)
}

/// Long-format CSV (`scope,name,metric,value`) with every per-layer and model
/// statistic. Shapes are written as `x`-joined dimensions, batch first.
pub fn summary_csv(profile: &Profile, batch: usize) -> Result<String> {
    let (rows, stats) = profile.stats(batch)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scope", "name", "metric", "value"])?;
    for r in &rows {
        let shape: Vec<String> = r.output_shape.iter().map(usize::to_string).collect();
        w.write_record(["layer", &r.name, "layer_type", r.kind])?;
        w.write_record(["layer", &r.name, "output_shape", &shape.join("x")])?;
        w.write_record(["layer", &r.name, "param_count", &r.param_count.to_string()])?;
        w.write_record(["layer", &r.name, "mult_adds", &r.mult_adds.to_string()])?;
    }
    let totals = [
        ("total_params", stats.total_params),
        ("trainable_params", stats.trainable_params),
        ("total_mult_adds", stats.total_mult_adds),
        ("input_bytes", stats.input_bytes),
        ("forward_backward_bytes", stats.forward_backward_bytes),
        ("param_bytes", stats.param_bytes),
        ("estimated_total_bytes", stats.estimated_total_bytes),
    ];
    for (metric, value) in totals {
        w.write_record(["model", &profile.name, metric, &value.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
