use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn conv(name: &str, in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride: 1,
                padding,
            },
        )
    }

    pub fn relu(name: &str) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn max_pool(name: &str, kernel: usize) -> Self {
        Self::new(name, LayerKind::MaxPool2d { kernel, stride: kernel })
    }

    pub fn flatten(name: &str) -> Self {
        Self::new(name, LayerKind::Flatten)
    }

    pub fn dense(name: &str, in_features: usize, out_features: usize) -> Self {
        Self::new(
            name,
            LayerKind::Dense {
                in_features,
                out_features,
            },
        )
    }

    /// Number of trainable values (weights then biases).
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => kernel * kernel * in_channels * out_channels + out_channels,
            LayerKind::Dense {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d { .. } | LayerKind::Dense { .. })
    }

    /// Conv2D and MaxPool2D produce channel × height × width maps that saliency
    /// and splitting can use.
    pub fn is_spatial(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d { .. } | LayerKind::MaxPool2d { .. })
    }

    /// Static shape propagation. `index` is only used for error reporting.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::Shape {
            layer: index,
            expected,
            got: input.to_vec(),
        };
        match self.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let &[c, h, w] = input else {
                    return Err(mismatch(vec![in_channels, 0, 0]));
                };
                if c != in_channels || stride == 0 || kernel == 0 {
                    return Err(mismatch(vec![in_channels, h, w]));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(mismatch(vec![in_channels, kernel, kernel]));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerKind::MaxPool2d { kernel, stride } => {
                let &[c, h, w] = input else {
                    return Err(mismatch(vec![0, kernel, kernel]));
                };
                if h < kernel || w < kernel || stride == 0 || kernel == 0 {
                    return Err(mismatch(vec![c, kernel, kernel]));
                }
                Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(mismatch(vec![in_features]));
                }
                Ok(vec![out_features])
            }
        }
    }

    /// Multiply-accumulate count for one sample; biases are not counted.
    pub fn mult_adds(&self, output_shape: &[usize]) -> u64 {
        match self.kind {
            LayerKind::Conv2d {
                in_channels, kernel, ..
            } => {
                let out: u64 = output_shape.iter().map(|&d| d as u64).product();
                out * (in_channels * kernel * kernel) as u64
            }
            LayerKind::Dense {
                in_features,
                out_features,
            } => (in_features * out_features) as u64,
            _ => 0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv2d { .. } => "Conv2d",
            LayerKind::Relu => "ReLU",
            LayerKind::MaxPool2d { .. } => "MaxPool2d",
            LayerKind::Flatten => "Flatten",
            LayerKind::Dense { .. } => "Linear",
        }
    }
}

/// Propagates `input` through `layers`, returning every output shape.
pub fn propagate_shapes(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut current = input.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        current = layer.output_shape(i, &current)?;
        shapes.push(current.clone());
    }
    Ok(shapes)
}
