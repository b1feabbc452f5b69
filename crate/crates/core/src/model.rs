//! Sequential networks with reverse-mode differentiation.
//!
//! All trainable values live in one flat `Vec<f64>`; each parameterized layer
//! owns a contiguous range laid out as weights followed by biases. Conv weights
//! are `[out][in][ky][kx]`, dense weights are `[out][in]`.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layer::{propagate_shapes, LayerKind, LayerSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Retained activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Tensor,
    /// `activations[i]` is the output of layer `i`.
    pub activations: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap_or(&self.input)
    }
}

/// Which scalar to differentiate.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Raw class score `y^c`.
    Logit(usize),
    /// Softmax cross-entropy against a class label.
    CrossEntropy(usize),
    /// Squared error between the softmax output and a one-hot label.
    SoftmaxSquaredError(usize),
    /// Squared error between the output and a reference tensor.
    Reconstruction(&'a Tensor),
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    /// `activations[i]` is the gradient with respect to the output of layer `i`.
    pub activations: Vec<Tensor>,
    pub input: Tensor,
}

impl ModelGraph {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model has no layers"));
        }
        let shapes = propagate_shapes(&layers, &input_shape)?;
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        offsets.push(total);
        if params.len() != total {
            return Err(Error::invalid(format!(
                "model needs {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            offsets,
            params,
        })
    }

    /// Uniform fan-in scaled initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
    /// for weights and zero biases.
    pub fn init<R: Rng>(input_shape: Vec<usize>, layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let total = layers.iter().map(LayerSpec::param_count).sum();
        let mut model = Self::new(input_shape, layers, vec![0.0; total])?;
        for i in 0..model.layers.len() {
            let (fan_in, weights) = match model.layers[i].kind {
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (
                    in_channels * kernel * kernel,
                    out_channels * in_channels * kernel * kernel,
                ),
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => (in_features, in_features * out_features),
                _ => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let start = model.offsets[i];
            for w in &mut model.params[start..start + weights] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Static output shape of every layer.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty model")
    }

    /// Input shape of layer `i`.
    pub fn layer_input_shape(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_range(&self, layer: usize) -> Range<usize> {
        self.offsets[layer]..self.offsets[layer + 1]
    }

    pub fn layer_params(&self, layer: usize) -> &[f64] {
        &self.params[self.param_range(layer)]
    }

    /// Layers `..at` and `at..` as two models. The second takes the output of
    /// layer `at - 1` as input.
    pub fn split_at(&self, at: usize) -> Result<(ModelGraph, ModelGraph)> {
        if at == 0 || at >= self.layers.len() {
            return Err(Error::invalid(format!(
                "cannot split {} layers at {at}",
                self.layers.len()
            )));
        }
        let cut = self.offsets[at];
        let head = ModelGraph::new(
            self.input_shape.clone(),
            self.layers[..at].to_vec(),
            self.params[..cut].to_vec(),
        )?;
        let tail = ModelGraph::new(
            self.shapes[at - 1].clone(),
            self.layers[at..].to_vec(),
            self.params[cut..].to_vec(),
        )?;
        Ok((head, tail))
    }

    /// Appends `next` after `self`; `next` must accept `self`'s output shape.
    pub fn concat(&self, next: &ModelGraph) -> Result<ModelGraph> {
        if next.input_shape != self.output_shape() {
            return Err(Error::Shape {
                layer: self.layers.len(),
                expected: next.input_shape.clone(),
                got: self.output_shape().to_vec(),
            });
        }
        let mut layers = self.layers.clone();
        layers.extend(next.layers.iter().cloned());
        let mut params = self.params.clone();
        params.extend_from_slice(&next.params);
        ModelGraph::new(self.input_shape.clone(), layers, params)
    }

    /// Runs the network, keeping every intermediate output.
    pub fn forward(&self, input: &Tensor) -> Result<Trace> {
        self.forward_from(0, input)
    }

    /// Runs layers `start..` on `input`, which must have layer `start`'s input
    /// shape. The returned trace only holds outputs of the executed layers.
    pub fn forward_from(&self, start: usize, input: &Tensor) -> Result<Trace> {
        let expected = self.layer_input_shape(start);
        if input.shape() != expected {
            return Err(Error::Shape {
                layer: start,
                expected: expected.to_vec(),
                got: input.shape().to_vec(),
            });
        }
        let mut activations: Vec<Tensor> = Vec::with_capacity(self.layers.len() - start);
        for i in start..self.layers.len() {
            let x = activations.last().unwrap_or(input);
            let y = self.layer_forward(i, x);
            debug_assert_eq!(y.shape(), self.shapes[i].as_slice());
            activations.push(y);
        }
        Ok(Trace {
            input: input.clone(),
            activations,
        })
    }

    /// Class scores only.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        let mut trace = self.forward(input)?;
        Ok(trace.activations.pop().expect("non-empty model"))
    }

    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(self.logits(input)?.argmax())
    }

    fn layer_forward(&self, i: usize, x: &Tensor) -> Tensor {
        let p = self.layer_params(i);
        let out_shape = &self.shapes[i];
        match self.layers[i].kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeom::new(x.shape(), out_shape, kernel, stride, padding);
                let (weights, bias) = p.split_at(out_channels * in_channels * kernel * kernel);
                let mut y = Tensor::zeros(out_shape);
                conv_forward(&geom, in_channels, out_channels, weights, bias, x.data(), y.data_mut());
                y
            }
            LayerKind::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                Tensor::new(out_shape.clone(), data).expect("shape preserved")
            }
            LayerKind::MaxPool2d { kernel, stride } => {
                let (y, _) = max_pool(x, out_shape, kernel, stride);
                y
            }
            LayerKind::Flatten => x.clone().reshape(out_shape.clone()).expect("flatten"),
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let (weights, bias) = p.split_at(in_features * out_features);
                let xs = x.data();
                let data = (0..out_features)
                    .map(|o| {
                        let row = &weights[o * in_features..(o + 1) * in_features];
                        bias[o] + row.iter().zip(xs).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect();
                Tensor::new(out_shape.clone(), data).expect("dense shape")
            }
        }
    }

    /// Differentiates the scalar selected by `target`. Returns the scalar value
    /// and gradients with respect to every parameter and every activation.
    pub fn backward(&self, trace: &Trace, target: Target<'_>) -> Result<(f64, Gradients)> {
        let (value, seed) = scalar_and_seed(trace.output(), target)?;
        let mut params = vec![0.0; self.params.len()];
        let (activations, input) = self.backward_into(trace, seed, &mut params);
        Ok((
            value,
            Gradients {
                params,
                activations,
                input,
            },
        ))
    }

    /// Backpropagates `output_grad` through a full trace, accumulating parameter
    /// gradients into `param_grads`. Returns the activation gradients and the
    /// input gradient.
    pub(crate) fn backward_into(
        &self,
        trace: &Trace,
        output_grad: Tensor,
        param_grads: &mut [f64],
    ) -> (Vec<Tensor>, Tensor) {
        let n = self.layers.len();
        debug_assert_eq!(trace.activations.len(), n);
        let mut grads: Vec<Tensor> = Vec::with_capacity(n);
        let mut g = output_grad;
        for i in (0..n).rev() {
            let x = if i == 0 {
                &trace.input
            } else {
                &trace.activations[i - 1]
            };
            let range = self.param_range(i);
            let gx = self.layer_backward(i, x, &g, &mut param_grads[range]);
            grads.push(g);
            g = gx;
        }
        grads.reverse();
        (grads, g)
    }

    fn layer_backward(&self, i: usize, x: &Tensor, gy: &Tensor, pgrad: &mut [f64]) -> Tensor {
        let p = self.layer_params(i);
        match self.layers[i].kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeom::new(x.shape(), gy.shape(), kernel, stride, padding);
                let wlen = out_channels * in_channels * kernel * kernel;
                let mut gx = Tensor::zeros(x.shape());
                let (gw, gb) = pgrad.split_at_mut(wlen);
                conv_backward(
                    &geom,
                    in_channels,
                    out_channels,
                    &p[..wlen],
                    x.data(),
                    gy.data(),
                    gx.data_mut(),
                    gw,
                    gb,
                );
                gx
            }
            LayerKind::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().to_vec(), data).expect("relu grad")
            }
            LayerKind::MaxPool2d { kernel, stride } => {
                let (_, argmax) = max_pool(x, gy.shape(), kernel, stride);
                let mut gx = Tensor::zeros(x.shape());
                let out = gx.data_mut();
                for (k, g) in argmax.iter().zip(gy.data()) {
                    out[*k] += g;
                }
                gx
            }
            LayerKind::Flatten => gy.clone().reshape(x.shape().to_vec()).expect("unflatten"),
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let wlen = in_features * out_features;
                let (gw, gb) = pgrad.split_at_mut(wlen);
                let xs = x.data();
                let mut gx = vec![0.0; in_features];
                for o in 0..out_features {
                    let g = gy.data()[o];
                    gb[o] += g;
                    if g == 0.0 {
                        continue;
                    }
                    let row = &p[o * in_features..(o + 1) * in_features];
                    let grow = &mut gw[o * in_features..(o + 1) * in_features];
                    for k in 0..in_features {
                        grow[k] += g * xs[k];
                        gx[k] += g * row[k];
                    }
                }
                Tensor::new(x.shape().to_vec(), gx).expect("dense grad")
            }
        }
    }
}

/// Value of the selected scalar and its gradient with respect to the output.
pub(crate) fn scalar_and_seed(output: &Tensor, target: Target<'_>) -> Result<(f64, Tensor)> {
    let y = output.data();
    let check_class = |c: usize| {
        if c >= y.len() {
            Err(Error::invalid(format!(
                "class {c} out of range for {} outputs",
                y.len()
            )))
        } else {
            Ok(())
        }
    };
    let mut seed = Tensor::zeros(output.shape());
    let value = match target {
        Target::Logit(c) => {
            check_class(c)?;
            seed.data_mut()[c] = 1.0;
            y[c]
        }
        Target::CrossEntropy(c) => {
            check_class(c)?;
            let p = softmax(y);
            for (s, pk) in seed.data_mut().iter_mut().zip(&p) {
                *s = *pk;
            }
            seed.data_mut()[c] -= 1.0;
            let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - y[c]
        }
        Target::SoftmaxSquaredError(c) => {
            check_class(c)?;
            let p = softmax(y);
            let diff: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(k, pk)| pk - if k == c { 1.0 } else { 0.0 })
                .collect();
            // d/dy_k of sum_i d_i^2 = 2 * p_k * (d_k - sum_i d_i p_i)
            let dot: f64 = diff.iter().zip(&p).map(|(d, pi)| d * pi).sum();
            for (k, s) in seed.data_mut().iter_mut().enumerate() {
                *s = 2.0 * p[k] * (diff[k] - dot);
            }
            diff.iter().map(|d| d * d).sum()
        }
        Target::Reconstruction(reference) => {
            if reference.shape() != output.shape() {
                return Err(Error::invalid("reconstruction reference has wrong shape"));
            }
            let mut loss = 0.0;
            for ((s, out), r) in seed.data_mut().iter_mut().zip(y).zip(reference.data()) {
                let d = out - r;
                loss += d * d;
                *s = 2.0 * d;
            }
            loss
        }
    };
    Ok((value, seed))
}

pub fn softmax(y: &[f64]) -> Vec<f64> {
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct ConvGeom {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new(input: &[usize], output: &[usize], kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_h: input[1],
            in_w: input[2],
            out_h: output[1],
            out_w: output[2],
            kernel,
            stride,
            padding,
        }
    }

    /// Input coordinate for output coordinate `o` and kernel tap `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// Output columns `j` whose tap `kx` lands inside the input row.
    fn valid_cols(&self, kx: usize) -> Range<usize> {
        let lo = (0..self.out_w)
            .find(|&j| self.source(j, kx, self.in_w).is_some())
            .unwrap_or(self.out_w);
        let hi = (lo..self.out_w)
            .rev()
            .find(|&j| self.source(j, kx, self.in_w).is_some())
            .map_or(lo, |j| j + 1);
        lo..hi
    }
}

fn conv_forward(g: &ConvGeom, in_c: usize, out_c: usize, weights: &[f64], bias: &[f64], x: &[f64], y: &mut [f64]) {
    let k = g.kernel;
    let out_hw = g.out_h * g.out_w;
    let in_hw = g.in_h * g.in_w;
    let cols: Vec<Range<usize>> = (0..k).map(|kx| g.valid_cols(kx)).collect();
    for o in 0..out_c {
        let yo = &mut y[o * out_hw..(o + 1) * out_hw];
        yo.fill(bias[o]);
        for c in 0..in_c {
            let xc = &x[c * in_hw..(c + 1) * in_hw];
            for ky in 0..k {
                for kx in 0..k {
                    let w = weights[((o * in_c + c) * k + ky) * k + kx];
                    for i in 0..g.out_h {
                        let Some(ii) = g.source(i, ky, g.in_h) else {
                            continue;
                        };
                        let row = &xc[ii * g.in_w..(ii + 1) * g.in_w];
                        let yrow = &mut yo[i * g.out_w..(i + 1) * g.out_w];
                        for j in cols[kx].clone() {
                            let jj = j * g.stride + kx - g.padding;
                            yrow[j] += w * row[jj];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    g: &ConvGeom,
    in_c: usize,
    out_c: usize,
    weights: &[f64],
    x: &[f64],
    gy: &[f64],
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let k = g.kernel;
    let out_hw = g.out_h * g.out_w;
    let in_hw = g.in_h * g.in_w;
    let cols: Vec<Range<usize>> = (0..k).map(|kx| g.valid_cols(kx)).collect();
    for o in 0..out_c {
        let gyo = &gy[o * out_hw..(o + 1) * out_hw];
        gb[o] += gyo.iter().sum::<f64>();
        for c in 0..in_c {
            let xc = &x[c * in_hw..(c + 1) * in_hw];
            let gxc = &mut gx[c * in_hw..(c + 1) * in_hw];
            for ky in 0..k {
                for (kx, cols) in cols.iter().enumerate() {
                    let widx = ((o * in_c + c) * k + ky) * k + kx;
                    let w = weights[widx];
                    let mut acc = 0.0;
                    for i in 0..g.out_h {
                        let Some(ii) = g.source(i, ky, g.in_h) else {
                            continue;
                        };
                        let grow = &gyo[i * g.out_w..(i + 1) * g.out_w];
                        for j in cols.clone() {
                            let jj = j * g.stride + kx - g.padding;
                            acc += grow[j] * xc[ii * g.in_w + jj];
                            gxc[ii * g.in_w + jj] += w * grow[j];
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}

/// Max pooling; also returns, per output element, the flat input index of the
/// maximum (first one wins on ties).
fn max_pool(x: &Tensor, out_shape: &[usize], kernel: usize, stride: usize) -> (Tensor, Vec<usize>) {
    let (c, h, w) = x.chw().expect("pool input is spatial");
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let xs = x.data();
    let mut y = Tensor::zeros(out_shape);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let ys = y.data_mut();
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = ch * h * w + (i * stride) * w + j * stride;
                for di in 0..kernel {
                    for dj in 0..kernel {
                        let idx = ch * h * w + (i * stride + di) * w + j * stride + dj;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                }
                ys[(ch * oh + i) * ow + j] = xs[best];
                argmax.push(best);
            }
        }
    }
    (y, argmax)
}

/// The reference convolutional network used throughout the toy pipeline:
/// three conv blocks on a 1×16×16 input and a two-layer classifier.
pub fn toy_vgg_layers(num_classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("conv1", 1, 8, 3, 1),
        LayerSpec::relu("relu1"),
        LayerSpec::max_pool("pool1", 2),
        LayerSpec::conv("conv2", 8, 16, 3, 1),
        LayerSpec::relu("relu2"),
        LayerSpec::max_pool("pool2", 2),
        LayerSpec::conv("conv3", 16, 16, 3, 1),
        LayerSpec::relu("relu3"),
        LayerSpec::flatten("flatten"),
        LayerSpec::dense("fc1", 256, 64),
        LayerSpec::relu("relu4"),
        LayerSpec::dense("fc2", 64, num_classes),
    ]
}

pub const TOY_INPUT_SHAPE: [usize; 3] = [1, 16, 16];

pub fn toy_vgg<R: Rng>(num_classes: usize, rng: &mut R) -> Result<ModelGraph> {
    ModelGraph::init(TOY_INPUT_SHAPE.to_vec(), toy_vgg_layers(num_classes), rng)
}
