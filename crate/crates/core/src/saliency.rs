//! Grad-CAM maps per layer and the Cumulative Saliency (CS) curve.
//!
//! A layer is saliency-eligible when it produces a spatial map (Conv2D or
//! MaxPool2D). When a ReLU directly follows an eligible layer, the rectified
//! output is the feature map that gets scored. Positions along the CS curve
//! ("split indices") count eligible layers from 0 in network order.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::layer::{LayerKind, LayerSpec};
use crate::model::{Gradients, ModelGraph, Target, Trace};
use crate::tensor::Tensor;

/// Per-channel importance of a feature map for one class score.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights {
    pub layer_index: usize,
    pub input_index: usize,
    pub class_index: usize,
    pub weights: Vec<f64>,
}

/// Rectified class activation map over a layer's spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub layer_index: usize,
    pub input_index: usize,
    pub class_index: usize,
    pub height: usize,
    pub width: usize,
    pub map: Vec<f64>,
}

impl ActivationMap {
    pub fn mean(&self) -> f64 {
        self.map.iter().sum::<f64>() / self.map.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsCurve {
    /// CS value at each eligible layer, in network order.
    pub values: Vec<f64>,
    /// Model layer index of each curve point.
    pub eligible_layers: Vec<usize>,
    /// Curve positions of the local maxima, highest CS first.
    pub candidates: Vec<usize>,
}

impl CsCurve {
    pub fn from_values(values: Vec<f64>, eligible_layers: Vec<usize>) -> Result<Self> {
        if values.len() != eligible_layers.len() {
            return Err(Error::invalid("values and eligible layers differ in length"));
        }
        let candidates = candidate_split_points(&values)?;
        Ok(Self {
            values,
            eligible_layers,
            candidates,
        })
    }

    pub fn is_candidate(&self, position: usize) -> bool {
        self.candidates.contains(&position)
    }

    /// Model layer indices of the candidates, in ranking order.
    pub fn candidate_layers(&self) -> Vec<usize> {
        self.candidates.iter().map(|&p| self.eligible_layers[p]).collect()
    }
}

/// CSV with columns `layer_index,layer_name,cs_value,is_candidate`, one row per
/// curve point in network order. `layer_index` is the curve position.
pub fn cs_csv(curve: &CsCurve, layers: &[LayerSpec]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer_index", "layer_name", "cs_value", "is_candidate"])?;
    for (pos, (&layer, value)) in curve.eligible_layers.iter().zip(&curve.values).enumerate() {
        let name = layers
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("curve refers to missing layer {layer}")))?;
        w.write_record([
            pos.to_string(),
            name.name.clone(),
            value.to_string(),
            curve.is_candidate(pos).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Model indices of Conv2D and MaxPool2D layers.
pub fn eligible_layers(layers: &[LayerSpec]) -> Vec<usize> {
    layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_spatial())
        .map(|(i, _)| i)
        .collect()
}

/// Index of the tensor scored for eligible layer `layer`: its own output, or
/// the output of an immediately following ReLU.
pub fn feature_layer(layers: &[LayerSpec], layer: usize) -> usize {
    match layers.get(layer + 1) {
        Some(next) if matches!(next.kind, LayerKind::Relu) => layer + 1,
        _ => layer,
    }
}

fn check_spatial(model: &ModelGraph, layer: usize) -> Result<()> {
    match model.layers().get(layer) {
        Some(l) if l.is_spatial() => Ok(()),
        Some(_) => Err(Error::NotSpatial { layer }),
        None => Err(Error::invalid(format!("layer {layer} does not exist"))),
    }
}

/// Forward pass plus gradients of `y^c` with respect to every activation.
fn probe(model: &ModelGraph, input: &Tensor, class: usize) -> Result<(Trace, Gradients)> {
    let trace = model.forward(input)?;
    let (_, grads) = model.backward(&trace, Target::Logit(class))?;
    Ok((trace, grads))
}

/// Spatial mean of the gradient in each channel.
fn weights_from(grads: &Gradients, feature: usize) -> Vec<f64> {
    let g = &grads.activations[feature];
    let (c, h, w) = g.chw().expect("eligible layers are spatial");
    let hw = h * w;
    (0..c)
        .map(|k| g.data()[k * hw..(k + 1) * hw].iter().sum::<f64>() / hw as f64)
        .collect()
}

fn map_from(trace: &Trace, feature: usize, weights: &[f64]) -> (usize, usize, Vec<f64>) {
    let f = &trace.activations[feature];
    let (c, h, w) = f.chw().expect("eligible layers are spatial");
    let hw = h * w;
    let mut map = vec![0.0; hw];
    for (k, a) in weights.iter().enumerate().take(c) {
        let fk = &f.data()[k * hw..(k + 1) * hw];
        for (m, v) in map.iter_mut().zip(fk) {
            *m += a * v;
        }
    }
    for m in &mut map {
        *m = m.max(0.0);
    }
    (h, w, map)
}

/// Importance weights of layer `layer`'s channels for class score `class`.
pub fn channel_weights(
    model: &ModelGraph,
    input: &Tensor,
    input_index: usize,
    class: usize,
    layer: usize,
) -> Result<ChannelWeights> {
    check_spatial(model, layer)?;
    let (_, grads) = probe(model, input, class)?;
    let feature = feature_layer(model.layers(), layer);
    Ok(ChannelWeights {
        layer_index: layer,
        input_index,
        class_index: class,
        weights: weights_from(&grads, feature),
    })
}

/// Rectified weighted channel sum of layer `layer`'s feature map.
pub fn class_activation_map(
    model: &ModelGraph,
    input: &Tensor,
    input_index: usize,
    class: usize,
    layer: usize,
) -> Result<ActivationMap> {
    check_spatial(model, layer)?;
    let (trace, grads) = probe(model, input, class)?;
    let feature = feature_layer(model.layers(), layer);
    let weights = weights_from(&grads, feature);
    let (height, width, map) = map_from(&trace, feature, &weights);
    Ok(ActivationMap {
        layer_index: layer,
        input_index,
        class_index: class,
        height,
        width,
        map,
    })
}

/// Activation maps of every eligible layer for one input, from a single
/// forward/backward pass.
pub fn activation_maps(
    model: &ModelGraph,
    input: &Tensor,
    input_index: usize,
    class: usize,
) -> Result<Vec<ActivationMap>> {
    let (trace, grads) = probe(model, input, class)?;
    Ok(eligible_layers(model.layers())
        .into_iter()
        .map(|layer| {
            let feature = feature_layer(model.layers(), layer);
            let weights = weights_from(&grads, feature);
            let (height, width, map) = map_from(&trace, feature, &weights);
            ActivationMap {
                layer_index: layer,
                input_index,
                class_index: class,
                height,
                width,
                map,
            }
        })
        .collect())
}

/// CS curve over a labeled set: each input contributes the spatial mean of
/// its true-class map at every eligible layer, and the per-layer values are
/// averaged over all inputs.
pub fn cumulative_saliency(model: &ModelGraph, data: &Dataset) -> Result<CsCurve> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eligible = eligible_layers(model.layers());
    if eligible.len() < 3 {
        return Err(Error::TooShallow {
            eligible: eligible.len(),
        });
    }
    let mut per_layer = vec![Vec::with_capacity(data.len()); eligible.len()];
    for (j, (x, label)) in data.items.iter().enumerate() {
        for (vals, map) in per_layer.iter_mut().zip(activation_maps(model, x, j, *label)?) {
            vals.push(map.mean());
        }
    }
    let n = data.len() as f64;
    let values = per_layer
        .into_iter()
        .map(|mut vals| {
            // Sorted summation makes the mean independent of dataset order.
            vals.sort_by(f64::total_cmp);
            vals.iter().sum::<f64>() / n
        })
        .collect();
    CsCurve::from_values(values, eligible)
}

/// Interior local maxima of `values`: a point qualifies when it is at least its
/// left neighbour and strictly above its right neighbour, so the rightmost
/// point of a plateau wins. Endpoints never qualify. Sorted by value, highest
/// first; equal values keep network order.
pub fn candidate_split_points(values: &[f64]) -> Result<Vec<usize>> {
    if values.len() < 3 {
        return Err(Error::TooShallow { eligible: values.len() });
    }
    let mut picks: Vec<usize> = (1..values.len() - 1)
        .filter(|&i| values[i] >= values[i - 1] && values[i] > values[i + 1])
        .collect();
    picks.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    Ok(picks)
}
