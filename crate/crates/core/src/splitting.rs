//! Head / bottleneck / tail partitioning of a trained network.
//!
//! The head ends after the target layer (and its ReLU, if one follows). The
//! bottleneck is an undercomplete autoencoder: a 3×3 conv squeezing `z`
//! channels to `⌈ρ·z⌉` on the edge and a 3×3 conv restoring them on the
//! server, each followed by a ReLU. Only the latent crosses the network, as
//! little-endian `f32`.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::model::ModelGraph;
use crate::saliency::{eligible_layers, feature_layer};
use crate::tensor::{zero_fill_undelivered, Tensor};
use crate::train::{fit, Objective, TrainConfig};

pub const DEFAULT_COMPRESSION_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BottleneckSpec {
    /// Model index of the split layer.
    pub target_layer: usize,
    /// Position of the split layer among the saliency-eligible layers.
    pub split_index: usize,
    pub compression_rate: f64,
    pub channels: usize,
    pub latent_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl BottleneckSpec {
    pub fn latent_elements(&self) -> usize {
        self.latent_channels * self.height * self.width
    }

    pub fn split_elements(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn payload_bytes(&self) -> usize {
        self.latent_elements() * 4
    }

    pub fn latent_shape(&self) -> Vec<usize> {
        vec![self.latent_channels, self.height, self.width]
    }
}

/// `⌈ρ·z⌉`, the retained channel count.
pub fn latent_channels(channels: usize, rate: f64) -> usize {
    ((rate * channels as f64).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub bottleneck: BottleneckSpec,
    /// Runs on the edge, ends with the split layer's feature map.
    pub head: ModelGraph,
    /// Edge side of the bottleneck.
    pub encoder: ModelGraph,
    /// Server side of the bottleneck.
    pub decoder: ModelGraph,
    pub tail: ModelGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub accuracy: f64,
    /// Mean squared error between split-layer activations and their
    /// reconstruction, averaged over test items and elements.
    pub reconstruction_distance: f64,
    pub loss_history: Vec<f64>,
}

/// Cuts `model` after eligible layer `target_layer` and attaches a fresh
/// bottleneck keeping `⌈rate·z⌉` of the `z` channels.
pub fn make_split(model: &ModelGraph, target_layer: usize, rate: f64, seed: u64) -> Result<SplitPlan> {
    let layers = model.layers();
    let eligible = eligible_layers(layers);
    let Some(split_index) = eligible.iter().position(|&l| l == target_layer) else {
        return Err(if target_layer < layers.len() {
            Error::NotSpatial { layer: target_layer }
        } else {
            Error::invalid(format!("layer {target_layer} does not exist"))
        });
    };
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!(
            "compression rate must lie in (0, 1), got {rate}"
        )));
    }
    let cut = feature_layer(layers, target_layer) + 1;
    if cut >= layers.len() {
        return Err(Error::invalid("cannot split after the last layer"));
    }
    let [channels, height, width] = model.shapes()[cut - 1][..] else {
        return Err(Error::NotSpatial { layer: target_layer });
    };
    let latent = latent_channels(channels, rate);
    if latent >= channels {
        return Err(Error::invalid(format!(
            "rate {rate} keeps all {channels} channels; the bottleneck would not compress"
        )));
    }

    let (head, tail) = model.split_at(cut)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = ModelGraph::init(
        vec![channels, height, width],
        vec![
            LayerSpec::conv("bottleneck_encoder", channels, latent, 3, 1),
            LayerSpec::relu("bottleneck_encoder_relu"),
        ],
        &mut rng,
    )?;
    let decoder = ModelGraph::init(
        vec![latent, height, width],
        vec![
            LayerSpec::conv("bottleneck_decoder", latent, channels, 3, 1),
            LayerSpec::relu("bottleneck_decoder_relu"),
        ],
        &mut rng,
    )?;
    Ok(SplitPlan {
        bottleneck: BottleneckSpec {
            target_layer,
            split_index,
            compression_rate: rate,
            channels,
            latent_channels: latent,
            height,
            width,
        },
        head,
        encoder,
        decoder,
        tail,
    })
}

impl SplitPlan {
    /// The original network, bottleneck removed.
    pub fn unsplit(&self) -> Result<ModelGraph> {
        self.head.concat(&self.tail)
    }

    /// head ∥ encoder ∥ decoder ∥ tail as one network.
    pub fn spliced(&self) -> Result<ModelGraph> {
        self.head
            .concat(&self.encoder)?
            .concat(&self.decoder)?
            .concat(&self.tail)
    }

    fn replace_from_spliced(&mut self, spliced: &ModelGraph) -> Result<()> {
        let h = self.head.layers().len();
        let e = self.encoder.layers().len();
        let d = self.decoder.layers().len();
        let (head, rest) = spliced.split_at(h)?;
        let (encoder, rest) = rest.split_at(e)?;
        let (decoder, tail) = rest.split_at(d)?;
        self.head = head;
        self.encoder = encoder;
        self.decoder = decoder;
        self.tail = tail;
        Ok(())
    }

    pub fn payload_bytes(&self) -> usize {
        self.bottleneck.payload_bytes()
    }

    /// Encoder output for one input.
    pub fn latent(&self, input: &Tensor) -> Result<Tensor> {
        let features = self.head.logits(input)?;
        self.encoder.logits(&features)
    }

    /// Classifies from a received latent.
    pub fn classify_latent(&self, latent: &Tensor) -> Result<usize> {
        let restored = self.decoder.logits(latent)?;
        self.tail.predict(&restored)
    }

    /// Accuracy of the spliced network evaluated in `f64`.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        crate::train::accuracy(&self.spliced()?, data)
    }

    pub fn reconstruction_distance(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for (x, _) in &data.items {
            let a = self.head.logits(x)?;
            let r = self.decoder.logits(&self.encoder.logits(&a)?)?;
            let se: f64 = a.data().iter().zip(r.data()).map(|(u, v)| (u - v) * (u - v)).sum();
            total += se / a.len() as f64;
        }
        Ok(total / data.len() as f64)
    }
}

/// Fits the autoencoder to reproduce the split-layer activations of the
/// training set, minimizing the mean over samples of ‖a − Ψ(a)‖². Head and tail
/// are not touched. Returns the per-epoch loss.
pub fn train_bottleneck(plan: &mut SplitPlan, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let activations: Vec<Tensor> = data.inputs().map(|x| plan.head.logits(x)).collect::<Result<_>>()?;
    let mut autoencoder = plan.encoder.concat(&plan.decoder)?;
    let history = fit(
        &mut autoencoder,
        &activations,
        &[],
        cfg,
        &BTreeSet::new(),
        Objective::Reconstruction,
    )?;
    let (encoder, decoder) = autoencoder.split_at(plan.encoder.layers().len())?;
    plan.encoder = encoder;
    plan.decoder = decoder;
    Ok(history)
}

/// End-to-end fine-tuning of every parameter of the spliced network on the
/// squared error between its softmax output and the one-hot label. Zero epochs
/// leaves the plan untouched.
pub fn finetune(plan: &mut SplitPlan, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<SplitAccuracy> {
    let mut loss_history = Vec::new();
    if cfg.epochs > 0 {
        let mut spliced = plan.spliced()?;
        let (inputs, labels): (Vec<Tensor>, Vec<usize>) = train.items.iter().cloned().unzip();
        loss_history = fit(
            &mut spliced,
            &inputs,
            &labels,
            cfg,
            &BTreeSet::new(),
            Objective::SoftmaxSquaredError,
        )?;
        plan.replace_from_spliced(&spliced)?;
    }
    Ok(SplitAccuracy {
        accuracy: plan.accuracy(test)?,
        reconstruction_distance: plan.reconstruction_distance(test)?,
        loss_history,
    })
}

/// Split inference over a possibly lossy link: the latent is serialized as
/// `f32`, elements touching an undelivered byte become zero, and the server
/// side finishes the classification.
pub fn split_infer(plan: &SplitPlan, input: &Tensor, delivered: &[bool]) -> Result<usize> {
    let latent = plan.latent(input)?;
    let received = zero_fill_undelivered(&latent, delivered)?;
    plan.classify_latent(&received)
}
