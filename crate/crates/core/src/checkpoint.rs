//! JSON checkpoints for trained and split models.
//!
//! Parameters are written with shortest round-trip formatting, so loading a
//! checkpoint restores every `f64` bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::model::ModelGraph;
use crate::splitting::{BottleneckSpec, SplitPlan};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

impl ModelRecord {
    pub fn from_model(model: &ModelGraph) -> Self {
        Self {
            input_shape: model.input_shape().to_vec(),
            layers: model.layers().to_vec(),
            params: model.params().to_vec(),
        }
    }

    pub fn to_model(&self) -> Result<ModelGraph> {
        ModelGraph::new(self.input_shape.clone(), self.layers.clone(), self.params.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Data the model was trained on; datasets are regenerated, never stored.
    pub dataset: DatasetSpec,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub test_accuracy: f64,
    pub model: ModelRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCheckpoint {
    pub format_version: u32,
    pub dataset: DatasetSpec,
    pub bottleneck: BottleneckSpec,
    pub test_accuracy: f64,
    pub unsplit_accuracy: f64,
    pub reconstruction_distance: f64,
    pub head: ModelRecord,
    pub encoder: ModelRecord,
    pub decoder: ModelRecord,
    pub tail: ModelRecord,
}

impl SplitCheckpoint {
    pub fn plan(&self) -> Result<SplitPlan> {
        Ok(SplitPlan {
            bottleneck: self.bottleneck,
            head: self.head.to_model()?,
            encoder: self.encoder.to_model()?,
            decoder: self.decoder.to_model()?,
            tail: self.tail.to_model()?,
        })
    }

    pub fn new(
        plan: &SplitPlan,
        dataset: DatasetSpec,
        test_accuracy: f64,
        unsplit_accuracy: f64,
        reconstruction_distance: f64,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dataset,
            bottleneck: plan.bottleneck,
            test_accuracy,
            unsplit_accuracy,
            reconstruction_distance,
            head: ModelRecord::from_model(&plan.head),
            encoder: ModelRecord::from_model(&plan.encoder),
            decoder: ModelRecord::from_model(&plan.decoder),
            tail: ModelRecord::from_model(&plan.tail),
        }
    }
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported checkpoint format version {found} (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn save<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    let ckpt: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    check_version(ckpt.format_version)?;
    ckpt.model.to_model()?;
    Ok(ckpt)
}

pub fn load_split(path: &Path) -> Result<SplitCheckpoint> {
    let ckpt: SplitCheckpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    check_version(ckpt.format_version)?;
    ckpt.plan()?;
    Ok(ckpt)
}
