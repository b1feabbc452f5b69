//! Run configuration: one JSON document, validated before any work starts.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cutpoint_core::dataset::DatasetSpec;
use cutpoint_core::netsim::{ChannelConfig, Protocol, TransportConfig};
use cutpoint_core::profile::Profile;
use cutpoint_core::scenario::{ComputeConfig, Mode, Qos, ScenarioConfig};
use cutpoint_core::train::TrainConfig;
use serde::Deserialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// Bad input from the user (config, flags, files); exits with status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub bottleneck: BottleneckSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default = "default_compute")]
    pub compute: ComputeConfig,
    #[serde(default = "default_qos")]
    pub qos: Qos,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    /// The small CNN trained by `train`.
    #[default]
    Toy,
    /// A layer profile; the built-in VGG16 when `path` is absent.
    Profile { path: Option<PathBuf> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub train_items: usize,
    pub test_items: usize,
    pub num_classes: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            train_items: 2000,
            test_items: 400,
            num_classes: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 5e-3,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BottleneckSection {
    pub compression_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    pub batch_size: usize,
}

impl Default for BottleneckSection {
    fn default() -> Self {
        Self {
            compression_rate: 0.5,
            epochs: 50,
            learning_rate: 5e-4,
            finetune_epochs: 5,
            finetune_learning_rate: 5e-4,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub latency_s: f64,
    pub capacity_bps: f64,
    pub interface_bps: f64,
    /// Used when `scenario.loss_rates` is absent.
    pub loss_rate: f64,
    pub protocols: Vec<Protocol>,
    pub mtu_bytes: usize,
    pub window_packets: usize,
    pub rto_multiplier: f64,
    pub max_retries: u32,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let t = TransportConfig::new(Protocol::Tcp);
        Self {
            latency_s: 8e-4,
            capacity_bps: 1e9,
            interface_bps: 1e9,
            loss_rate: 0.0,
            protocols: vec![Protocol::Tcp],
            mtu_bytes: t.mtu_bytes,
            window_packets: t.window_packets,
            rto_multiplier: t.rto_multiplier,
            max_retries: t.max_retries,
        }
    }
}

fn default_compute() -> ComputeConfig {
    ComputeConfig {
        edge_mult_adds_per_s: 1e12,
        server_mult_adds_per_s: 1e13,
    }
}

fn default_qos() -> Qos {
    Qos {
        max_latency_s: 0.05,
        min_accuracy: 0.0,
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub modes: Vec<Mode>,
    pub frame_count: usize,
    pub loss_rates: Option<Vec<f64>>,
    /// Split indices (position among Conv2D/MaxPool2D layers) to evaluate in
    /// SC mode. Toy runs default to the saliency candidates.
    pub candidates: Option<Vec<usize>>,
    /// Profile mode accuracy: key `full` for LC/RC, split indices for SC.
    pub accuracy_table: BTreeMap<String, f64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            modes: vec![Mode::Sc],
            frame_count: 400,
            loss_rates: None,
            candidates: None,
            accuracy_table: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub checkpoint: PathBuf,
    pub split_dir: PathBuf,
    pub sweep_csv: Option<PathBuf>,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("model.json"),
            split_dir: PathBuf::from("splits"),
            sweep_csv: None,
        }
    }
}

/// Sets `path` (dot-separated keys) inside `doc`. The value is parsed as JSON,
/// falling back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("--set expects key=value, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(invalid(format!("bad key path {path:?}")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| invalid(format!("{path}: {key} is not inside an object")))?;
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| invalid(format!("{path}: parent is not an object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = if overrides.is_empty() {
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        } else {
            let mut doc: Value =
                serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            for o in overrides {
                apply_override(&mut doc, o)?;
            }
            serde_json::from_value(doc).map_err(|e| invalid(format!("{} (after --set): {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |r: cutpoint_core::Result<()>, section: &str| r.map_err(|e| invalid(format!("{section}: {e}")));
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema: unsupported version {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        check(self.train_config().validate(), "training")?;
        let b = &self.bottleneck;
        if !(b.compression_rate > 0.0 && b.compression_rate < 1.0) {
            return Err(invalid("bottleneck.compression_rate must lie in (0, 1)"));
        }
        check(self.bottleneck_config().validate(), "bottleneck")?;
        if b.finetune_epochs > 0 {
            check(self.finetune_config().validate(), "bottleneck")?;
        }
        let d = &self.dataset;
        if !(2..=10).contains(&d.num_classes) || d.train_items < d.num_classes || d.test_items < d.num_classes {
            return Err(invalid(
                "dataset: num_classes must be 2..=10 and each split needs at least one item per class",
            ));
        }
        if self.network.protocols.is_empty() {
            return Err(invalid("network.protocols is empty"));
        }
        if self.scenario.modes.is_empty() {
            return Err(invalid("scenario.modes is empty"));
        }
        let grid = self.loss_rates();
        if grid.is_empty() {
            return Err(invalid("scenario.loss_rates is empty"));
        }
        if let Some(c) = &self.scenario.candidates {
            if c.is_empty() {
                return Err(invalid("scenario.candidates is empty"));
            }
        }
        for (key, acc) in &self.scenario.accuracy_table {
            if key != "full" && key.parse::<usize>().is_err() {
                return Err(invalid(format!(
                    "scenario.accuracy_table: key {key:?} must be \"full\" or a split index"
                )));
            }
            if !(0.0..=1.0).contains(acc) {
                return Err(invalid(format!("scenario.accuracy_table.{key} must lie in [0, 1]")));
            }
        }
        for &p in &grid {
            let mut s = self.scenario_config(Mode::Lc, self.network.protocols[0]);
            s.channel.loss_rate = p;
            check(s.validate(), "scenario")?;
        }
        for &protocol in &self.network.protocols {
            check(self.transport(protocol).validate(), "network")?;
        }
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            train_items: self.dataset.train_items,
            test_items: self.dataset.test_items,
            num_classes: self.dataset.num_classes,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.training.batch_size,
            ..TrainConfig::new(self.training.epochs, self.training.learning_rate, self.seed)
        }
    }

    pub fn bottleneck_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.bottleneck.batch_size,
            ..TrainConfig::new(self.bottleneck.epochs, self.bottleneck.learning_rate, self.seed)
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.bottleneck.batch_size,
            ..TrainConfig::new(
                self.bottleneck.finetune_epochs,
                self.bottleneck.finetune_learning_rate,
                self.seed,
            )
        }
    }

    pub fn loss_rates(&self) -> Vec<f64> {
        self.scenario
            .loss_rates
            .clone()
            .unwrap_or_else(|| vec![self.network.loss_rate])
    }

    pub fn transport(&self, protocol: Protocol) -> TransportConfig {
        TransportConfig {
            protocol,
            mtu_bytes: self.network.mtu_bytes,
            window_packets: self.network.window_packets,
            rto_multiplier: self.network.rto_multiplier,
            max_retries: self.network.max_retries,
        }
    }

    pub fn scenario_config(&self, mode: Mode, protocol: Protocol) -> ScenarioConfig {
        ScenarioConfig {
            mode,
            frame_count: self.scenario.frame_count,
            qos: self.qos,
            channel: ChannelConfig {
                latency_s: self.network.latency_s,
                capacity_bps: self.network.capacity_bps,
                interface_bps: self.network.interface_bps,
                loss_rate: self.network.loss_rate,
            },
            transport: self.transport(protocol),
            compute: self.compute,
            seed: self.seed,
        }
    }

    /// The profile named by `model`, if this is a profile run.
    pub fn profile(&self) -> Result<Option<Profile>> {
        match &self.model {
            ModelSource::Toy => Ok(None),
            ModelSource::Profile { path: None } => Ok(Some(Profile::vgg16())),
            ModelSource::Profile { path: Some(p) } => load_profile(p).map(Some),
        }
    }

    pub fn split_checkpoint_path(&self, split_index: usize) -> PathBuf {
        self.outputs.split_dir.join(format!("split_{split_index}.json"))
    }
}

pub fn load_profile(path: &Path) -> Result<Profile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading profile {}", path.display()))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("profile");
    Profile::parse(name, &text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}
