//! Local, remote and split deployments driven frame by frame through the
//! link simulator.
//!
//! A frame is sensed on the edge, the edge runs whatever part of the network
//! the mode assigns to it, the transmitter sends the resulting payload, and
//! the server finishes the inference on what arrives. Frames are independent
//! trials: there is no queueing between them.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt::{self, Write as _};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::netsim::{
    simulate, transmit_frame, BernoulliLoss, ChannelConfig, DeliveryReport, Protocol, TraceRecord, TransportConfig,
};
use crate::profile::{model_stats, Profile};
use crate::splitting::SplitPlan;
use crate::tensor::{zero_fill_undelivered, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    /// Everything on the edge, nothing sent.
    Lc,
    /// Raw input sent, everything on the server.
    Rc,
    /// Head and encoder on the edge, latent sent, decoder and tail on the server.
    Sc,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Lc => "LC",
            Mode::Rc => "RC",
            Mode::Sc => "SC",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LC" => Ok(Mode::Lc),
            "RC" => Ok(Mode::Rc),
            "SC" => Ok(Mode::Sc),
            _ => Err(Error::invalid(format!("unknown mode {s:?} (expected LC, RC or SC)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeConfig {
    pub edge_mult_adds_per_s: f64,
    pub server_mult_adds_per_s: f64,
}

impl ComputeConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("edge_mult_adds_per_s", self.edge_mult_adds_per_s),
            ("server_mult_adds_per_s", self.server_mult_adds_per_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{key} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Qos {
    pub max_latency_s: f64,
    pub min_accuracy: f64,
}

impl Qos {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_latency_s > 0.0 && self.max_latency_s.is_finite()) {
            return Err(Error::invalid("max_latency_s must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.min_accuracy) {
            return Err(Error::invalid("min_accuracy must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub frame_count: usize,
    pub qos: Qos,
    pub channel: ChannelConfig,
    pub transport: TransportConfig,
    pub compute: ComputeConfig,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::invalid("frame_count must be at least 1"));
        }
        self.qos.validate()?;
        self.channel.validate()?;
        self.transport.validate()?;
        self.compute.validate()
    }
}

/// Split point of a profile-mode SC run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSplit {
    /// Model index of the split layer.
    pub layer: usize,
    pub compression_rate: f64,
}

/// What the frames run through.
#[derive(Debug, Clone, Copy)]
pub enum Workload<'a> {
    /// A trained network; accuracy is measured on what the receiver gets.
    /// Frame `f` uses test item `f % len`.
    Model {
        model: &'a ModelGraph,
        plan: Option<&'a SplitPlan>,
        test: &'a Dataset,
    },
    /// A static profile; accuracy comes from a table and only dropped frames
    /// lower it.
    Profile {
        profile: &'a Profile,
        split: Option<ProfileSplit>,
        accuracy: f64,
    },
}

/// Per-frame work and payload of a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameCost {
    pub edge_mult_adds: u64,
    pub server_mult_adds: u64,
    /// Zero for LC.
    pub payload_bytes: usize,
}

fn network_mult_adds(model: &ModelGraph) -> Result<u64> {
    Ok(model_stats(model.layers(), model.input_shape(), 1)?.1.total_mult_adds)
}

fn elements(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Workload<'_> {
    /// Position of the split layer among eligible layers, if this is an SC run.
    pub fn split_index(&self, mode: Mode) -> Option<usize> {
        if mode != Mode::Sc {
            return None;
        }
        match self {
            Workload::Model { plan, .. } => plan.map(|p| p.bottleneck.split_index),
            Workload::Profile { profile, split, .. } => {
                split.and_then(|s| profile.eligible_layers().iter().position(|&l| l == s.layer))
            }
        }
    }

    pub fn cost(&self, mode: Mode) -> Result<FrameCost> {
        match (self, mode) {
            (Workload::Model { model, .. }, Mode::Lc) => Ok(FrameCost {
                edge_mult_adds: network_mult_adds(model)?,
                server_mult_adds: 0,
                payload_bytes: 0,
            }),
            (Workload::Model { model, .. }, Mode::Rc) => Ok(FrameCost {
                edge_mult_adds: 0,
                server_mult_adds: network_mult_adds(model)?,
                payload_bytes: 4 * elements(model.input_shape()),
            }),
            (Workload::Model { plan, .. }, Mode::Sc) => {
                let plan = plan.ok_or_else(|| Error::invalid("SC mode needs a split plan"))?;
                Ok(FrameCost {
                    edge_mult_adds: network_mult_adds(&plan.head)? + network_mult_adds(&plan.encoder)?,
                    server_mult_adds: network_mult_adds(&plan.decoder)? + network_mult_adds(&plan.tail)?,
                    payload_bytes: plan.payload_bytes(),
                })
            }
            (Workload::Profile { profile, .. }, Mode::Lc) => Ok(FrameCost {
                edge_mult_adds: profile.total_mult_adds()?,
                server_mult_adds: 0,
                payload_bytes: 0,
            }),
            (Workload::Profile { profile, .. }, Mode::Rc) => Ok(FrameCost {
                edge_mult_adds: 0,
                server_mult_adds: profile.total_mult_adds()?,
                payload_bytes: profile.input_bytes() as usize,
            }),
            (Workload::Profile { profile, split, .. }, Mode::Sc) => {
                let split = split.ok_or_else(|| Error::invalid("SC mode needs a split layer"))?;
                let cost = profile.split_cost(split.layer, split.compression_rate)?;
                if cost.payload.degenerate {
                    return Err(Error::invalid(format!(
                        "rate {} keeps every channel at layer {}; the bottleneck would not compress",
                        split.compression_rate, split.layer
                    )));
                }
                Ok(FrameCost {
                    edge_mult_adds: cost.head_mult_adds,
                    server_mult_adds: cost.tail_mult_adds,
                    payload_bytes: cost.payload.bytes as usize,
                })
            }
        }
    }
}

/// End-to-end latency of one frame, or `None` if the frame was dropped.
///
/// LC: edge compute only. RC: transmission then server compute. SC: edge
/// compute, transmission, server compute.
pub fn frame_latency(
    mode: Mode,
    cost: &FrameCost,
    compute: &ComputeConfig,
    delivery: Option<&DeliveryReport>,
) -> Result<Option<f64>> {
    let edge = cost.edge_mult_adds as f64 / compute.edge_mult_adds_per_s;
    let server = cost.server_mult_adds as f64 / compute.server_mult_adds_per_s;
    if mode == Mode::Lc {
        return Ok(Some(edge));
    }
    let delivery = delivery.ok_or_else(|| Error::invalid(format!("{mode} frames need a delivery report")))?;
    Ok(delivery.completion_s.map(|t| match mode {
        Mode::Rc => t + server,
        _ => edge + t + server,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub mode: Mode,
    pub protocol: Protocol,
    pub loss_rate: f64,
    pub split_index: Option<usize>,
    pub payload_bytes: usize,
    pub frame_count: usize,
    /// Latency of every frame that was not dropped, in frame order.
    pub latencies_s: Vec<f64>,
    pub dropped_frames: usize,
    /// Dropped frames count as misclassified.
    pub accuracy: f64,
    pub mean_latency_s: Option<f64>,
    pub p95_latency_s: Option<f64>,
    pub packets_sent: usize,
    pub retransmissions: usize,
    pub qos_pass: bool,
}

impl SimReport {
    pub fn drop_rate(&self) -> f64 {
        self.dropped_frames as f64 / self.frame_count as f64
    }
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Seed of frame `frame`; the same for every loss rate so that sweeps share
/// their random draws.
pub fn frame_seed(seed: u64, frame: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64);
    rng.next_u64()
}

/// Runs `cfg.frame_count` frames and collects latency and accuracy.
pub fn run_scenario(cfg: &ScenarioConfig, workload: &Workload<'_>) -> Result<SimReport> {
    cfg.validate()?;
    let cost = workload.cost(cfg.mode)?;
    if let Workload::Model { test, model, .. } = workload {
        if test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if test.num_classes != model.num_classes() {
            return Err(Error::invalid("test data and model disagree on the class count"));
        }
    }
    if let Workload::Profile { accuracy, .. } = workload {
        if !(0.0..=1.0).contains(accuracy) {
            return Err(Error::invalid("table accuracy must lie in [0, 1]"));
        }
    }

    let mut receiver = Receiver::new(workload, cfg.mode);
    let mut latencies = Vec::with_capacity(cfg.frame_count);
    let mut dropped = 0;
    let mut correct = 0usize;
    let (mut packets_sent, mut retransmissions) = (0, 0);
    for frame in 0..cfg.frame_count {
        let delivery = match cfg.mode {
            Mode::Lc => None,
            _ => Some(transmit_frame(
                cost.payload_bytes,
                &cfg.channel,
                &cfg.transport,
                frame_seed(cfg.seed, frame),
            )?),
        };
        if let Some(d) = &delivery {
            packets_sent += d.packets_sent;
            retransmissions += d.retransmissions;
        }
        match frame_latency(cfg.mode, &cost, &cfg.compute, delivery.as_ref())? {
            Some(latency) => {
                latencies.push(latency);
                if receiver.correct(frame, delivery.as_ref())? {
                    correct += 1;
                }
            }
            None => dropped += 1,
        }
    }

    let mean = (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64);
    let mut report = SimReport {
        mode: cfg.mode,
        protocol: cfg.transport.protocol,
        loss_rate: cfg.channel.loss_rate,
        split_index: workload.split_index(cfg.mode),
        payload_bytes: cost.payload_bytes,
        frame_count: cfg.frame_count,
        p95_latency_s: percentile(&latencies, 95.0),
        mean_latency_s: mean,
        latencies_s: latencies,
        dropped_frames: dropped,
        accuracy: match workload {
            Workload::Profile { accuracy, .. } => accuracy * (1.0 - dropped as f64 / cfg.frame_count as f64),
            Workload::Model { .. } => correct as f64 / cfg.frame_count as f64,
        },
        packets_sent,
        retransmissions,
        qos_pass: false,
    };
    report.qos_pass = evaluate_qos(&SweepRow::from(&report), &cfg.qos).pass;
    Ok(report)
}

/// Event trace of one frame's transmission, with the same draws the frame
/// gets inside [`run_scenario`]. LC frames send nothing.
pub fn trace_frame(cfg: &ScenarioConfig, workload: &Workload<'_>, frame: usize) -> Result<Vec<TraceRecord>> {
    cfg.validate()?;
    if cfg.mode == Mode::Lc {
        return Ok(Vec::new());
    }
    let cost = workload.cost(cfg.mode)?;
    let mut loss = BernoulliLoss::new(cfg.channel.loss_rate, frame_seed(cfg.seed, frame));
    let mut trace = Vec::new();
    simulate(
        cost.payload_bytes,
        &cfg.channel,
        &cfg.transport,
        &mut loss,
        Some(&mut trace),
    )?;
    Ok(trace)
}

/// Runs the same scenario once per loss rate, in the given order.
pub fn sweep(cfg: &ScenarioConfig, workload: &Workload<'_>, loss_rates: &[f64]) -> Result<Vec<SimReport>> {
    if loss_rates.is_empty() {
        return Err(Error::invalid("loss-rate grid is empty"));
    }
    loss_rates
        .iter()
        .map(|&p| {
            let mut point = *cfg;
            point.channel.loss_rate = p;
            run_scenario(&point, workload)
        })
        .collect()
}

/// Classifies what reached the server. Predictions on complete deliveries
/// depend only on the test item, so they are cached.
struct Receiver<'a> {
    workload: Workload<'a>,
    mode: Mode,
    complete: HashMap<usize, bool>,
    latents: HashMap<usize, Tensor>,
}

impl<'a> Receiver<'a> {
    fn new(workload: &Workload<'a>, mode: Mode) -> Self {
        Self {
            workload: *workload,
            mode,
            complete: HashMap::new(),
            latents: HashMap::new(),
        }
    }

    /// Whether the server classifies this frame correctly. Profile runs have
    /// no classifier and always report false.
    fn correct(&mut self, frame: usize, delivery: Option<&DeliveryReport>) -> Result<bool> {
        let (model, plan, test) = match self.workload {
            Workload::Profile { .. } => return Ok(false),
            Workload::Model { model, plan, test } => (model, plan, test),
        };
        let item = frame % test.len();
        let (input, label) = &test.items[item];
        let complete = delivery.is_none_or(|d| d.all_delivered());
        if complete {
            if let Some(&hit) = self.complete.get(&item) {
                return Ok(hit);
            }
        }
        let mask = delivery.map(|d| d.delivered.as_slice());
        let predicted = match (self.mode, mask) {
            (Mode::Lc, _) => model.predict(input)?,
            (Mode::Rc, Some(mask)) => model.predict(&zero_fill_undelivered(input, mask)?)?,
            (Mode::Sc, Some(mask)) => {
                let plan = plan.ok_or_else(|| Error::invalid("SC mode needs a split plan"))?;
                let latent = match self.latents.entry(item) {
                    Entry::Occupied(e) => e.into_mut(),
                    Entry::Vacant(e) => e.insert(plan.latent(input)?),
                };
                plan.classify_latent(&zero_fill_undelivered(latent, mask)?)?
            }
            (_, None) => unreachable!("RC and SC frames always carry a delivery"),
        };
        let hit = predicted == *label;
        if complete {
            self.complete.insert(item, hit);
        }
        Ok(hit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosVerdict {
    pub pass: bool,
    /// `max_latency − p95`, negative when violated; `-inf` without samples.
    pub latency_margin_s: f64,
    pub accuracy_margin: f64,
    /// The smaller of the two margins, used for ranking.
    pub margin: f64,
}

/// Both bounds are inclusive. A run without latency samples fails, and so
/// does a TCP run that dropped any frame.
pub fn evaluate_qos(row: &SweepRow, qos: &Qos) -> QosVerdict {
    let latency_margin_s = row.p95_latency_s.map_or(f64::NEG_INFINITY, |p| qos.max_latency_s - p);
    let accuracy_margin = row.accuracy - qos.min_accuracy;
    let tcp_failed = row.protocol == Protocol::Tcp && row.mode != Mode::Lc && row.drop_rate > 0.0;
    QosVerdict {
        pass: latency_margin_s >= 0.0 && accuracy_margin >= 0.0 && !tcp_failed,
        latency_margin_s,
        accuracy_margin,
        margin: latency_margin_s.min(accuracy_margin),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub label: String,
    pub outcome: SweepRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub label: String,
    pub verdict: QosVerdict,
    pub accuracy: f64,
    pub mean_latency_s: Option<f64>,
    pub p95_latency_s: Option<f64>,
}

/// Ranks candidates: QoS-passing ones by accuracy (higher first), then mean
/// latency (lower first); failing ones after them by margin. The first entry
/// is the recommendation.
pub fn advise(candidates: &[Candidate], qos: &Qos) -> Result<Vec<Recommendation>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to rank"));
    }
    qos.validate()?;
    let mut recs: Vec<Recommendation> = candidates
        .iter()
        .map(|c| Recommendation {
            label: c.label.clone(),
            verdict: evaluate_qos(&c.outcome, qos),
            accuracy: c.outcome.accuracy,
            mean_latency_s: c.outcome.mean_latency_s,
            p95_latency_s: c.outcome.p95_latency_s,
        })
        .collect();
    recs.sort_by(|a, b| {
        let pass = b.verdict.pass.cmp(&a.verdict.pass);
        let inner = if a.verdict.pass && b.verdict.pass {
            b.accuracy.total_cmp(&a.accuracy).then_with(|| {
                let la = a.mean_latency_s.unwrap_or(f64::INFINITY);
                let lb = b.mean_latency_s.unwrap_or(f64::INFINITY);
                la.total_cmp(&lb)
            })
        } else {
            b.verdict.margin.total_cmp(&a.verdict.margin)
        };
        pass.then(inner).then_with(|| a.label.cmp(&b.label))
    });
    Ok(recs)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

/// Plain-text ranking table.
pub fn render_advisory(recs: &[Recommendation]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<5}{:<28}{:>10}{:>14}{:>14}{:>12}  verdict",
        "rank", "candidate", "accuracy", "mean_lat_s", "p95_lat_s", "margin"
    )
    .ok();
    for (i, r) in recs.iter().enumerate() {
        writeln!(
            out,
            "{:<5}{:<28}{:>10.4}{:>14}{:>14}{:>12.6}  {}",
            i + 1,
            r.label,
            r.accuracy,
            fmt_opt(r.mean_latency_s),
            fmt_opt(r.p95_latency_s),
            r.verdict.margin,
            if r.verdict.pass { "QOS" } else { "NOT-QOS" }
        )
        .ok();
    }
    if let Some(top) = recs.first() {
        let flag = if top.verdict.pass {
            ""
        } else {
            " (NOT-QOS: no candidate meets the constraints)"
        };
        writeln!(out, "recommended: {}{flag}", top.label).ok();
    }
    out
}

/// One row of a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: Mode,
    /// Position of the split layer among Conv2D/MaxPool2D layers; empty
    /// outside SC.
    pub split_layer: Option<usize>,
    pub protocol: Protocol,
    pub loss_rate: f64,
    /// Empty when every frame was dropped.
    pub mean_latency_s: Option<f64>,
    pub p95_latency_s: Option<f64>,
    pub accuracy: f64,
    pub drop_rate: f64,
    pub qos_pass: bool,
}

impl From<&SimReport> for SweepRow {
    fn from(r: &SimReport) -> Self {
        Self {
            mode: r.mode,
            split_layer: r.split_index,
            protocol: r.protocol,
            loss_rate: r.loss_rate,
            mean_latency_s: r.mean_latency_s,
            p95_latency_s: r.p95_latency_s,
            accuracy: r.accuracy,
            drop_rate: r.drop_rate(),
            qos_pass: r.qos_pass,
        }
    }
}

/// Rows sorted by (mode, split_layer, protocol, loss_rate).
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        (a.mode, a.split_layer, a.protocol)
            .cmp(&(b.mode, b.split_layer, b.protocol))
            .then(a.loss_rate.total_cmp(&b.loss_rate))
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "mode",
            "split_layer",
            "protocol",
            "loss_rate",
            "mean_latency_s",
            "p95_latency_s",
            "accuracy",
            "drop_rate",
            "qos_pass",
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
