//! Discrete-event model of one frame crossing a single lossy link.
//!
//! The payload is cut into MTU-sized packets that are serialized back to back
//! at `min(capacity, interface)` bits per second. Each transmission is dropped
//! independently with the channel loss rate, drawing from one generator in
//! transmission order. Under TCP the receiver acks every packet (acks are never
//! lost and do not share the data direction), the sender keeps at most
//! `window_packets` packets beyond the oldest unacked one in flight, and an
//! unacked packet is resent `rto_multiplier · RTT` after it left. UDP fires and
//! forgets.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// One-way propagation delay per packet.
    pub latency_s: f64,
    /// Link bandwidth.
    pub capacity_bps: f64,
    /// Device interface speed.
    pub interface_bps: f64,
    /// Independent per-transmission drop probability.
    pub loss_rate: f64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.latency_s >= 0.0 && self.latency_s.is_finite()) {
            return Err(Error::invalid("latency_s must be finite and >= 0"));
        }
        if !(self.capacity_bps > 0.0 && self.capacity_bps.is_finite()) {
            return Err(Error::invalid("capacity_bps must be finite and > 0"));
        }
        if !(self.interface_bps > 0.0 && self.interface_bps.is_finite()) {
            return Err(Error::invalid("interface_bps must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(Error::invalid("loss_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Serialization rate of the link: the slower of channel and interface.
pub fn effective_rate(channel: &ChannelConfig) -> f64 {
    channel.capacity_bps.min(channel.interface_bps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Tcp,
    Udp,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TCP" => Ok(Protocol::Tcp),
            "UDP" => Ok(Protocol::Udp),
            _ => Err(Error::invalid(format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    pub protocol: Protocol,
    #[serde(default = "defaults::mtu")]
    pub mtu_bytes: usize,
    #[serde(default = "defaults::window")]
    pub window_packets: usize,
    #[serde(default = "defaults::rto_multiplier")]
    pub rto_multiplier: f64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
}

mod defaults {
    pub fn mtu() -> usize {
        1500
    }
    pub fn window() -> usize {
        64
    }
    pub fn rto_multiplier() -> f64 {
        2.0
    }
    pub fn max_retries() -> u32 {
        16
    }
}

impl TransportConfig {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            mtu_bytes: defaults::mtu(),
            window_packets: defaults::window(),
            rto_multiplier: defaults::rto_multiplier(),
            max_retries: defaults::max_retries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mtu_bytes < 64 {
            return Err(Error::invalid("mtu_bytes must be at least 64"));
        }
        if self.window_packets == 0 {
            return Err(Error::invalid("window_packets must be at least 1"));
        }
        if self.max_retries == 0 {
            return Err(Error::invalid("max_retries must be at least 1"));
        }
        // Below 1 the timer could fire before a timely ack.
        if !(self.rto_multiplier >= 1.0 && self.rto_multiplier.is_finite()) {
            return Err(Error::invalid("rto_multiplier must be finite and >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryReport {
    /// Time the receiver holds the last byte it will get; `None` if the frame
    /// failed (TCP retry exhaustion, or nothing delivered under UDP).
    pub completion_s: Option<f64>,
    /// One flag per payload byte.
    pub delivered: Vec<bool>,
    /// Total transmissions, first attempts included.
    pub packets_sent: usize,
    pub retransmissions: usize,
    /// Sequence number of the packet that exhausted its retries.
    pub failed_packet: Option<usize>,
    /// Retransmission count of each packet.
    pub packet_retransmissions: Vec<u32>,
}

impl DeliveryReport {
    pub fn succeeded(&self) -> bool {
        self.completion_s.is_some()
    }

    pub fn all_delivered(&self) -> bool {
        self.delivered.iter().all(|b| *b)
    }

    pub fn delivered_fraction(&self) -> f64 {
        self.delivered.iter().filter(|b| **b).count() as f64 / self.delivered.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SendComplete,
    Arrival,
    AckArrival,
    Timeout,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::SendComplete => "send_complete",
            EventKind::Arrival => "arrival",
            EventKind::AckArrival => "ack_arrival",
            EventKind::Timeout => "timeout",
        })
    }
}

/// One processed event, for `--trace` output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time_s: f64,
    pub event_kind: EventKind,
    pub packet_seq: usize,
    /// Set on `send_complete` when the saboteur dropped the packet.
    pub lost: bool,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time_s: f64,
    ordinal: u64,
    kind: EventKind,
    seq: usize,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time_s
            .total_cmp(&other.time_s)
            .then(self.ordinal.cmp(&other.ordinal))
    }
}

/// Decides the fate of each transmission, consulted once per transmission in
/// the order packets leave the sender.
pub trait LossModel {
    fn is_lost(&mut self) -> bool;
}

/// Seeded Bernoulli saboteur: a transmission is lost when a uniform draw in
/// `[0, 1)` falls below the loss rate. Shared draws across loss rates make
/// the loss pattern monotone in the rate for a fixed seed.
#[derive(Debug, Clone)]
pub struct BernoulliLoss {
    rng: ChaCha8Rng,
    rate: f64,
}

impl BernoulliLoss {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            rate,
        }
    }
}

impl LossModel for BernoulliLoss {
    fn is_lost(&mut self) -> bool {
        self.rng.random::<f64>() < self.rate
    }
}

/// Replays a fixed outcome list; transmissions past its end are delivered.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLoss {
    outcomes: Vec<bool>,
    next: usize,
}

impl ScriptedLoss {
    pub fn new(outcomes: Vec<bool>) -> Self {
        Self { outcomes, next: 0 }
    }

    pub fn consumed(&self) -> usize {
        self.next
    }
}

impl LossModel for ScriptedLoss {
    fn is_lost(&mut self) -> bool {
        let lost = self.outcomes.get(self.next).copied().unwrap_or(false);
        self.next += 1;
        lost
    }
}

/// Simulates one frame with the seeded saboteur.
pub fn transmit_frame(
    payload_bytes: usize,
    channel: &ChannelConfig,
    transport: &TransportConfig,
    seed: u64,
) -> Result<DeliveryReport> {
    let mut loss = BernoulliLoss::new(channel.loss_rate, seed);
    simulate(payload_bytes, channel, transport, &mut loss, None)
}

/// CSV with columns `time_s,event_kind,packet_seq,lost`.
pub fn trace_csv(records: &[TraceRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time_s", "event_kind", "packet_seq", "lost"])?;
    for r in records {
        w.write_record([
            r.time_s.to_string(),
            r.event_kind.to_string(),
            r.packet_seq.to_string(),
            r.lost.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Size in bytes of every packet of a payload.
pub fn packet_sizes(payload_bytes: usize, mtu_bytes: usize) -> Vec<usize> {
    let n = payload_bytes.div_ceil(mtu_bytes);
    (0..n).map(|k| (payload_bytes - k * mtu_bytes).min(mtu_bytes)).collect()
}

/// Event loop driven by an arbitrary loss model; optionally records a trace.
pub fn simulate(
    payload_bytes: usize,
    channel: &ChannelConfig,
    transport: &TransportConfig,
    loss: &mut impl LossModel,
    trace: Option<&mut Vec<TraceRecord>>,
) -> Result<DeliveryReport> {
    if payload_bytes == 0 {
        return Err(Error::invalid("payload must be at least one byte"));
    }
    channel.validate()?;
    transport.validate()?;
    let mut sim = Simulation::new(payload_bytes, channel, transport, trace);
    sim.run(loss);
    Ok(sim.finish(payload_bytes))
}

struct Simulation<'a> {
    tcp: bool,
    latency: f64,
    rto_multiplier: f64,
    window: usize,
    max_retries: u32,
    sizes: Vec<usize>,
    serialization: Vec<f64>,
    mtu: usize,

    queue: BinaryHeap<Reverse<Event>>,
    ordinal: u64,
    link_busy: bool,
    next_new: usize,
    base: usize,
    acked: Vec<bool>,
    delivered: Vec<bool>,
    delivered_count: usize,
    retransmit: VecDeque<usize>,
    retries: Vec<u32>,
    /// Outcome of the transmission currently on the wire.
    in_flight_lost: bool,

    packets_sent: usize,
    last_arrival: Option<f64>,
    completion: Option<f64>,
    failed: Option<usize>,
    trace: Option<&'a mut Vec<TraceRecord>>,
}

impl<'a> Simulation<'a> {
    fn new(
        payload_bytes: usize,
        channel: &ChannelConfig,
        transport: &TransportConfig,
        trace: Option<&'a mut Vec<TraceRecord>>,
    ) -> Self {
        let rate = effective_rate(channel);
        let sizes = packet_sizes(payload_bytes, transport.mtu_bytes);
        let serialization = sizes.iter().map(|&b| (b * 8) as f64 / rate).collect();
        let n = sizes.len();
        Self {
            tcp: transport.protocol == Protocol::Tcp,
            latency: channel.latency_s,
            rto_multiplier: transport.rto_multiplier,
            window: transport.window_packets,
            max_retries: transport.max_retries,
            sizes,
            serialization,
            mtu: transport.mtu_bytes,
            queue: BinaryHeap::new(),
            ordinal: 0,
            link_busy: false,
            next_new: 0,
            base: 0,
            acked: vec![false; n],
            delivered: vec![false; n],
            delivered_count: 0,
            retransmit: VecDeque::new(),
            retries: vec![0; n],
            in_flight_lost: false,
            packets_sent: 0,
            last_arrival: None,
            completion: None,
            failed: None,
            trace,
        }
    }

    fn schedule(&mut self, time_s: f64, kind: EventKind, seq: usize) {
        let ordinal = self.ordinal;
        self.ordinal += 1;
        self.queue.push(Reverse(Event {
            time_s,
            ordinal,
            kind,
            seq,
        }));
    }

    fn record(&mut self, ev: &Event, lost: bool) {
        if let Some(trace) = self.trace.as_deref_mut() {
            trace.push(TraceRecord {
                time_s: ev.time_s,
                event_kind: ev.kind,
                packet_seq: ev.seq,
                lost,
            });
        }
    }

    /// Starts the next transmission if the link is free: pending
    /// retransmissions first, then new packets inside the window.
    fn try_send(&mut self, now: f64, loss: &mut impl LossModel) {
        if self.link_busy {
            return;
        }
        let seq = if let Some(seq) = self.retransmit.pop_front() {
            seq
        } else if self.next_new < self.sizes.len() && (!self.tcp || self.next_new < self.base + self.window) {
            self.next_new += 1;
            self.next_new - 1
        } else {
            return;
        };
        self.link_busy = true;
        self.packets_sent += 1;
        self.in_flight_lost = loss.is_lost();
        self.schedule(now + self.serialization[seq], EventKind::SendComplete, seq);
    }

    fn run(&mut self, loss: &mut impl LossModel) {
        self.try_send(0.0, loss);
        while let Some(Reverse(ev)) = self.queue.pop() {
            let now = ev.time_s;
            match ev.kind {
                EventKind::SendComplete => {
                    let lost = self.in_flight_lost;
                    self.record(&ev, lost);
                    self.link_busy = false;
                    if !lost {
                        self.schedule(now + self.latency, EventKind::Arrival, ev.seq);
                    }
                    if self.tcp {
                        let rtt = 2.0 * self.latency + self.serialization[ev.seq];
                        self.schedule(now + self.rto_multiplier * rtt, EventKind::Timeout, ev.seq);
                    }
                    self.try_send(now, loss);
                }
                EventKind::Arrival => {
                    self.record(&ev, false);
                    if !self.delivered[ev.seq] {
                        self.delivered[ev.seq] = true;
                        self.delivered_count += 1;
                        self.last_arrival = Some(now);
                    }
                    if self.tcp {
                        if self.delivered_count == self.sizes.len() {
                            self.completion = Some(now);
                            return;
                        }
                        self.schedule(now + self.latency, EventKind::AckArrival, ev.seq);
                    }
                }
                EventKind::AckArrival => {
                    self.record(&ev, false);
                    self.acked[ev.seq] = true;
                    while self.base < self.acked.len() && self.acked[self.base] {
                        self.base += 1;
                    }
                    self.try_send(now, loss);
                }
                EventKind::Timeout => {
                    if self.acked[ev.seq] || self.delivered[ev.seq] {
                        continue;
                    }
                    self.record(&ev, false);
                    if self.retries[ev.seq] >= self.max_retries {
                        self.failed = Some(ev.seq);
                        return;
                    }
                    self.retries[ev.seq] += 1;
                    self.retransmit.push_back(ev.seq);
                    self.try_send(now, loss);
                }
            }
        }
        if !self.tcp {
            self.completion = self.last_arrival;
        }
    }

    fn finish(self, payload_bytes: usize) -> DeliveryReport {
        let mut bytes = vec![false; payload_bytes];
        for (k, _) in self.delivered.iter().enumerate().filter(|(_, d)| **d) {
            let start = k * self.mtu;
            bytes[start..start + self.sizes[k]].fill(true);
        }
        let completion_s = if self.failed.is_some() { None } else { self.completion };
        DeliveryReport {
            completion_s,
            delivered: bytes,
            packets_sent: self.packets_sent,
            retransmissions: self.retries.iter().map(|&r| r as usize).sum(),
            failed_packet: self.failed,
            packet_retransmissions: self.retries,
        }
    }
}
