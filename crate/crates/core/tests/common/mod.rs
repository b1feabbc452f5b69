//! Independent reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use cutpoint_core::layer::{LayerKind, LayerSpec};
use cutpoint_core::model::ModelGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small random CNN: conv-relu-pool-conv-relu-flatten-dense-relu-dense with
/// sizes drawn from `seed`. Weights use the library initializer, biases are
/// perturbed so they are not all zero.
pub fn random_model(seed: u64) -> ModelGraph {
    let mut r = rng(seed);
    let cin = r.random_range(1..=2);
    let c1 = r.random_range(2..=4);
    let c2 = r.random_range(2..=4);
    let side = 2 * r.random_range(3..=4);
    let hidden = r.random_range(3..=6);
    let classes = r.random_range(2..=4);
    let flat = c2 * (side / 2) * (side / 2);
    let layers = vec![
        LayerSpec::conv("c1", cin, c1, 3, 1),
        LayerSpec::relu("r1"),
        LayerSpec::max_pool("p1", 2),
        LayerSpec::conv("c2", c1, c2, 3, 1),
        LayerSpec::relu("r2"),
        LayerSpec::flatten("f"),
        LayerSpec::dense("d1", flat, hidden),
        LayerSpec::relu("r3"),
        LayerSpec::dense("d2", hidden, classes),
    ];
    let mut model = ModelGraph::init(vec![cin, side, side], layers, &mut r).unwrap();
    for v in model.params_mut() {
        *v += r.random_range(-0.05..0.05);
    }
    model
}

pub fn random_input(shape: &[usize], seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..shape.iter().product::<usize>())
        .map(|_| r.random_range(-1.0..1.0))
        .collect()
}

/// Activation with its shape, `[c, h, w]` or `[n]`.
#[derive(Debug, Clone)]
pub struct Act {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Straight-line scalar loops over the layer list. Parameters use the
/// library layout: weights then biases, conv weights `[out][in][ky][kx]`,
/// dense weights `[out][in]`.
pub struct ScalarNet<'a> {
    pub layers: &'a [LayerSpec],
    pub params: &'a [f64],
}

fn param_len(layer: &LayerSpec) -> usize {
    match layer.kind {
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => out_channels * in_channels * kernel * kernel + out_channels,
        LayerKind::Dense {
            in_features,
            out_features,
        } => in_features * out_features + out_features,
        _ => 0,
    }
}

impl<'a> ScalarNet<'a> {
    pub fn new(model: &'a ModelGraph) -> Self {
        Self {
            layers: model.layers(),
            params: model.params(),
        }
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += param_len(l);
                o
            })
            .collect()
    }

    /// Outputs of every layer; index 0 is the input itself.
    pub fn forward(&self, input_shape: &[usize], input: &[f64]) -> Vec<Act> {
        let offsets = self.offsets();
        let mut acts = vec![Act {
            shape: input_shape.to_vec(),
            data: input.to_vec(),
        }];
        for (li, layer) in self.layers.iter().enumerate() {
            let x = acts.last().unwrap().clone();
            let p = &self.params[offsets[li]..offsets[li] + param_len(layer)];
            let out = match layer.kind {
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (h, w) = (x.shape[1], x.shape[2]);
                    let oh = (h + 2 * padding - kernel) / stride + 1;
                    let ow = (w + 2 * padding - kernel) / stride + 1;
                    let nw = out_channels * in_channels * kernel * kernel;
                    let mut data = vec![0.0; out_channels * oh * ow];
                    for o in 0..out_channels {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut acc = p[nw + o];
                                for i in 0..in_channels {
                                    for ky in 0..kernel {
                                        for kx in 0..kernel {
                                            let iy = (y * stride + ky) as isize - padding as isize;
                                            let ix = (xx * stride + kx) as isize - padding as isize;
                                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                                continue;
                                            }
                                            let wv = p[((o * in_channels + i) * kernel + ky) * kernel + kx];
                                            acc += wv * x.data[(i * h + iy as usize) * w + ix as usize];
                                        }
                                    }
                                }
                                data[(o * oh + y) * ow + xx] = acc;
                            }
                        }
                    }
                    Act {
                        shape: vec![out_channels, oh, ow],
                        data,
                    }
                }
                LayerKind::Relu => Act {
                    shape: x.shape.clone(),
                    data: x.data.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(),
                },
                LayerKind::MaxPool2d { kernel, stride } => {
                    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
                    let oh = (h - kernel) / stride + 1;
                    let ow = (w - kernel) / stride + 1;
                    let mut data = vec![0.0; c * oh * ow];
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let v = x.data[(ch * h + y * stride + ky) * w + xx * stride + kx];
                                        if v > best {
                                            best = v;
                                        }
                                    }
                                }
                                data[(ch * oh + y) * ow + xx] = best;
                            }
                        }
                    }
                    Act {
                        shape: vec![c, oh, ow],
                        data,
                    }
                }
                LayerKind::Flatten => Act {
                    shape: vec![x.data.len()],
                    data: x.data.clone(),
                },
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => {
                    let mut data = vec![0.0; out_features];
                    for (o, d) in data.iter_mut().enumerate() {
                        let mut acc = p[in_features * out_features + o];
                        for i in 0..in_features {
                            acc += p[o * in_features + i] * x.data[i];
                        }
                        *d = acc;
                    }
                    Act {
                        shape: vec![out_features],
                        data,
                    }
                }
            };
            acts.push(out);
        }
        acts
    }

    /// Gradient of logit `class` with respect to every entry of `acts`
    /// (same indexing as [`ScalarNet::forward`]).
    pub fn logit_gradients(&self, acts: &[Act], class: usize) -> Vec<Vec<f64>> {
        let offsets = self.offsets();
        let n = self.layers.len();
        let mut grads: Vec<Vec<f64>> = acts.iter().map(|a| vec![0.0; a.data.len()]).collect();
        grads[n][class] = 1.0;
        for li in (0..n).rev() {
            let layer = &self.layers[li];
            let x = &acts[li];
            let gy = grads[li + 1].clone();
            let p = &self.params[offsets[li]..offsets[li] + param_len(layer)];
            let gx = &mut grads[li];
            match layer.kind {
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (h, w) = (x.shape[1], x.shape[2]);
                    let (oh, ow) = (acts[li + 1].shape[1], acts[li + 1].shape[2]);
                    for o in 0..out_channels {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let g = gy[(o * oh + y) * ow + xx];
                                for i in 0..in_channels {
                                    for ky in 0..kernel {
                                        for kx in 0..kernel {
                                            let iy = (y * stride + ky) as isize - padding as isize;
                                            let ix = (xx * stride + kx) as isize - padding as isize;
                                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                                continue;
                                            }
                                            let wv = p[((o * in_channels + i) * kernel + ky) * kernel + kx];
                                            gx[(i * h + iy as usize) * w + ix as usize] += wv * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                LayerKind::Relu => {
                    for (k, v) in x.data.iter().enumerate() {
                        if *v > 0.0 {
                            gx[k] += gy[k];
                        }
                    }
                }
                LayerKind::MaxPool2d { kernel, stride } => {
                    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
                    let (oh, ow) = (acts[li + 1].shape[1], acts[li + 1].shape[2]);
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut at = 0;
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let idx = (ch * h + y * stride + ky) * w + xx * stride + kx;
                                        if x.data[idx] > best {
                                            best = x.data[idx];
                                            at = idx;
                                        }
                                    }
                                }
                                gx[at] += gy[(ch * oh + y) * ow + xx];
                            }
                        }
                    }
                }
                LayerKind::Flatten => {
                    for (k, g) in gy.iter().enumerate() {
                        gx[k] += g;
                    }
                }
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => {
                    for o in 0..out_features {
                        for i in 0..in_features {
                            gx[i] += p[o * in_features + i] * gy[o];
                        }
                    }
                }
            }
        }
        grads
    }

    /// Grad-CAM map of the tensor `acts[feature]` (a `[c, h, w]` output).
    pub fn grad_cam(&self, acts: &[Act], grads: &[Vec<f64>], feature: usize) -> Vec<f64> {
        let a = &acts[feature];
        let g = &grads[feature];
        let (c, h, w) = (a.shape[0], a.shape[1], a.shape[2]);
        let mut map = vec![0.0; h * w];
        for k in 0..c {
            let mut s = 0.0;
            for idx in 0..h * w {
                s += g[k * h * w + idx];
            }
            let alpha = s / (h * w) as f64;
            for idx in 0..h * w {
                map[idx] += alpha * a.data[k * h * w + idx];
            }
        }
        map.iter().map(|v| v.max(0.0)).collect()
    }
}

/// Outcome of the reference link simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct RefOutcome {
    pub completion_s: Option<f64>,
    pub delivered_packets: Vec<bool>,
    pub packets_sent: usize,
    pub retries: Vec<u32>,
    pub failed: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct RefLink {
    pub latency_s: f64,
    pub rate_bps: f64,
    pub tcp: bool,
    pub window: usize,
    pub rto_multiplier: f64,
    pub max_retries: u32,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Kind {
    Sent { lost: bool },
    Arrived,
    Acked,
    Timer,
}

/// Event-list simulator with linear-scan dequeue by (time, creation order).
/// `draw` yields the loss outcome of each transmission in order; `None` means
/// the script ran out, which aborts with `None`.
pub fn reference_sim(sizes: &[usize], link: RefLink, draw: &mut dyn FnMut() -> Option<bool>) -> Option<RefOutcome> {
    let n = sizes.len();
    let ser: Vec<f64> = sizes.iter().map(|b| (b * 8) as f64 / link.rate_bps).collect();
    let mut pending: Vec<(f64, u64, Kind, usize)> = Vec::new();
    let mut created = 0u64;
    let mut busy = false;
    let mut next_new = 0;
    let mut acked = vec![false; n];
    let mut got = vec![false; n];
    let mut resend: Vec<usize> = Vec::new();
    let mut retries = vec![0u32; n];
    let mut sent = 0;
    let mut last = None;

    macro_rules! push {
        ($t:expr, $k:expr, $s:expr) => {{
            pending.push(($t, created, $k, $s));
            created += 1;
        }};
    }
    macro_rules! start {
        ($now:expr) => {{
            if !busy {
                let lowest_unacked = (0..n).find(|&k| !acked[k]).unwrap_or(n);
                let pick = if !resend.is_empty() {
                    Some(resend.remove(0))
                } else if next_new < n && (!link.tcp || next_new < lowest_unacked + link.window) {
                    next_new += 1;
                    Some(next_new - 1)
                } else {
                    None
                };
                if let Some(seq) = pick {
                    let lost = draw()?;
                    sent += 1;
                    busy = true;
                    push!($now + ser[seq], Kind::Sent { lost }, seq);
                }
            }
        }};
    }

    start!(0.0);
    while let Some(i) = (0..pending.len()).min_by(|&a, &b| {
        pending[a]
            .0
            .total_cmp(&pending[b].0)
            .then(pending[a].1.cmp(&pending[b].1))
    }) {
        let (now, _, kind, seq) = pending.swap_remove(i);
        match kind {
            Kind::Sent { lost } => {
                busy = false;
                if !lost {
                    push!(now + link.latency_s, Kind::Arrived, seq);
                }
                if link.tcp {
                    push!(
                        now + link.rto_multiplier * (2.0 * link.latency_s + ser[seq]),
                        Kind::Timer,
                        seq
                    );
                }
                start!(now);
            }
            Kind::Arrived => {
                if !got[seq] {
                    got[seq] = true;
                    last = Some(now);
                }
                if link.tcp {
                    if got.iter().all(|g| *g) {
                        return Some(RefOutcome {
                            completion_s: Some(now),
                            delivered_packets: got,
                            packets_sent: sent,
                            retries,
                            failed: None,
                        });
                    }
                    push!(now + link.latency_s, Kind::Acked, seq);
                }
            }
            Kind::Acked => {
                acked[seq] = true;
                start!(now);
            }
            Kind::Timer => {
                if acked[seq] || got[seq] {
                    continue;
                }
                if retries[seq] >= link.max_retries {
                    return Some(RefOutcome {
                        completion_s: None,
                        delivered_packets: got,
                        packets_sent: sent,
                        retries,
                        failed: Some(seq),
                    });
                }
                retries[seq] += 1;
                resend.push(seq);
                start!(now);
            }
        }
    }
    Some(RefOutcome {
        completion_s: if link.tcp { None } else { last },
        delivered_packets: got,
        packets_sent: sent,
        retries,
        failed: None,
    })
}
