use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cutpoint_core::checkpoint::{self, Checkpoint, ModelRecord, SplitCheckpoint, FORMAT_VERSION};
use cutpoint_core::dataset::{Dataset, DatasetSpec};
use cutpoint_core::model::ModelGraph;
use cutpoint_core::netsim::{trace_csv, Protocol};
use cutpoint_core::profile::{render_summary, summary_csv, Profile};
use cutpoint_core::saliency::{cs_csv, cumulative_saliency, CsCurve};
use cutpoint_core::scenario::{
    advise, evaluate_qos, parse_sweep_csv, render_advisory, run_scenario, sweep_csv, trace_frame, Candidate, Mode,
    ProfileSplit, Qos, SweepRow, Workload,
};
use cutpoint_core::splitting::{finetune, make_split, train_bottleneck, SplitPlan};
use cutpoint_core::train::train_toy;
use cutpoint_core::Error;

use crate::config::{invalid, load_profile, ModelSource, RunConfig};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn require_toy(cfg: &RunConfig, command: &str) -> Result<()> {
    match cfg.model {
        ModelSource::Toy => Ok(()),
        ModelSource::Profile { .. } => Err(invalid(format!("`{command}` needs model.kind = \"toy\""))),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint::load_model(path).map_err(|e| invalid(format!("checkpoint {}: {e}", path.display())))
}

/// Model plus regenerated train/test data of a checkpoint.
fn restore(ckpt: &Checkpoint) -> Result<(ModelGraph, Dataset, Dataset)> {
    let model = ckpt.model.to_model()?;
    let (train, test) = ckpt.dataset.generate()?;
    Ok((model, train, test))
}

fn saliency(model: &ModelGraph, test: &Dataset) -> Result<CsCurve> {
    cumulative_saliency(model, test).map_err(|e| match e {
        Error::TooShallow { .. } => invalid(e.to_string()),
        other => other.into(),
    })
}

pub fn train(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    require_toy(cfg, "train")?;
    let out = out.unwrap_or_else(|| cfg.outputs.checkpoint.clone());
    let spec = cfg.dataset_spec();
    let train_cfg = cfg.train_config();
    let run = train_toy(&spec, &train_cfg)?;
    let ckpt = Checkpoint {
        format_version: FORMAT_VERSION,
        dataset: spec,
        epochs: train_cfg.epochs,
        learning_rate: train_cfg.learning_rate,
        seed: cfg.seed,
        test_accuracy: run.test_accuracy,
        model: ModelRecord::from_model(&run.model),
    };
    write_file(&out, &checkpoint::to_json(&ckpt)?)?;
    let last = run.loss_history.last().copied().unwrap_or(f64::NAN);
    println!("final training loss: {last:.6}");
    println!("test accuracy: {:.4}", run.test_accuracy);
    println!("checkpoint: {}", out.display());
    Ok(())
}

pub fn profile(checkpoint_path: &Path, csv_out: Option<PathBuf>) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let (model, _, test) = restore(&ckpt)?;
    let curve = saliency(&model, &test)?;
    let csv = cs_csv(&curve, model.layers())?;
    let layers = model.layers();
    println!("{:<8}{:<16}{:>14}  candidate", "index", "layer", "cs_value");
    for (pos, (&layer, value)) in curve.eligible_layers.iter().zip(&curve.values).enumerate() {
        let mark = if curve.is_candidate(pos) { "*" } else { "" };
        println!("{pos:<8}{:<16}{value:>14.6}  {mark}", layers[layer].name);
    }
    if curve.candidates.is_empty() {
        println!("candidates: none");
    } else {
        let ranked: Vec<String> = curve
            .candidates
            .iter()
            .map(|&p| format!("{p} ({})", layers[curve.eligible_layers[p]].name))
            .collect();
        println!("candidates (highest CS first): {}", ranked.join(", "));
    }
    if let Some(path) = csv_out {
        write_file(&path, &csv)?;
        println!("cs curve: {}", path.display());
    }
    Ok(())
}

pub fn split(
    cfg: &RunConfig,
    checkpoint_path: Option<PathBuf>,
    layer: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    require_toy(cfg, "split")?;
    let path = checkpoint_path.unwrap_or_else(|| cfg.outputs.checkpoint.clone());
    let ckpt = load_checkpoint(&path)?;
    let (model, train, test) = restore(&ckpt)?;
    let eligible = cutpoint_core::saliency::eligible_layers(model.layers());
    let split_index = match layer {
        Some(i) => i,
        None => *saliency(&model, &test)?
            .candidates
            .first()
            .ok_or_else(|| invalid("the CS curve has no candidate; pass --layer"))?,
    };
    let target = *eligible.get(split_index).ok_or_else(|| {
        invalid(format!(
            "split index {split_index} out of range (model has {} eligible layers)",
            eligible.len()
        ))
    })?;
    let mut plan = make_split(&model, target, cfg.bottleneck.compression_rate, cfg.seed)
        .map_err(|e| invalid(format!("split index {split_index}: {e}")))?;
    let out = out.unwrap_or_else(|| cfg.split_checkpoint_path(split_index));

    let history = train_bottleneck(&mut plan, &train, &cfg.bottleneck_config())?;
    let result = finetune(&mut plan, &train, &test, &cfg.finetune_config())?;
    let record = SplitCheckpoint::new(
        &plan,
        ckpt.dataset,
        result.accuracy,
        ckpt.test_accuracy,
        result.reconstruction_distance,
    );
    write_file(&out, &checkpoint::to_json(&record)?)?;
    println!(
        "split index {split_index} ({}), latent {:?}, payload {} bytes",
        model.layers()[target].name,
        plan.bottleneck.latent_shape(),
        plan.payload_bytes()
    );
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("bottleneck loss: {first:.6} -> {last:.6}");
    }
    println!("unsplit accuracy: {:.4}", ckpt.test_accuracy);
    println!("split accuracy: {:.4}", result.accuracy);
    println!("reconstruction distance: {:.6}", result.reconstruction_distance);
    println!("split checkpoint: {}", out.display());
    Ok(())
}

/// One deployment evaluated over the sweep grid.
struct Deployment {
    mode: Mode,
    split_index: Option<usize>,
    plan: Option<SplitPlan>,
    table_accuracy: f64,
}

impl Deployment {
    fn label(&self, protocol: Protocol) -> String {
        match self.split_index {
            Some(i) => format!("{} split {i} {protocol}", self.mode),
            None => format!("{} {protocol}", self.mode),
        }
    }
}

fn table_accuracy(cfg: &RunConfig, key: &str) -> Result<f64> {
    cfg.scenario
        .accuracy_table
        .get(key)
        .copied()
        .ok_or_else(|| invalid(format!("profile runs need scenario.accuracy_table.{key}")))
}

enum Source {
    Toy {
        model: ModelGraph,
        test: Dataset,
        dataset: DatasetSpec,
    },
    Profile(Profile),
}

fn deployments(cfg: &RunConfig, checkpoint_path: Option<PathBuf>) -> Result<(Source, Vec<Deployment>)> {
    let profile = cfg.profile()?;
    let source = match profile {
        Some(p) => Source::Profile(p),
        None => {
            let path = checkpoint_path.unwrap_or_else(|| cfg.outputs.checkpoint.clone());
            let ckpt = load_checkpoint(&path)?;
            let (model, _, test) = restore(&ckpt)?;
            Source::Toy {
                model,
                test,
                dataset: ckpt.dataset,
            }
        }
    };
    let mut out = Vec::new();
    for &mode in &cfg.scenario.modes {
        if mode != Mode::Sc {
            let table_accuracy = match source {
                Source::Profile(_) => table_accuracy(cfg, "full")?,
                Source::Toy { .. } => 0.0,
            };
            out.push(Deployment {
                mode,
                split_index: None,
                plan: None,
                table_accuracy,
            });
            continue;
        }
        let candidates = match (&cfg.scenario.candidates, &source) {
            (Some(c), _) => c.clone(),
            (None, Source::Toy { model, test, .. }) => saliency(model, test)?.candidates,
            (None, Source::Profile(_)) => return Err(invalid("SC profile runs need scenario.candidates")),
        };
        if candidates.is_empty() {
            return Err(invalid("SC mode has no candidate split points"));
        }
        for idx in candidates {
            let (plan, table_accuracy) = match &source {
                Source::Profile(p) => {
                    p.split_layer(idx).map_err(|e| invalid(e.to_string()))?;
                    (None, table_accuracy(cfg, &idx.to_string())?)
                }
                Source::Toy { model, dataset, .. } => {
                    let path = cfg.split_checkpoint_path(idx);
                    let record = checkpoint::load_split(&path).map_err(|e| {
                        invalid(format!(
                            "split checkpoint {}: {e} (run `cutpoint split --layer {idx}` first)",
                            path.display()
                        ))
                    })?;
                    // Fine-tuning changes every weight, so only the
                    // architecture, split point and data can be compared.
                    let plan = record.plan()?;
                    let base = plan.unsplit()?;
                    if record.dataset != *dataset
                        || plan.bottleneck.split_index != idx
                        || base.layers() != model.layers()
                        || base.input_shape() != model.input_shape()
                    {
                        return Err(invalid(format!(
                            "split checkpoint {} was not built from this model",
                            path.display()
                        )));
                    }
                    (Some(plan), 0.0)
                }
            };
            out.push(Deployment {
                mode,
                split_index: Some(idx),
                plan,
                table_accuracy,
            });
        }
    }
    Ok((source, out))
}

pub fn simulate(
    cfg: &RunConfig,
    checkpoint_path: Option<PathBuf>,
    csv_out: Option<PathBuf>,
    trace_dir: Option<PathBuf>,
) -> Result<()> {
    let (source, deployments) = deployments(cfg, checkpoint_path)?;
    let grid = cfg.loss_rates();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for d in &deployments {
        let workload = match &source {
            Source::Toy { model, test, .. } => Workload::Model {
                model,
                plan: d.plan.as_ref(),
                test,
            },
            Source::Profile(profile) => Workload::Profile {
                profile,
                split: match d.split_index {
                    Some(i) => Some(ProfileSplit {
                        layer: profile.split_layer(i)?,
                        compression_rate: cfg.bottleneck.compression_rate,
                    }),
                    None => None,
                },
                accuracy: d.table_accuracy,
            },
        };
        for &protocol in &cfg.network.protocols {
            for &p in &grid {
                let mut sc = cfg.scenario_config(d.mode, protocol);
                sc.channel.loss_rate = p;
                let report = run_scenario(&sc, &workload)?;
                rows.push((d.label(protocol), SweepRow::from(&report)));
                if trace_dir.is_some() && d.mode != Mode::Lc {
                    let name = format!(
                        "trace_{}_{}_{}_{}.csv",
                        d.mode,
                        d.split_index.map_or("none".to_string(), |i| i.to_string()),
                        protocol,
                        p
                    );
                    traces.push((name, trace_csv(&trace_frame(&sc, &workload, 0)?)?));
                }
            }
        }
    }

    let csv = sweep_csv(&rows.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())?;
    let csv_out = csv_out.or_else(|| cfg.outputs.sweep_csv.clone());
    match &csv_out {
        Some(path) => write_file(path, &csv)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    if let Some(dir) = &trace_dir {
        for (name, text) in &traces {
            write_file(&dir.join(name), text)?;
        }
    }

    let advisory = render_advisory(&advise(&worst_points(&rows, &cfg.qos), &cfg.qos)?);
    if csv_out.is_some() {
        print!("{advisory}");
    } else {
        eprint!("{advisory}");
    }
    Ok(())
}

/// Each labelled deployment represented by its lowest-margin grid point.
fn worst_points(rows: &[(String, SweepRow)], qos: &Qos) -> Vec<Candidate> {
    let mut worst: BTreeMap<&str, &SweepRow> = BTreeMap::new();
    for (label, row) in rows {
        let entry = worst.entry(label).or_insert(row);
        if evaluate_qos(row, qos).margin < evaluate_qos(entry, qos).margin {
            *entry = row;
        }
    }
    worst
        .into_iter()
        .map(|(label, row)| Candidate {
            label: label.to_string(),
            outcome: row.clone(),
        })
        .collect()
}

pub fn advise_from_csv(path: &Path, qos: Qos, loss_rate: Option<f64>) -> Result<()> {
    qos.validate().map_err(|e| invalid(e.to_string()))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = parse_sweep_csv(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let labelled: Vec<(String, SweepRow)> = rows
        .into_iter()
        .filter(|r| loss_rate.is_none_or(|p| r.loss_rate == p))
        .map(|r| {
            let label = match r.split_layer {
                Some(i) => format!("{} split {i} {}", r.mode, r.protocol),
                None => format!("{} {}", r.mode, r.protocol),
            };
            (label, r)
        })
        .collect();
    if labelled.is_empty() {
        return Err(invalid("no sweep rows match"));
    }
    print!("{}", render_advisory(&advise(&worst_points(&labelled, &qos), &qos)?));
    Ok(())
}

pub fn summary(profile_path: Option<PathBuf>, batch: usize, csv: bool) -> Result<()> {
    if batch == 0 {
        return Err(invalid("--batch must be at least 1"));
    }
    let profile = match profile_path {
        Some(p) => load_profile(&p)?,
        None => Profile::vgg16(),
    };
    let text = if csv {
        summary_csv(&profile, batch)?
    } else {
        render_summary(&profile, batch)?
    };
    print!("{text}");
    Ok(())
}
