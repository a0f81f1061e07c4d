use std::fmt;
use std::path::{Path, PathBuf};

use intent_core::data::ChannelSchema;
use intent_core::encoders::{generate_synthetic, SynthParams};
use intent_core::experiments::{sweep_m, RunSummary};
use intent_core::model::forward_sample;
use intent_core::train::{evaluate_model, save_json, split_indices, train, Checkpoint};
use intent_core::{load_dataset, save_dataset, MetricReport, PipelineConfig, SampleRecord};
use serde::Serialize;

use crate::manifest::ManifestBuilder;
use crate::settings::{resolve, ConfigOverrides};
use crate::{Cli, Command, EvalArgs, InspectArgs, Split, SweepArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Core(intent_core::Error),
    Usage(String),
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for argument and validation problems, 3 for io, 4 for numeric divergence.
    pub fn exit_code(&self) -> u8 {
        use intent_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Core(E::Io { .. }) => 3,
            CliError::Core(E::Divergence { .. } | E::NonFinite(_)) => 4,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl From<intent_core::Error> for CliError {
    fn from(e: intent_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

struct Globals {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out_dir: PathBuf,
}

impl Globals {
    fn config(&self, base: &PipelineConfig, overrides: &ConfigOverrides) -> CliResult<PipelineConfig> {
        resolve(base, self.config.as_deref(), overrides, self.seed)
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let globals = Globals {
        seed: cli.seed,
        config: cli.config,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::Synth(args) => synth(&globals, args),
        Command::Train(args) => train_cmd(&globals, args),
        Command::Eval(args) => eval(&globals, args),
        Command::SweepM(args) => sweep(&globals, args),
        Command::Inspect(args) => inspect(&globals, args),
    }
}

fn synth(g: &Globals, args: SynthArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("synth");
    let cfg = g.config(&PipelineConfig::default(), &args.overrides)?;
    let defaults = SynthParams::default();
    let params = SynthParams {
        count: args.count,
        segments: args.segments,
        noise_sigma: args.noise,
        min_segment_len: args.min_segment_len.unwrap_or(defaults.min_segment_len),
        ..defaults
    };
    let records = generate_synthetic(&cfg, &params)?;
    let out = args.out.unwrap_or_else(|| g.out_dir.join("synthetic.jsonl"));
    ensure_parent(&out)?;
    save_dataset(&records, &out)?;
    manifest.output(&out);
    ensure_dir(&g.out_dir)?;
    manifest.finish(&cfg, &g.out_dir)?;
    let positive = records.iter().filter(|r| r.is_positive()).count();
    println!(
        "wrote {} samples ({positive} positive) to {}",
        records.len(),
        out.display()
    );
    Ok(())
}

fn load(path: &Path) -> CliResult<Vec<SampleRecord>> {
    Ok(load_dataset(path)?)
}

fn train_cmd(g: &Globals, args: TrainArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("train");
    let cfg = g.config(&PipelineConfig::default(), &args.overrides)?;
    let data = load(&args.data)?;
    manifest.input(&args.data);
    let out = args.out.unwrap_or_else(|| g.out_dir.clone());
    ensure_dir(&out)?;

    let (params, report) = train(&data, &cfg)?;
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        seed: cfg.seed,
        schema: ChannelSchema::of_dataset(&data)?,
        params,
    };
    let ckpt_path = out.join("checkpoint.json");
    let report_path = out.join("train_report.json");
    checkpoint.save(&ckpt_path)?;
    save_json(&report, &report_path)?;
    manifest.output(&ckpt_path);
    manifest.output(&report_path);
    manifest.finish(&cfg, &out)?;

    println!(
        "trained {} epochs on {} samples ({} held out)",
        cfg.epochs,
        report.train_ids.len(),
        report.val_ids.len()
    );
    if let (Some(first), Some(last)) = (report.epoch_loss.first(), report.epoch_loss.last()) {
        println!("loss {first:.4} -> {last:.4}");
    }
    println!("train  {}", summary_line(&report.final_train));
    if let Some(val) = &report.final_val {
        println!("val    {}", summary_line(val));
    }
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

fn summary_line(r: &MetricReport) -> String {
    let auc = r.auc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
    format!(
        "auc {auc}  acc {:.4}  f1 {:.4}  precision {:.4}  recall {:.4}",
        r.acc, r.f1, r.precision, r.recall
    )
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    data: PathBuf,
    split: &'static str,
    samples: usize,
    metrics: MetricReport,
}

fn eval(g: &Globals, args: EvalArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("eval");
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    manifest.input(&args.checkpoint);
    let cfg = g.config(&checkpoint.config, &args.overrides)?;
    let data = load(&args.data)?;
    manifest.input(&args.data);
    if data.is_empty() {
        return Err(CliError::Usage(format!("{} has no samples", args.data.display())));
    }
    checkpoint
        .params
        .check_compatible(&cfg, &ChannelSchema::of_dataset(&data)?)?;

    let (train_idx, val_idx) = split_indices(data.len(), cfg.val_fraction, cfg.seed);
    let (name, subset): (&'static str, Vec<&SampleRecord>) = match args.split {
        Split::All => ("all", data.iter().collect()),
        Split::Train => ("train", train_idx.iter().map(|&i| &data[i]).collect()),
        Split::Val => ("val", val_idx.iter().map(|&i| &data[i]).collect()),
    };
    if subset.is_empty() {
        return Err(CliError::Usage(format!("the {name} split is empty")));
    }
    let owned: Vec<SampleRecord> = subset.into_iter().cloned().collect();
    let metrics = evaluate_model(&checkpoint.params, &owned, &cfg)?;
    let report = EvalReport {
        checkpoint: args.checkpoint.clone(),
        data: args.data.clone(),
        split: name,
        samples: owned.len(),
        metrics,
    };
    let out = args.out.unwrap_or_else(|| g.out_dir.join("eval.json"));
    ensure_parent(&out)?;
    save_json(&report, &out)?;
    manifest.output(&out);
    ensure_dir(&g.out_dir)?;
    manifest.finish(&cfg, &g.out_dir)?;
    println!("{name} ({} samples)  {}", report.samples, summary_line(&report.metrics));
    Ok(())
}

#[derive(Serialize)]
struct SweepTable {
    data: PathBuf,
    rows: Vec<RunSummary>,
    best_m_by_f1: Option<usize>,
}

fn sweep(g: &Globals, args: SweepArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("sweep-m");
    let cfg = g.config(&PipelineConfig::default(), &args.overrides)?;
    let data = load(&args.data)?;
    manifest.input(&args.data);
    let rows = sweep_m(&data, &cfg, &args.m_list)?;
    let best = rows
        .iter()
        .filter_map(|r| r.val_f1().map(|f| (r.config.clusters, f)))
        .fold(None, |best: Option<(usize, f64)>, (m, f)| match best {
            Some((_, bf)) if bf >= f => best,
            _ => Some((m, f)),
        })
        .map(|(m, _)| m);

    println!(
        "{:>4}  {:>8}  {:>8}  {:>8}  {:>10}",
        "M", "val_f1", "val_auc", "val_acc", "final_loss"
    );
    for r in &rows {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:>4}  {:>8}  {:>8}  {:>8}  {:>10.4}",
            r.config.clusters,
            fmt(r.val_f1()),
            fmt(r.val_auc()),
            fmt(r.val.as_ref().map(|v| v.acc)),
            r.final_loss
        );
    }
    if let Some(m) = best {
        println!("best held-out F1 at M={m}");
    }

    let table = SweepTable {
        data: args.data.clone(),
        rows,
        best_m_by_f1: best,
    };
    let out = args.out.unwrap_or_else(|| g.out_dir.join("sweep.json"));
    ensure_parent(&out)?;
    save_json(&table, &out)?;
    manifest.output(&out);
    ensure_dir(&g.out_dir)?;
    manifest.finish(&cfg, &g.out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct BranchDump<'a> {
    density: Option<&'a intent_core::DensityProfile>,
    events: &'a intent_core::EventSet,
}

#[derive(Serialize)]
struct InspectDump<'a> {
    sample_id: &'a str,
    label: u8,
    planted_segments: Option<&'a Vec<intent_core::data::PlantedSegment>>,
    visual: BranchDump<'a>,
    nonvisual: Option<BranchDump<'a>>,
    trace: &'a intent_core::AttentionTrace,
}

fn inspect(g: &Globals, args: InspectArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("inspect");
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    manifest.input(&args.checkpoint);
    let cfg = g.config(&checkpoint.config, &ConfigOverrides::default())?;
    let data = load(&args.data)?;
    manifest.input(&args.data);
    let sample = data
        .iter()
        .find(|s| s.id == args.sample_id)
        .ok_or_else(|| intent_core::Error::NotFound(format!("sample `{}`", args.sample_id)))?;
    checkpoint.params.check_compatible(&cfg, &sample.schema())?;
    let fwd = forward_sample(&checkpoint.params, sample, &cfg)?;
    let dump = InspectDump {
        sample_id: &sample.id,
        label: sample.label,
        planted_segments: sample.planted_segments.as_ref(),
        visual: BranchDump {
            density: fwd.visual_profile.as_ref(),
            events: &fwd.events_visual,
        },
        nonvisual: fwd.events_nonvisual.as_ref().map(|events| BranchDump {
            density: fwd.nonvisual_profile.as_ref(),
            events,
        }),
        trace: &fwd.trace,
    };
    match &args.out {
        Some(out) => {
            ensure_parent(out)?;
            save_json(&dump, out)?;
            manifest.output(out);
            println!("wrote inspection of `{}` to {}", sample.id, out.display());
        }
        None => {
            let text = serde_json::to_string_pretty(&dump).map_err(intent_core::Error::from)?;
            println!("{text}");
        }
    }
    ensure_dir(&g.out_dir)?;
    manifest.finish(&cfg, &g.out_dir)?;
    Ok(())
}
