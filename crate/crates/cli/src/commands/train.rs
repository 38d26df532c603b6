//! `train`: fit the encoder for one localization stage and write the final
//! and best-by-validation checkpoints plus the step/validation logs.

use std::path::PathBuf;
use std::time::Instant;

use tripletloc_core::{
    subsample_dataset, train, LossKind, LossParams, LossSpec, MiningConfig, MiningStage,
    TrainConfig, WeightShape,
};

use crate::checkpoint::save_checkpoint;
use crate::config::{Resolver, Sections};
use crate::dataset::{load_dataset, split_records};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::seeds::sub_seed;

use super::gen_synth::parse_grid;

pub const FINAL_CHECKPOINT: &str = "checkpoint.mloc";
pub const BEST_CHECKPOINT: &str = "best.mloc";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const VALIDATION_LOG: &str = "validation.csv";

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Dataset directory (as written by gen-synth, or hand-assembled).
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Which localization stage to train: coarse (room triplets) or fine
    /// (metric triplets).
    #[arg(long)]
    pub stage: String,
    /// Run directory for checkpoints, logs, and the run manifest.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub loss: LossFlags,
    /// Triplets per optimization step [default: 4].
    #[arg(long)]
    pub n: Option<usize>,
    /// Total triplets over the run [default: 50000].
    #[arg(long)]
    pub triplets: Option<usize>,
    /// SGD learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer widths, comma-separated [default: 256,64].
    #[arg(long)]
    pub hidden: Option<String>,
    /// Descriptor dimension [default: 64].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Pooling grid ROWSxCOLS for raster inputs [default: 16x64].
    #[arg(long)]
    pub grid: Option<String>,
    /// Hit distance for the fine-stage validation metric, in meters
    /// [default: 0.5].
    #[arg(long)]
    pub d: Option<f64>,
    /// Master seed; initialization, mining, and subsampling use sub-seeds
    /// derived from it [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset split to train on [default: train].
    #[arg(long)]
    pub split: Option<String>,
    /// Validation split, or "none" [default: the reference condition's test
    /// split, when present].
    #[arg(long)]
    pub val: Option<String>,
    /// Train on a seeded room-stratified subsample of this many records.
    #[arg(long = "train-size")]
    pub train_size: Option<usize>,
    /// Fine mining: maximum anchor-positive distance in meters [default: 0.4].
    #[arg(long = "r-plus")]
    pub r_plus: Option<f64>,
    /// Fine mining: minimum anchor-negative distance in meters [default: 0.4].
    #[arg(long = "r-minus")]
    pub r_minus: Option<f64>,
}

/// The flags selecting and parameterizing the training loss.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct LossFlags {
    /// Loss: TL, LE, LT, SH, BH, CL, AL, CV_TL_LT, CV_TL_BH, CV_LT_BH
    /// [default: CV_TL_BH for coarse, CV_TL_LT for fine].
    #[arg(long)]
    pub loss: Option<String>,
    /// Margin for single losses [default: 0.5].
    #[arg(long)]
    pub m: Option<f64>,
    /// First-component margin for curriculum losses [default: per loss].
    #[arg(long)]
    pub m1: Option<f64>,
    /// Second-component margin for curriculum losses [default: per loss].
    #[arg(long)]
    pub m2: Option<f64>,
    /// Exponent scale for the CL loss (required with --loss CL).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Cone angle in degrees for the AL loss (required with --loss AL).
    #[arg(long)]
    pub angle: Option<f64>,
    /// Curriculum weight schedule: linear or cosine [default: linear].
    #[arg(long)]
    pub schedule: Option<String>,
}

/// Canonical margins per curriculum kind — the best-performing
/// configurations for each combination.
fn default_margins(kind: LossKind) -> (f64, f64) {
    match kind {
        LossKind::CurriculumTlBh => (0.75, 1.0),
        LossKind::CurriculumLtBh => (0.5, 1.0),
        _ => (0.5, 0.5),
    }
}

/// Build the loss from flags/config, demanding kind-specific parameters.
pub fn resolve_loss(r: &Resolver<'_>, stage: MiningStage, flags: &LossFlags) -> Result<LossSpec> {
    let default_kind = match stage {
        MiningStage::Coarse => "CV_TL_BH",
        MiningStage::Fine => "CV_TL_LT",
    };
    let kind_raw = r.get(flags.loss.clone(), "loss", default_kind.to_string())?;
    let kind = LossKind::parse(&kind_raw).ok_or_else(|| {
        let known: Vec<&str> = LossKind::ALL.iter().map(|k| k.name()).collect();
        CliError::invalid(format!(
            "--loss: unknown loss {kind_raw:?}; known: {}",
            known.join(", ")
        ))
    })?;
    let schedule_raw = r.get(flags.schedule.clone(), "schedule", "linear".to_string())?;
    let schedule = WeightShape::parse(&schedule_raw).ok_or_else(|| {
        CliError::invalid(format!(
            "--schedule must be linear or cosine, got {schedule_raw:?}"
        ))
    })?;

    let spec = if kind.is_curriculum() {
        let (d1, d2) = default_margins(kind);
        let m1 = r.get(flags.m1, "m1", d1)?;
        let m2 = r.get(flags.m2, "m2", d2)?;
        let mut s = LossSpec::curriculum(
            kind,
            LossParams::with_margin(m1),
            LossParams::with_margin(m2),
        );
        s.schedule = schedule;
        s
    } else {
        let margin = r.get(flags.m, "m", 0.5)?;
        let params = match kind {
            LossKind::Circle => {
                let gamma = r.get_opt(flags.gamma, "gamma")?.ok_or_else(|| {
                    CliError::invalid("--loss CL requires --gamma")
                })?;
                LossParams::circle(margin, gamma)
            }
            LossKind::Angular => {
                let angle = r.get_opt(flags.angle, "angle")?.ok_or_else(|| {
                    CliError::invalid("--loss AL requires --angle")
                })?;
                LossParams::angular(angle)
            }
            _ => LossParams::with_margin(margin),
        };
        let mut s = LossSpec::base(kind, params);
        s.schedule = schedule;
        s
    };
    spec.validate().map_err(|e| CliError::invalid(format!("loss configuration: {e}")))?;
    Ok(spec)
}

pub fn parse_stage(raw: &str) -> Result<MiningStage> {
    match raw {
        "coarse" => Ok(MiningStage::Coarse),
        "fine" => Ok(MiningStage::Fine),
        other => Err(CliError::invalid(format!(
            "--stage must be coarse or fine, got {other:?}"
        ))),
    }
}

pub fn parse_hidden(raw: &str) -> Result<Vec<usize>> {
    let bad =
        || CliError::invalid(format!("--hidden must be comma-separated widths, got {raw:?}"));
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
        .collect()
}

fn loss_summary(spec: &LossSpec) -> String {
    let mut out = format!("{}", spec.kind);
    match &spec.params2 {
        Some(p2) => {
            out.push_str(&format!(
                " (m1={}, m2={}, {})",
                spec.params1.margin,
                p2.margin,
                spec.schedule.name()
            ));
        }
        None => {
            out.push_str(&format!(" (m={}", spec.params1.margin));
            if let Some(g) = spec.params1.scale {
                out.push_str(&format!(", gamma={g}"));
            }
            if let Some(a) = spec.params1.angle_deg {
                out.push_str(&format!(", angle={a}"));
            }
            out.push(')');
        }
    }
    out
}

pub fn run(args: &TrainArgs, cfg: Option<&Sections>) -> Result<()> {
    let r = Resolver::new(cfg, "train");
    let stage = parse_stage(&args.stage)?;
    let loss = resolve_loss(&r, stage, &args.loss)?;

    let n = r.get(args.n, "n", 4)?;
    let triplets = r.get(args.triplets, "triplets", 50_000)?;
    let lr = r.get(args.lr, "lr", 0.001)?;
    let hidden = parse_hidden(&r.get(args.hidden.clone(), "hidden", "256,64".to_string())?)?;
    let dim = r.get(args.dim, "dim", 64)?;
    let grid = parse_grid(&r.get(args.grid.clone(), "grid", "16x64".to_string())?, "--grid")?;
    let d = r.get(args.d, "d", 0.5)?;
    let seed = r.get(args.seed, "seed", 0)?;
    let split_name = r.get(args.split.clone(), "split", "train".to_string())?;
    let val_name = r.get_opt(args.val.clone(), "val")?;
    let train_size = r.get_opt(args.train_size, "train_size")?;
    let r_plus = r.get(args.r_plus, "r_plus", 0.4)?;
    let r_minus = r.get(args.r_minus, "r_minus", 0.4)?;

    let config = TrainConfig {
        learning_rate: lr,
        batch_size: n,
        total_triplets: triplets,
        seed: sub_seed(seed, "init"),
        loss: loss.clone(),
        hidden: hidden.clone(),
        descriptor_dim: dim,
        grid,
        validation_distance: d,
    };
    config.validate().map_err(|e| CliError::invalid(format!("{e}")))?;
    let mining = MiningConfig {
        r_plus,
        r_minus,
        stage,
        seed: sub_seed(seed, "mining"),
        ..MiningConfig::default()
    };
    mining.validate().map_err(|e| CliError::invalid(format!("{e}")))?;

    let (records, dataset_manifest) = load_dataset(&args.dataset)?;
    let mut train_records = split_records(&records, &dataset_manifest, &split_name)?;
    if let Some(size) = train_size {
        train_records = subsample_dataset(&train_records, size, sub_seed(seed, "subsample"))
            .map_err(|e| CliError::invalid(format!("--train-size: {e}")))?;
    }

    // Validation defaults to the reference condition's held-out test split.
    let validation = match val_name.as_deref() {
        Some("none") => None,
        Some(name) => {
            let rows = split_records(&records, &dataset_manifest, name)?;
            if rows.len() < 2 {
                return Err(CliError::invalid(format!(
                    "--val {name}: needs at least two records, found {}",
                    rows.len()
                )));
            }
            Some(rows)
        }
        None => dataset_manifest
            .reference_condition()
            .map(|c| format!("test:{c}"))
            .and_then(|name| {
                dataset_manifest
                    .split(&name)
                    .filter(|ids| ids.len() >= 2)
                    .map(|_| split_records(&records, &dataset_manifest, &name))
            })
            .transpose()?,
    };
    let val_label = match (&val_name, &validation) {
        (Some(name), _) if name != "none" => name.clone(),
        (None, Some(_)) => format!(
            "test:{}",
            dataset_manifest.reference_condition().unwrap_or_default()
        ),
        _ => "none".to_string(),
    };

    // The manifest goes to disk before the long training run starts.
    let mut manifest = RunManifest::new("train");
    manifest.set("seeds", "seed", seed);
    manifest.set("seeds", "init", sub_seed(seed, "init"));
    manifest.set("seeds", "mining", sub_seed(seed, "mining"));
    if train_size.is_some() {
        manifest.set("seeds", "subsample", sub_seed(seed, "subsample"));
    }
    manifest.set("train", "dataset", args.dataset.display());
    manifest.set("train", "stage", &args.stage);
    manifest.set("train", "split", &split_name);
    manifest.set("train", "val", &val_label);
    if let Some(size) = train_size {
        manifest.set("train", "train_size", size);
    }
    manifest.set("train", "loss", loss.kind.name());
    match &loss.params2 {
        Some(p2) => {
            manifest.set("train", "m1", loss.params1.margin);
            manifest.set("train", "m2", p2.margin);
        }
        None => {
            manifest.set("train", "m", loss.params1.margin);
            if let Some(g) = loss.params1.scale {
                manifest.set("train", "gamma", g);
            }
            if let Some(a) = loss.params1.angle_deg {
                manifest.set("train", "angle", a);
            }
        }
    }
    manifest.set("train", "schedule", loss.schedule.name());
    manifest.set("train", "n", n);
    manifest.set("train", "triplets", triplets);
    manifest.set("train", "lr", lr);
    manifest.set(
        "train",
        "hidden",
        hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
    );
    manifest.set("train", "dim", dim);
    manifest.set("train", "grid", format!("{}x{}", grid.0, grid.1));
    manifest.set("train", "d", d);
    manifest.set("train", "r_plus", r_plus);
    manifest.set("train", "r_minus", r_minus);
    manifest.set("outputs", "checkpoint", FINAL_CHECKPOINT);
    manifest.set("outputs", "best", BEST_CHECKPOINT);
    manifest.set("outputs", "train_log", TRAIN_LOG);
    manifest.set("outputs", "validation_log", VALIDATION_LOG);
    manifest.write(&args.out)?;

    let started = Instant::now();
    let result = train(&train_records, &mining, &config, validation.as_deref())
        .map_err(|e| CliError::invalid(format!("training failed: {e}")))?;
    let elapsed = started.elapsed();

    save_checkpoint(&args.out.join(FINAL_CHECKPOINT), &result.params)?;
    let best = result.best_params.as_ref().unwrap_or(&result.params);
    save_checkpoint(&args.out.join(BEST_CHECKPOINT), best)?;

    let log_path = args.out.join(TRAIN_LOG);
    let mut w = csv::Writer::from_path(&log_path)
        .map_err(|e| CliError::io(format!("{}: {e}", log_path.display())))?;
    let csv_err = |e: csv::Error| CliError::io(format!("{}: {e}", log_path.display()));
    w.write_record(["step", "w", "loss"]).map_err(csv_err)?;
    for rec in &result.log.steps {
        w.write_record([rec.step.to_string(), rec.w.to_string(), rec.loss.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io_at(&log_path, e))?;

    let val_path = args.out.join(VALIDATION_LOG);
    let mut w = csv::Writer::from_path(&val_path)
        .map_err(|e| CliError::io(format!("{}: {e}", val_path.display())))?;
    let csv_err = |e: csv::Error| CliError::io(format!("{}: {e}", val_path.display()));
    w.write_record(["step", "metric"]).map_err(csv_err)?;
    for rec in &result.log.validations {
        w.write_record([rec.step.to_string(), rec.metric.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io_at(&val_path, e))?;

    let final_loss = result.log.steps.last().map(|s| s.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} stage on {} records: {} steps, loss {} -> {}, in {:.1}s",
        args.stage,
        train_records.len(),
        result.log.steps.len(),
        loss_summary(&loss),
        final_loss,
        elapsed.as_secs_f64()
    );
    match &result.best_validation {
        Some(best) => println!(
            "best validation metric {} at step {} (checkpoints: {FINAL_CHECKPOINT}, {BEST_CHECKPOINT})",
            best.metric, best.step
        ),
        None => println!("no validation split used (checkpoints: {FINAL_CHECKPOINT}, {BEST_CHECKPOINT})"),
    }
    Ok(())
}
