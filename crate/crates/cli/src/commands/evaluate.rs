//! `evaluate`: build the visual map from one split, localize another split
//! against it (optionally under a perturbation), and write the metrics
//! summary plus a per-query breakdown.

use std::path::PathBuf;

use tripletloc_core::{
    build_visual_map, evaluate, room_representatives, EvalContext, EvalMode, Metric,
    RetrievalConfig,
};

use crate::checkpoint::load_checkpoint;
use crate::config::{Resolver, Sections};
use crate::dataset::{load_dataset, split_records};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::seeds::sub_seed;

use super::effect_flags::{perturb_records, resolve_effect, EffectFlags, StartChoice};
use super::gen_synth::parse_grid;

pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_QUERY_FILE: &str = "per_query.csv";
pub const PER_QUERY_HEADER: [&str; 11] = [
    "query_id",
    "true_room",
    "pred_room_1",
    "conf_1",
    "pred_room_2",
    "conf_2",
    "retrieved_id",
    "est_x",
    "est_y",
    "err_m",
    "hit_at_d",
];

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Run directory for metrics, per-query results, and the run manifest.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Localization mode: hierarchical (coarse room stage, then fine within
    /// the forwarded rooms) or single-step (fine over the whole map)
    /// [default: hierarchical].
    #[arg(long)]
    pub mode: Option<String>,
    /// Coarse-stage encoder checkpoint (required for hierarchical mode).
    #[arg(long, value_name = "FILE")]
    pub coarse: Option<PathBuf>,
    /// Fine-stage encoder checkpoint.
    #[arg(long, value_name = "FILE")]
    pub fine: Option<PathBuf>,
    /// Split providing the visual map [default: train].
    #[arg(long)]
    pub map: Option<String>,
    /// Split providing the queries, e.g. test:night.
    #[arg(long)]
    pub queries: Option<String>,
    /// Hit distance threshold in meters [default: 0.5].
    #[arg(long)]
    pub d: Option<f64>,
    /// Forward the runner-up room when the top confidence is below this
    /// [default: 0.5].
    #[arg(long)]
    pub h1: Option<f64>,
    /// ... and the runner-up confidence is above this [default: 0.1].
    #[arg(long)]
    pub h2: Option<f64>,
    /// Softmax temperature for room confidences [default: 0.1].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Descriptor metric: euclidean or cosine [default: euclidean].
    #[arg(long)]
    pub metric: Option<String>,
    /// Pooling grid ROWSxCOLS for raster inputs; must match training
    /// [default: 16x64].
    #[arg(long)]
    pub grid: Option<String>,
    #[command(flatten)]
    pub effect: EffectFlags,
    /// Also apply occlusion/blur to the map images (noise always perturbs
    /// both map and queries).
    #[arg(long = "perturb-map")]
    pub perturb_map: bool,
    /// Free-form label recorded in the manifest (e.g. the loss name), shown
    /// by `report`.
    #[arg(long)]
    pub label: Option<String>,
    /// Master seed for effect randomness [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &EvaluateArgs, cfg: Option<&Sections>) -> Result<()> {
    let r = Resolver::new(cfg, "evaluate");

    let mode_raw = r.get(args.mode.clone(), "mode", "hierarchical".to_string())?;
    let mode = EvalMode::parse(&mode_raw).ok_or_else(|| {
        CliError::invalid(format!(
            "--mode must be hierarchical or single-step, got {mode_raw:?}"
        ))
    })?;
    let fine_path = r
        .get_opt(args.fine.clone(), "fine")?
        .ok_or_else(|| CliError::invalid("--fine checkpoint is required"))?;
    let coarse_path = r.get_opt(args.coarse.clone(), "coarse")?;
    if mode == EvalMode::Hierarchical && coarse_path.is_none() {
        return Err(CliError::invalid(
            "--coarse checkpoint is required in hierarchical mode",
        ));
    }
    let map_name = r.get(args.map.clone(), "map", "train".to_string())?;
    let query_name = r
        .get_opt(args.queries.clone(), "queries")?
        .ok_or_else(|| CliError::invalid("--queries split is required"))?;
    let d = r.get(args.d, "d", 0.5)?;
    if !(d.is_finite() && d > 0.0) {
        return Err(CliError::invalid("--d must be positive"));
    }
    let defaults = RetrievalConfig::default();
    let metric_raw = r.get(args.metric.clone(), "metric", "euclidean".to_string())?;
    let retrieval = RetrievalConfig {
        h1: r.get(args.h1, "h1", defaults.h1)?,
        h2: r.get(args.h2, "h2", defaults.h2)?,
        tau: r.get(args.tau, "tau", defaults.tau)?,
        metric: Metric::parse(&metric_raw).ok_or_else(|| {
            CliError::invalid(format!(
                "--metric must be euclidean or cosine, got {metric_raw:?}"
            ))
        })?,
    };
    retrieval.validate().map_err(|e| CliError::invalid(format!("{e}")))?;
    let grid = parse_grid(&r.get(args.grid.clone(), "grid", "16x64".to_string())?, "--grid")?;
    let seed = r.get(args.seed, "seed", 0)?;
    let effect = resolve_effect(&args.effect, &r)?;
    let label = r.get(args.label.clone(), "label", "-".to_string())?;

    let fine_params = load_checkpoint(&fine_path)?;
    let coarse_params = coarse_path.as_ref().map(|p| load_checkpoint(p)).transpose()?;

    let (records, dataset_manifest) = load_dataset(&args.dataset)?;
    let mut map_records = split_records(&records, &dataset_manifest, &map_name)?;
    let mut query_records = split_records(&records, &dataset_manifest, &query_name)?;
    if query_records.is_empty() {
        return Err(CliError::invalid(format!("--queries {query_name}: split is empty")));
    }

    let map_seed = sub_seed(seed, "effect-map");
    let query_seed = sub_seed(seed, "effect-query");
    let map_perturbed = match &effect {
        Some(e) => e.map_is_perturbed_by_default() || args.perturb_map,
        None => false,
    };
    if let Some(e) = &effect {
        if map_perturbed {
            perturb_records(&mut map_records, e, map_seed)?;
        }
        perturb_records(&mut query_records, e, query_seed)?;
    }

    // Resolved settings and seeds go to disk before the heavy encoding work.
    let mut manifest = RunManifest::new("evaluate");
    manifest.set("seeds", "seed", seed);
    manifest.set("seeds", "effect-map", map_seed);
    manifest.set("seeds", "effect-query", query_seed);
    manifest.set("evaluate", "dataset", args.dataset.display());
    manifest.set("evaluate", "mode", mode.name());
    if let Some(p) = &coarse_path {
        manifest.set("evaluate", "coarse", p.display());
    }
    manifest.set("evaluate", "fine", fine_path.display());
    manifest.set("evaluate", "map", &map_name);
    manifest.set("evaluate", "queries", &query_name);
    manifest.set("evaluate", "d", d);
    manifest.set("evaluate", "h1", retrieval.h1);
    manifest.set("evaluate", "h2", retrieval.h2);
    manifest.set("evaluate", "tau", retrieval.tau);
    manifest.set("evaluate", "metric", retrieval.metric.name());
    manifest.set("evaluate", "grid", format!("{}x{}", grid.0, grid.1));
    manifest.set("evaluate", "label", &label);
    match &effect {
        None => manifest.set("effect", "kind", "none"),
        Some(e) => {
            manifest.set("effect", "kind", e.kind());
            match e {
                super::effect_flags::ResolvedEffect::Noise { sigma } => {
                    manifest.set("effect", "sigma", sigma);
                }
                super::effect_flags::ResolvedEffect::Occlusion { columns, start } => {
                    manifest.set("effect", "columns", columns);
                    manifest.set(
                        "effect",
                        "start",
                        match start {
                            StartChoice::Column(c) => c.to_string(),
                            StartChoice::Random => "random".to_string(),
                        },
                    );
                }
                super::effect_flags::ResolvedEffect::Blur { kernel } => {
                    manifest.set("effect", "kernel", kernel);
                }
            }
            manifest.set("effect", "level", e.level());
            manifest.set("effect", "perturb_map", map_perturbed);
        }
    }
    manifest.set("outputs", "metrics", METRICS_FILE);
    manifest.set("outputs", "per_query", PER_QUERY_FILE);
    manifest.write(&args.out)?;

    let to_invalid = |e: tripletloc_core::RetrievalError| CliError::invalid(format!("{e}"));
    let fine_map = build_visual_map(&map_records, &fine_params, grid).map_err(to_invalid)?;
    let (coarse_map, reps);
    match &coarse_params {
        Some(cp) => {
            coarse_map = Some(build_visual_map(&map_records, cp, grid).map_err(to_invalid)?);
            reps = coarse_map.as_ref().map(room_representatives);
        }
        None => reps = None,
    }

    let ctx = EvalContext {
        fine_map: &fine_map,
        reps: reps.as_ref(),
        coarse_params: coarse_params.as_ref(),
        fine_params: &fine_params,
        grid,
        cfg: retrieval,
        distance_threshold: d,
        mode,
    };
    let evaluation = evaluate(&query_records, &ctx).map_err(to_invalid)?;

    let metrics_path = args.out.join(METRICS_FILE);
    let mut w = csv::Writer::from_path(&metrics_path)
        .map_err(|e| CliError::io(format!("{}: {e}", metrics_path.display())))?;
    let csv_err = |e: csv::Error| CliError::io(format!("{}: {e}", metrics_path.display()));
    w.write_record(["metric", "value"]).map_err(csv_err)?;
    w.write_record(["room_accuracy", &evaluation.room_accuracy.to_string()])
        .map_err(csv_err)?;
    w.write_record(["recall_at_1", &evaluation.recall_at_1.to_string()]).map_err(csv_err)?;
    w.write_record(["queries", &evaluation.outcomes.len().to_string()]).map_err(csv_err)?;
    w.flush().map_err(|e| CliError::io_at(&metrics_path, e))?;

    let pq_path = args.out.join(PER_QUERY_FILE);
    let mut w = csv::Writer::from_path(&pq_path)
        .map_err(|e| CliError::io(format!("{}: {e}", pq_path.display())))?;
    let csv_err = |e: csv::Error| CliError::io(format!("{}: {e}", pq_path.display()));
    w.write_record(PER_QUERY_HEADER).map_err(csv_err)?;
    for o in &evaluation.outcomes {
        let rooms = &o.result.rooms;
        let (room2, conf2) = match rooms.get(1) {
            Some(p) => (p.room.clone(), p.confidence.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            o.query_id.clone(),
            o.true_room.clone(),
            rooms.first().map(|p| p.room.clone()).unwrap_or_default(),
            rooms.first().map(|p| p.confidence.to_string()).unwrap_or_default(),
            room2,
            conf2,
            o.result.retrieved_id.clone(),
            o.result.estimated_pose.x.to_string(),
            o.result.estimated_pose.y.to_string(),
            o.position_error.to_string(),
            if o.hit { "1".to_string() } else { "0".to_string() },
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io_at(&pq_path, e))?;

    println!(
        "evaluated {} queries ({} mode) against {} map entries",
        evaluation.outcomes.len(),
        mode.name(),
        fine_map.len()
    );
    match &effect {
        Some(e) => println!(
            "effect: {} level {} (map perturbed: {map_perturbed})",
            e.kind(),
            e.level()
        ),
        None => println!("effect: none"),
    }
    println!("room_accuracy = {}", evaluation.room_accuracy);
    println!("recall_at_1 = {}", evaluation.recall_at_1);
    Ok(())
}
