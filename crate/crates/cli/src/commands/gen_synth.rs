//! `gen-synth`: generate a seeded synthetic multi-room dataset on disk,
//! already carved into a training split and per-condition test splits.

use std::path::PathBuf;

use tripletloc_core::{generate_synthetic, split_dataset, SplitConfig, SynthSpec};

use crate::config::{Item, Resolver, Sections};
use crate::dataset::save_dataset;
use crate::error::{CliError, Result};
use crate::seeds::sub_seed;

#[derive(Debug, clap::Args)]
pub struct GenSynthArgs {
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of rooms [default: 8].
    #[arg(long)]
    pub rooms: Option<usize>,
    /// Images per room and condition [default: 50].
    #[arg(long = "per-room")]
    pub per_room: Option<usize>,
    /// Room side length in meters [default: 4].
    #[arg(long = "room-size")]
    pub room_size: Option<f64>,
    /// Latent feature dimension; even, at least 8 [default: 32].
    #[arg(long = "feature-dim")]
    pub feature_dim: Option<usize>,
    /// Per-image appearance noise [default: 0.15].
    #[arg(long)]
    pub noise: Option<f64>,
    /// Magnitude of the per-condition appearance offset [default: 6].
    #[arg(long)]
    pub shift: Option<f64>,
    /// Comma-separated condition labels; the first is the reference
    /// [default: day,night].
    #[arg(long)]
    pub conditions: Option<String>,
    /// Render rasters of this ROWSxCOLS shape instead of writing feature
    /// vectors, e.g. 16x64; "none" keeps the dataset feature-only
    /// [default: none].
    #[arg(long)]
    pub render: Option<String>,
    /// Fraction of the reference condition drawn into the training split
    /// [default: 0.5].
    #[arg(long = "train-fraction")]
    pub train_fraction: Option<f64>,
    /// Master seed; generation and splitting use sub-seeds derived from it
    /// [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn parse_grid(raw: &str, flag: &str) -> Result<(usize, usize)> {
    let bad = || CliError::invalid(format!("{flag} must look like ROWSxCOLS, got {raw:?}"));
    let (r, c) = raw.split_once('x').ok_or_else(bad)?;
    let rows: usize = r.trim().parse().map_err(|_| bad())?;
    let cols: usize = c.trim().parse().map_err(|_| bad())?;
    if rows == 0 || cols == 0 {
        return Err(CliError::invalid(format!("{flag} dimensions must be nonzero")));
    }
    Ok((rows, cols))
}

pub fn run(args: &GenSynthArgs, cfg: Option<&Sections>) -> Result<()> {
    let r = Resolver::new(cfg, "gen-synth");
    let defaults = SynthSpec::default();

    let rooms = r.get(args.rooms, "rooms", defaults.rooms)?;
    if rooms == 0 {
        return Err(CliError::invalid("--rooms must be at least 1"));
    }
    let per_room = r.get(args.per_room, "per_room", defaults.images_per_room)?;
    if per_room == 0 {
        return Err(CliError::invalid("--per-room must be at least 1"));
    }
    let room_size = r.get(args.room_size, "room_size", defaults.room_size)?;
    if !(room_size.is_finite() && room_size > 0.0) {
        return Err(CliError::invalid("--room-size must be positive"));
    }
    let feature_dim = r.get(args.feature_dim, "feature_dim", defaults.feature_dim)?;
    if feature_dim < 8 || feature_dim % 2 != 0 {
        return Err(CliError::invalid("--feature-dim must be even and at least 8"));
    }
    let noise = r.get(args.noise, "noise", defaults.appearance_noise)?;
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(CliError::invalid("--noise must be finite and >= 0"));
    }
    let shift = r.get(args.shift, "shift", defaults.condition_shift)?;
    if !(shift.is_finite() && shift >= 0.0) {
        return Err(CliError::invalid("--shift must be finite and >= 0"));
    }
    let conditions_raw =
        r.get(args.conditions.clone(), "conditions", defaults.conditions.join(","))?;
    let conditions: Vec<String> = conditions_raw
        .split(',')
        .map(|c| c.trim().to_string())
        .collect();
    if conditions.iter().any(|c| c.is_empty()) {
        return Err(CliError::invalid("--conditions must be non-empty labels"));
    }
    for (i, c) in conditions.iter().enumerate() {
        if conditions[..i].contains(c) {
            return Err(CliError::invalid(format!("--conditions repeats {c:?}")));
        }
    }
    let render_raw = r.get(args.render.clone(), "render", "none".to_string())?;
    let render = match render_raw.as_str() {
        "none" => None,
        raw => Some(parse_grid(raw, "--render")?),
    };
    let train_fraction = r.get(args.train_fraction, "train_fraction", 0.5)?;
    if !(train_fraction.is_finite() && train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(CliError::invalid("--train-fraction must lie in (0, 1]"));
    }
    let seed = r.get(args.seed, "seed", 0)?;

    let spec = SynthSpec {
        rooms,
        images_per_room: per_room,
        room_size,
        feature_dim,
        appearance_noise: noise,
        condition_shift: shift,
        seed: sub_seed(seed, "synth"),
        conditions: conditions.clone(),
        render,
    };
    let records =
        generate_synthetic(&spec).map_err(|e| CliError::invalid(format!("{e}")))?;

    let split_cfg = SplitConfig {
        train_fraction,
        reference_condition: None,
        seed: sub_seed(seed, "split"),
    };
    let splits =
        split_dataset(&records, &split_cfg).map_err(|e| CliError::invalid(format!("{e}")))?;
    let ids = |rows: &[tripletloc_core::ImageRecord]| -> Vec<String> {
        rows.iter().map(|r| r.id.clone()).collect()
    };
    let mut split_lists = vec![("train".to_string(), ids(&splits.train))];
    for (cond, rows) in &splits.tests {
        split_lists.push((format!("test:{cond}"), ids(rows)));
    }

    // Record the resolved generation parameters in the dataset manifest
    // itself (no timestamp: identical invocations must produce identical
    // files).
    let mut extra = Sections::default();
    let pairs = vec![
        ("rooms", rooms.to_string()),
        ("per_room", per_room.to_string()),
        ("room_size", room_size.to_string()),
        ("feature_dim", feature_dim.to_string()),
        ("noise", noise.to_string()),
        ("shift", shift.to_string()),
        ("conditions", conditions.join(",")),
        (
            "render",
            match render {
                Some((rr, cc)) => format!("{rr}x{cc}"),
                None => "none".to_string(),
            },
        ),
        ("train_fraction", train_fraction.to_string()),
        ("seed", seed.to_string()),
    ];
    extra.sections.push((
        "generate".to_string(),
        pairs
            .into_iter()
            .map(|(k, v)| Item::Pair(k.to_string(), v))
            .collect(),
    ));

    save_dataset(
        &args.out,
        &records,
        &split_lists,
        Some(&splits.reference_condition),
        &extra,
    )?;

    println!(
        "wrote {} records ({rooms} rooms x {per_room} images x {} conditions) to {}",
        records.len(),
        conditions.len(),
        args.out.display()
    );
    for (name, list) in &split_lists {
        println!("  split {name}: {} records", list.len());
    }
    Ok(())
}
