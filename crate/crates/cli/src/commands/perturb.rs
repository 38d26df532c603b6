//! `perturb`: apply one effect to every PGM image in a directory, writing
//! the results under the same filenames in another directory. Images are
//! indexed by their position in filename-sorted order, so a rerun with the
//! same seed reproduces the output bitwise.

use std::fs;
use std::path::PathBuf;

use crate::config::{Resolver, Sections};
use crate::error::{CliError, Result};
use crate::pgm::{read_pgm, write_pgm};
use crate::seeds::sub_seed;

use super::effect_flags::{resolve_effect, EffectFlags};

#[derive(Debug, clap::Args)]
pub struct PerturbArgs {
    /// Directory of .pgm images to perturb.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub effect: EffectFlags,
    /// Master seed for effect randomness [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &PerturbArgs, cfg: Option<&Sections>) -> Result<()> {
    let r = Resolver::new(cfg, "perturb");
    let effect = resolve_effect(&args.effect, &r)?.ok_or_else(|| {
        CliError::invalid("--effect is required: one of noise, occlusion, blur")
    })?;
    let seed = r.get(args.seed, "seed", 0)?;
    let spec = effect.spec(sub_seed(seed, "perturb"));

    let entries = fs::read_dir(&args.input).map_err(|e| CliError::io_at(&args.input, e))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io_at(&args.input, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(CliError::invalid(format!(
            "no .pgm images found in {}",
            args.input.display()
        )));
    }
    names.sort();

    fs::create_dir_all(&args.out).map_err(|e| CliError::io_at(&args.out, e))?;
    for (index, name) in names.iter().enumerate() {
        let raster = read_pgm(&args.input.join(name))?;
        let perturbed = tripletloc_core::apply_effect(&raster, &spec, index as u64)
            .map_err(|e| CliError::invalid(format!("{name}: {e}")))?;
        write_pgm(&args.out.join(name), &perturbed)?;
    }
    println!(
        "perturbed {} images ({} level {}) -> {}",
        names.len(),
        effect.kind(),
        effect.level(),
        args.out.display()
    );
    Ok(())
}
