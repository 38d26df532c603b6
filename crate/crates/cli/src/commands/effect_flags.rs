//! Shared perturbation flags for `evaluate` and `perturb`.

use tripletloc_core::{EffectSpec, ImageRecord, OcclusionStart};

use crate::config::Resolver;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, clap::Args)]
pub struct EffectFlags {
    /// Perturbation kind: noise, occlusion, or blur.
    #[arg(long)]
    pub effect: Option<String>,
    /// Noise standard deviation, in 8-bit intensity units.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Number of occluded columns (a contiguous band, wrapping at the edge).
    #[arg(long)]
    pub columns: Option<usize>,
    /// Occlusion start column, or "random" for a seeded random position.
    #[arg(long)]
    pub start: Option<String>,
    /// Horizontal blur kernel width in pixels; must be odd.
    #[arg(long)]
    pub kernel: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartChoice {
    Column(usize),
    Random,
}

/// A validated perturbation, independent of the seed it will run under.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedEffect {
    Noise { sigma: f64 },
    Occlusion { columns: usize, start: StartChoice },
    Blur { kernel: usize },
}

impl ResolvedEffect {
    pub fn kind(&self) -> &'static str {
        match self {
            ResolvedEffect::Noise { .. } => "noise",
            ResolvedEffect::Occlusion { .. } => "occlusion",
            ResolvedEffect::Blur { .. } => "blur",
        }
    }

    /// The scalar severity of the effect, for sweep tables.
    pub fn level(&self) -> f64 {
        match self {
            ResolvedEffect::Noise { sigma } => *sigma,
            ResolvedEffect::Occlusion { columns, .. } => *columns as f64,
            ResolvedEffect::Blur { kernel } => *kernel as f64,
        }
    }

    /// Noise perturbs the visual map as well as the queries; occlusion and
    /// blur touch only the queries unless explicitly extended to the map.
    pub fn map_is_perturbed_by_default(&self) -> bool {
        matches!(self, ResolvedEffect::Noise { .. })
    }

    /// Concrete spec for one perturbation target, given that target's seed.
    pub fn spec(&self, seed: u64) -> EffectSpec {
        match self {
            ResolvedEffect::Noise { sigma } => EffectSpec::Noise { sigma: *sigma, seed },
            ResolvedEffect::Occlusion { columns, start } => EffectSpec::Occlusion {
                columns: *columns,
                start: match start {
                    StartChoice::Column(c) => OcclusionStart::Column(*c),
                    StartChoice::Random => OcclusionStart::Random { seed },
                },
            },
            ResolvedEffect::Blur { kernel } => EffectSpec::Blur { kernel: *kernel },
        }
    }
}

/// Resolve the effect flags (against a config section) into a validated
/// effect, or `None` when no effect was requested.
pub fn resolve_effect(flags: &EffectFlags, r: &Resolver<'_>) -> Result<Option<ResolvedEffect>> {
    let kind = r.get_opt(flags.effect.clone(), "effect")?;
    let kind = match kind.as_deref() {
        None | Some("none") => return Ok(None),
        Some(k) => k.to_string(),
    };
    match kind.as_str() {
        "noise" => {
            let sigma = r.get(flags.sigma, "sigma", 0.0)?;
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(CliError::invalid("--sigma must be finite and >= 0"));
            }
            Ok(Some(ResolvedEffect::Noise { sigma }))
        }
        "occlusion" => {
            let columns = r
                .get_opt(flags.columns, "columns")?
                .ok_or_else(|| CliError::invalid("--effect occlusion requires --columns"))?;
            let start = match r.get(flags.start.clone(), "start", "random".to_string())? {
                s if s == "random" => StartChoice::Random,
                s => StartChoice::Column(s.parse().map_err(|_| {
                    CliError::invalid(format!(
                        "--start must be a column index or \"random\", got {s:?}"
                    ))
                })?),
            };
            Ok(Some(ResolvedEffect::Occlusion { columns, start }))
        }
        "blur" => {
            let kernel = r
                .get_opt(flags.kernel, "kernel")?
                .ok_or_else(|| CliError::invalid("--effect blur requires --kernel"))?;
            if kernel % 2 == 0 {
                return Err(CliError::invalid(format!(
                    "--kernel must be odd, got {kernel}"
                )));
            }
            Ok(Some(ResolvedEffect::Blur { kernel }))
        }
        other => Err(CliError::invalid(format!(
            "--effect must be one of none, noise, occlusion, blur; got {other:?}"
        ))),
    }
}

/// Perturb every record's raster in place, indexing images by their position
/// in the slice. Records must carry rasters, and must not also carry
/// precomputed features — those would shadow the perturbed pixels in the
/// encoder input and silently undo the effect.
pub fn perturb_records(
    records: &mut [ImageRecord],
    effect: &ResolvedEffect,
    seed: u64,
) -> Result<()> {
    let spec = effect.spec(seed);
    for (index, rec) in records.iter_mut().enumerate() {
        let px = rec.pixels.as_ref().ok_or_else(|| {
            CliError::invalid(format!(
                "record {}: effects need raster images, but this record is feature-only",
                rec.id
            ))
        })?;
        if rec.features.is_some() {
            return Err(CliError::invalid(format!(
                "record {}: carries precomputed features, which take precedence over \
                 pixels in the encoder; effects would be ignored — use a pixel-only dataset",
                rec.id
            )));
        }
        let perturbed = apply(px, &spec, index as u64)?;
        rec.pixels = Some(perturbed);
    }
    Ok(())
}

fn apply(
    px: &tripletloc_core::Raster,
    spec: &EffectSpec,
    index: u64,
) -> Result<tripletloc_core::Raster> {
    tripletloc_core::apply_effect(px, spec, index).map_err(|e| CliError::invalid(format!("{e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Resolver;

    fn resolver() -> Resolver<'static> {
        Resolver::new(None, "evaluate")
    }

    fn flags(effect: Option<&str>) -> EffectFlags {
        EffectFlags {
            effect: effect.map(|s| s.to_string()),
            sigma: None,
            columns: None,
            start: None,
            kernel: None,
        }
    }

    #[test]
    fn none_and_missing_mean_no_effect() {
        assert_eq!(resolve_effect(&flags(None), &resolver()).unwrap(), None);
        assert_eq!(resolve_effect(&flags(Some("none")), &resolver()).unwrap(), None);
    }

    #[test]
    fn occlusion_and_blur_require_their_magnitude() {
        let err = resolve_effect(&flags(Some("occlusion")), &resolver()).unwrap_err();
        assert!(err.to_string().contains("--columns"), "{err}");
        let err = resolve_effect(&flags(Some("blur")), &resolver()).unwrap_err();
        assert!(err.to_string().contains("--kernel"), "{err}");
        let mut f = flags(Some("blur"));
        f.kernel = Some(4);
        let err = resolve_effect(&f, &resolver()).unwrap_err();
        assert!(err.to_string().contains("odd"), "{err}");
    }

    #[test]
    fn unknown_kind_and_bad_start_are_invalid() {
        let err = resolve_effect(&flags(Some("sepia")), &resolver()).unwrap_err();
        assert!(err.to_string().contains("sepia"), "{err}");
        let mut f = flags(Some("occlusion"));
        f.columns = Some(8);
        f.start = Some("left".to_string());
        let err = resolve_effect(&f, &resolver()).unwrap_err();
        assert!(err.to_string().contains("--start"), "{err}");
    }

    #[test]
    fn noise_defaults_to_zero_sigma_and_perturbs_the_map() {
        let mut f = flags(Some("noise"));
        let e = resolve_effect(&f, &resolver()).unwrap().unwrap();
        assert_eq!(e, ResolvedEffect::Noise { sigma: 0.0 });
        assert!(e.map_is_perturbed_by_default());
        f.sigma = Some(20.0);
        let e = resolve_effect(&f, &resolver()).unwrap().unwrap();
        assert_eq!(e.level(), 20.0);
        let mut f = flags(Some("blur"));
        f.kernel = Some(7);
        let e = resolve_effect(&f, &resolver()).unwrap().unwrap();
        assert!(!e.map_is_perturbed_by_default());
    }
}
