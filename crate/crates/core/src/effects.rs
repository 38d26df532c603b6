//! Raster perturbations for robustness studies: seeded Gaussian pixel
//! noise, a wrapped black column band, and horizontal motion blur.
//!
//! Rasters are 360-degree panoramas, so both the occlusion band and the blur
//! kernel wrap around the horizontal edges. Zero-magnitude settings (sigma
//! 0, zero columns, kernel 1) return bit-identical copies, and all
//! randomness is seeded.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::descriptor::Raster;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectError {
    /// The occlusion band is wider than the image.
    ColumnsOutOfRange { columns: usize, width: usize },
    /// Blur kernels must be odd (and at least 1) so they center on a pixel.
    EvenKernel(usize),
    /// Noise magnitude must be finite and non-negative.
    InvalidSigma,
}

impl fmt::Display for EffectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EffectError::ColumnsOutOfRange { columns, width } => {
                write!(f, "cannot occlude {columns} columns of a {width}-column image")
            }
            EffectError::EvenKernel(k) => write!(f, "blur kernel must be odd, got {k}"),
            EffectError::InvalidSigma => write!(f, "noise sigma must be finite and >= 0"),
        }
    }
}

impl core::error::Error for EffectError {}

/// Where the occlusion band begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcclusionStart {
    /// Fixed start column (taken modulo the image width).
    Column(usize),
    /// Per-image start drawn from this seed and the image's index.
    Random { seed: u64 },
}

/// One perturbation, as configured on the command line and recorded in run
/// manifests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectSpec {
    Noise { sigma: f64, seed: u64 },
    Occlusion { columns: usize, start: OcclusionStart },
    Blur { kernel: usize },
}

impl EffectSpec {
    /// Whether this spec is a guaranteed no-op.
    pub fn is_identity(&self) -> bool {
        match self {
            EffectSpec::Noise { sigma, .. } => *sigma == 0.0,
            EffectSpec::Occlusion { columns, .. } => *columns == 0,
            EffectSpec::Blur { kernel } => *kernel == 1,
        }
    }
}

/// Stable per-image stream seed so images can be perturbed independently
/// (and in parallel) while staying reproducible.
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn to_pixel(v: f64) -> u8 {
    math::rint(v).clamp(0.0, 255.0) as u8
}

/// Add zero-mean Gaussian noise of standard deviation `sigma` (intensity
/// units) to every pixel, rounding to the nearest 8-bit value and clamping.
/// `sigma == 0` returns a bit-identical copy.
pub fn add_gaussian_noise(raster: &Raster, sigma: f64, seed: u64) -> Result<Raster, EffectError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(EffectError::InvalidSigma);
    }
    if sigma == 0.0 {
        return Ok(raster.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = raster.clone();
    for p in out.data_mut() {
        let draw: f64 = rng.sample(normal);
        *p = to_pixel(*p as f64 + draw);
    }
    Ok(out)
}

/// Black out a contiguous band of `columns` columns starting at `start`
/// (modulo the width), wrapping past the right edge. Zero columns returns a
/// bit-identical copy.
pub fn occlude_columns(
    raster: &Raster,
    columns: usize,
    start: usize,
) -> Result<Raster, EffectError> {
    let width = raster.cols();
    if columns > width {
        return Err(EffectError::ColumnsOutOfRange { columns, width });
    }
    if columns == 0 {
        return Ok(raster.clone());
    }
    let rows = raster.rows();
    let mut out = raster.clone();
    let data = out.data_mut();
    for k in 0..columns {
        let c = (start + k) % width;
        for r in 0..rows {
            data[r * width + c] = 0;
        }
    }
    Ok(out)
}

/// Convolve every row with a uniform horizontal kernel of odd length
/// `kernel` (weights `1 / kernel`), wrapping circularly at the edges, then
/// round back to 8 bits. `kernel == 1` returns a bit-identical copy.
pub fn motion_blur(raster: &Raster, kernel: usize) -> Result<Raster, EffectError> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(EffectError::EvenKernel(kernel));
    }
    if kernel == 1 {
        return Ok(raster.clone());
    }
    let (rows, width) = (raster.rows(), raster.cols());
    let half = kernel / 2;
    let inv = 1.0 / kernel as f64;
    let mut out = raster.clone();
    let data = out.data_mut();
    let mut row_buf: Vec<f64> = Vec::with_capacity(width);
    for r in 0..rows {
        row_buf.clear();
        for c in 0..width {
            let mut sum = 0.0;
            for j in 0..kernel {
                // Offset folded into [0, width) so kernels wider than the
                // image still wrap cleanly.
                let offset = (j as i64 - half as i64).rem_euclid(width as i64) as usize;
                let cc = (c + offset) % width;
                sum += raster.get(r, cc) as f64;
            }
            row_buf.push(sum * inv);
        }
        for (c, &v) in row_buf.iter().enumerate() {
            data[r * width + c] = to_pixel(v);
        }
    }
    Ok(out)
}

/// Apply one effect to the image at position `image_index` of its dataset;
/// the index feeds the per-image random streams.
pub fn apply_effect(
    raster: &Raster,
    spec: &EffectSpec,
    image_index: u64,
) -> Result<Raster, EffectError> {
    match spec {
        EffectSpec::Noise { sigma, seed } => {
            add_gaussian_noise(raster, *sigma, mix_seed(*seed, image_index))
        }
        EffectSpec::Occlusion { columns, start } => {
            let start_col = match start {
                OcclusionStart::Column(c) => *c,
                OcclusionStart::Random { seed } => {
                    if *columns == 0 {
                        0
                    } else {
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(mix_seed(*seed, image_index));
                        rng.gen_range(0..raster.cols())
                    }
                }
            };
            occlude_columns(raster, *columns, start_col)
        }
        EffectSpec::Blur { kernel } => motion_blur(raster, *kernel),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_raster(rows: usize, cols: usize) -> Raster {
        let data = (0..rows * cols).map(|i| (i % 256) as u8).collect();
        Raster::new(rows, cols, data).unwrap()
    }

    fn constant_raster(rows: usize, cols: usize, value: u8) -> Raster {
        Raster::new(rows, cols, vec![value; rows * cols]).unwrap()
    }

    #[test]
    fn zero_magnitude_effects_are_bitwise_identities() {
        let img = gradient_raster(8, 16);
        assert_eq!(add_gaussian_noise(&img, 0.0, 42).unwrap(), img);
        assert_eq!(occlude_columns(&img, 0, 5).unwrap(), img);
        assert_eq!(motion_blur(&img, 1).unwrap(), img);
    }

    #[test]
    fn noise_is_seed_reproducible() {
        let img = gradient_raster(10, 20);
        let a = add_gaussian_noise(&img, 15.0, 7).unwrap();
        let b = add_gaussian_noise(&img, 15.0, 7).unwrap();
        assert_eq!(a, b);
        let c = add_gaussian_noise(&img, 15.0, 8).unwrap();
        assert_ne!(a, c);
        assert_ne!(a, img);
    }

    #[test]
    fn noise_rejects_bad_sigma() {
        let img = gradient_raster(2, 2);
        assert_eq!(add_gaussian_noise(&img, -1.0, 0), Err(EffectError::InvalidSigma));
        assert_eq!(add_gaussian_noise(&img, f64::NAN, 0), Err(EffectError::InvalidSigma));
    }

    #[test]
    fn noise_sample_deviation_matches_sigma_on_mid_gray() {
        // 317 * 317 > 1e5 pixels of mid-gray: clamping at 0/255 is a
        // > 6-sigma event for sigma = 20, so the empirical deviation of
        // (noisy - clean) must sit close to sigma.
        let img = constant_raster(317, 317, 128);
        let noisy = add_gaussian_noise(&img, 20.0, 99).unwrap();
        let diffs: Vec<f64> = img
            .data()
            .iter()
            .zip(noisy.data())
            .map(|(&a, &b)| b as f64 - a as f64)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((std - 20.0).abs() < 1.0, "sample std {std}");
        assert!(mean.abs() < 0.5, "sample mean {mean}");
    }

    #[test]
    fn occlusion_wraps_past_the_right_edge() {
        let img = constant_raster(4, 128, 200);
        let out = occlude_columns(&img, 64, 96).unwrap();
        for c in 0..128 {
            let expect_black = !(32..96).contains(&c);
            for r in 0..4 {
                let px = out.get(r, c);
                if expect_black {
                    assert_eq!(px, 0, "column {c} should be occluded");
                } else {
                    assert_eq!(px, 200, "column {c} should be untouched");
                }
            }
        }
    }

    #[test]
    fn occluding_every_column_blacks_the_image() {
        let img = gradient_raster(3, 9);
        let out = occlude_columns(&img, 9, 4).unwrap();
        assert!(out.data().iter().all(|&p| p == 0));
    }

    #[test]
    fn occlusion_wider_than_image_is_rejected() {
        let img = gradient_raster(3, 9);
        assert_eq!(
            occlude_columns(&img, 10, 0),
            Err(EffectError::ColumnsOutOfRange { columns: 10, width: 9 })
        );
    }

    #[test]
    fn blur_keeps_constant_images_unchanged() {
        let img = constant_raster(5, 12, 77);
        for kernel in [3, 7, 11] {
            assert_eq!(motion_blur(&img, kernel).unwrap(), img);
        }
    }

    #[test]
    fn blur_averages_circularly() {
        // Row [0, 90, 255, 30] under a length-3 wrap-around mean:
        // (30+0+90)/3, (0+90+255)/3, (90+255+30)/3, (255+30+0)/3.
        let img = Raster::new(1, 4, vec![0, 90, 255, 30]).unwrap();
        let out = motion_blur(&img, 3).unwrap();
        assert_eq!(out.data(), &[40, 115, 125, 95]);
    }

    #[test]
    fn blur_rejects_even_or_zero_kernels() {
        let img = gradient_raster(2, 6);
        assert_eq!(motion_blur(&img, 0), Err(EffectError::EvenKernel(0)));
        assert_eq!(motion_blur(&img, 4), Err(EffectError::EvenKernel(4)));
    }

    #[test]
    fn blur_preserves_row_means_within_rounding() {
        let img = gradient_raster(6, 50);
        let out = motion_blur(&img, 7).unwrap();
        assert_eq!(out.rows(), 6);
        assert_eq!(out.cols(), 50);
        for r in 0..6 {
            let orig: f64 = (0..50).map(|c| img.get(r, c) as f64).sum::<f64>() / 50.0;
            let blurred: f64 = (0..50).map(|c| out.get(r, c) as f64).sum::<f64>() / 50.0;
            assert!((orig - blurred).abs() <= 0.5, "row {r}: {orig} vs {blurred}");
        }
    }

    #[test]
    fn apply_effect_uses_per_image_streams() {
        let img = constant_raster(6, 30, 128);
        let spec = EffectSpec::Noise { sigma: 10.0, seed: 5 };
        let a0 = apply_effect(&img, &spec, 0).unwrap();
        let a0_again = apply_effect(&img, &spec, 0).unwrap();
        let a1 = apply_effect(&img, &spec, 1).unwrap();
        assert_eq!(a0, a0_again);
        assert_ne!(a0, a1);
    }

    #[test]
    fn random_occlusion_start_is_reproducible_and_in_range() {
        let img = constant_raster(3, 40, 9);
        let spec = EffectSpec::Occlusion { columns: 10, start: OcclusionStart::Random { seed: 3 } };
        let a = apply_effect(&img, &spec, 4).unwrap();
        let b = apply_effect(&img, &spec, 4).unwrap();
        assert_eq!(a, b);
        let black_columns = (0..40)
            .filter(|&c| (0..3).all(|r| a.get(r, c) == 0))
            .count();
        assert_eq!(black_columns, 10);
    }

    #[test]
    fn identity_detection_matches_behavior() {
        assert!(EffectSpec::Noise { sigma: 0.0, seed: 1 }.is_identity());
        assert!(EffectSpec::Occlusion { columns: 0, start: OcclusionStart::Column(3) }
            .is_identity());
        assert!(EffectSpec::Blur { kernel: 1 }.is_identity());
        assert!(!EffectSpec::Noise { sigma: 0.1, seed: 1 }.is_identity());
        assert!(!EffectSpec::Blur { kernel: 3 }.is_identity());
    }
}
