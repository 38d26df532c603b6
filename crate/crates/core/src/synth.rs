//! Seeded synthetic multi-room environments for desk-scale experiments.
//!
//! Rooms sit on a grid; each room gets a latent appearance vector and a
//! sinusoidal camera sweep. An image's feature vector splits into a signal
//! half (smooth position encoding plus the room appearance, lightly noised)
//! and a nuisance half (strong per-image clutter). Lighting conditions add a
//! fixed offset inside the nuisance half only, so condition changes disturb
//! appearance without moving the information that identifies rooms and
//! positions — an embedding has something to learn and something to ignore.
//! Rasters, when requested, are rendered from the features through a seeded
//! smooth cosine basis (signal rows on top, nuisance rows below), so pixel
//! pipelines see the same structure.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::descriptor::{ImageRecord, Pose, Raster};
use crate::math;
use crate::mining::subsample_dataset;

/// Feature dimensions carrying the smooth position encoding.
const POSITION_DIMS: usize = 4;
/// Per-dimension spread of the latent room appearance vectors.
const ROOM_APPEARANCE_SCALE: f64 = 2.0;
/// Peak magnitude of the position encoding.
const POSITION_AMPLITUDE: f64 = 2.0;
/// Nuisance clutter noise as a multiple of the appearance noise.
const NUISANCE_FACTOR: f64 = 10.0;
/// Fraction of the room size kept clear of the walls by the sweep.
const TRAJECTORY_MARGIN: f64 = 0.1;
/// Sine periods of the sweep's sideways wiggle.
const TRAJECTORY_WAVES: f64 = 2.0;
/// Sideways wiggle amplitude as a fraction of the room size.
const TRAJECTORY_AMPLITUDE: f64 = 0.35;
/// Mid-gray level rendered pixels oscillate around.
const RENDER_MID: f64 = 127.5;
/// Intensity per unit of feature value in rendered rasters.
const RENDER_GAIN: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthError {
    InvalidSpec(&'static str),
    /// The training fraction must lie in (0, 1].
    InvalidFractions,
    /// The requested reference condition does not occur in the dataset.
    UnknownCondition,
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::InvalidSpec(what) => write!(f, "invalid synthetic spec: {what}"),
            SynthError::InvalidFractions => {
                write!(f, "train fraction must lie in (0, 1]")
            }
            SynthError::UnknownCondition => {
                write!(f, "reference condition not present in the dataset")
            }
        }
    }
}

impl core::error::Error for SynthError {}

/// Parameters of one synthetic environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub rooms: usize,
    pub images_per_room: usize,
    /// Side length of each (square) room, in meters.
    pub room_size: f64,
    /// Latent feature dimension; must be even and at least 8 so both halves
    /// have room for structure.
    pub feature_dim: usize,
    /// Per-image noise on the signal half (the nuisance half is noised
    /// [`NUISANCE_FACTOR`] times harder).
    pub appearance_noise: f64,
    /// Magnitude of the per-condition offset added inside the nuisance half.
    pub condition_shift: f64,
    pub seed: u64,
    /// Lighting labels; every base image exists once per condition and the
    /// first label is the unshifted reference.
    pub conditions: Vec<String>,
    /// When set, records carry rasters of this (rows, cols) shape rendered
    /// from the features, and no raw feature vectors.
    pub render: Option<(usize, usize)>,
}

impl Default for SynthSpec {
    fn default() -> SynthSpec {
        SynthSpec {
            rooms: 8,
            images_per_room: 50,
            room_size: 4.0,
            feature_dim: 32,
            appearance_noise: 0.15,
            condition_shift: 6.0,
            seed: 0,
            conditions: alloc::vec!["day".into(), "night".into()],
            render: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.rooms == 0 {
            return Err(SynthError::InvalidSpec("rooms must be at least 1"));
        }
        if self.images_per_room == 0 {
            return Err(SynthError::InvalidSpec("images per room must be at least 1"));
        }
        if !(self.room_size.is_finite() && self.room_size > 0.0) {
            return Err(SynthError::InvalidSpec("room size must be positive"));
        }
        if self.feature_dim < 8 || !self.feature_dim.is_multiple_of(2) {
            return Err(SynthError::InvalidSpec("feature dim must be even and at least 8"));
        }
        if !(self.appearance_noise.is_finite() && self.appearance_noise >= 0.0) {
            return Err(SynthError::InvalidSpec("appearance noise must be >= 0"));
        }
        if !(self.condition_shift.is_finite() && self.condition_shift >= 0.0) {
            return Err(SynthError::InvalidSpec("condition shift must be >= 0"));
        }
        if self.conditions.is_empty() || self.conditions.iter().any(|c| c.is_empty()) {
            return Err(SynthError::InvalidSpec("conditions must be non-empty labels"));
        }
        let distinct: BTreeSet<&str> = self.conditions.iter().map(|c| c.as_str()).collect();
        if distinct.len() != self.conditions.len() {
            return Err(SynthError::InvalidSpec("conditions must be distinct"));
        }
        if let Some((r, c)) = self.render {
            if r == 0 || c == 0 {
                return Err(SynthError::InvalidSpec("render shape must be nonzero"));
            }
        }
        Ok(())
    }

    fn signal_dims(&self) -> usize {
        self.feature_dim / 2
    }

    /// Rooms per grid row in the world layout.
    fn grid_cols(&self) -> usize {
        let mut cols = 1;
        while cols * cols < self.rooms {
            cols += 1;
        }
        cols
    }

    /// World-frame origin (lower corner) of a room's square cell.
    pub fn room_origin(&self, room: usize) -> Pose {
        let cols = self.grid_cols();
        Pose::new(
            (room % cols) as f64 * self.room_size,
            (room / cols) as f64 * self.room_size,
        )
    }
}

/// Smooth cosine basis mapping feature dimensions to pixel patterns; signal
/// dimensions paint the top half of the raster, nuisance dimensions the
/// bottom half.
struct RenderBasis {
    /// Per dimension: (row frequency, column frequency, phase).
    waves: Vec<(f64, f64, f64)>,
    signal_dims: usize,
    rows: usize,
    cols: usize,
}

impl RenderBasis {
    fn draw(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Option<RenderBasis> {
        let (rows, cols) = spec.render?;
        let waves = (0..spec.feature_dim)
            .map(|_| {
                let fr = rng.gen_range(0..3) as f64;
                let fc = rng.gen_range(1..7) as f64;
                let phase = rng.gen_range(0.0..core::f64::consts::TAU);
                (fr, fc, phase)
            })
            .collect();
        Some(RenderBasis { waves, signal_dims: spec.signal_dims(), rows, cols })
    }

    fn render(&self, features: &[f64]) -> Raster {
        let split_row = self.rows / 2;
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            // Which feature band paints this row, and the row's position
            // within the band.
            let (lo, hi, band_r0, band_rows) = if r < split_row || split_row == 0 {
                (0, self.signal_dims, 0, split_row.max(1))
            } else {
                (self.signal_dims, self.waves.len(), split_row, self.rows - split_row)
            };
            let rf = (r - band_r0) as f64 / band_rows as f64;
            for c in 0..self.cols {
                let cf = c as f64 / self.cols as f64;
                let mut v = RENDER_MID;
                for (&(fr, fc, phase), &f) in self.waves[lo..hi].iter().zip(&features[lo..hi]) {
                    let angle = core::f64::consts::TAU * (fr * rf + fc * cf) + phase;
                    v += RENDER_GAIN * f * math::cos(angle);
                }
                data.push(math::rint(v).clamp(0.0, 255.0) as u8);
            }
        }
        Raster::new(self.rows, self.cols, data).expect("validated shape")
    }
}

/// Generate the full dataset: every room, every sweep position, every
/// condition, in that nesting order. Conditions of one base image share its
/// pose and noise draws, so a zero condition shift makes them identical.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<ImageRecord>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let signal = spec.signal_dims();
    let dim = spec.feature_dim;

    // Latent room appearances (position dims left to the position encoding).
    let appearances: Vec<Vec<f64>> = (0..spec.rooms)
        .map(|_| {
            (0..signal - POSITION_DIMS)
                .map(|_| ROOM_APPEARANCE_SCALE * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    // Per-condition nuisance offsets; the first (reference) condition stays
    // at zero.
    let offsets: Vec<Vec<f64>> = spec
        .conditions
        .iter()
        .enumerate()
        .map(|(ci, _)| {
            let raw: Vec<f64> =
                (0..dim - signal).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            if ci == 0 {
                return alloc::vec![0.0; dim - signal];
            }
            let norm = math::sqrt(raw.iter().map(|x| x * x).sum::<f64>());
            raw.iter().map(|x| x / norm * spec.condition_shift).collect()
        })
        .collect();

    let basis = RenderBasis::draw(spec, &mut rng);

    let mut records = Vec::with_capacity(spec.rooms * spec.images_per_room * spec.conditions.len());
    for (room, appearance) in appearances.iter().enumerate() {
        let origin = spec.room_origin(room);
        let room_label = format!("room{room:02}");
        for i in 0..spec.images_per_room {
            let t = if spec.images_per_room == 1 {
                0.5
            } else {
                i as f64 / (spec.images_per_room - 1) as f64
            };
            let x = origin.x + spec.room_size * (TRAJECTORY_MARGIN + (1.0 - 2.0 * TRAJECTORY_MARGIN) * t);
            let y = origin.y
                + spec.room_size
                    * (0.5
                        + TRAJECTORY_AMPLITUDE
                            * math::sin(core::f64::consts::TAU * TRAJECTORY_WAVES * t));
            let pose = Pose::new(x, y);

            let mut base = alloc::vec![0.0; dim];
            base[0] = POSITION_AMPLITUDE * math::sin(core::f64::consts::TAU * t);
            base[1] = POSITION_AMPLITUDE * math::cos(core::f64::consts::TAU * t);
            base[2] = POSITION_AMPLITUDE * math::sin(2.0 * core::f64::consts::TAU * t);
            base[3] = POSITION_AMPLITUDE * math::cos(2.0 * core::f64::consts::TAU * t);
            for (k, &a) in appearance.iter().enumerate() {
                base[POSITION_DIMS + k] = a;
            }
            for v in base.iter_mut().take(signal) {
                *v += spec.appearance_noise * rng.sample::<f64, _>(StandardNormal);
            }
            for v in base.iter_mut().skip(signal) {
                *v += NUISANCE_FACTOR * spec.appearance_noise * rng.sample::<f64, _>(StandardNormal);
            }

            for (ci, condition) in spec.conditions.iter().enumerate() {
                let mut features = base.clone();
                for (k, off) in offsets[ci].iter().enumerate() {
                    features[signal + k] += off;
                }
                let (pixels, features) = match &basis {
                    Some(b) => (Some(b.render(&features)), None),
                    None => (None, Some(features)),
                };
                records.push(ImageRecord {
                    id: format!("r{room:02}_i{i:03}_{condition}"),
                    room: room_label.clone(),
                    condition: condition.clone(),
                    pose,
                    pixels,
                    features,
                });
            }
        }
    }
    Ok(records)
}

/// How to carve a generated dataset into training and per-condition tests.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// Fraction of the reference condition drawn (room-stratified) into the
    /// training/database split.
    pub train_fraction: f64,
    /// Reference condition; defaults to the first record's condition.
    pub reference_condition: Option<String>,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> SplitConfig {
        SplitConfig { train_fraction: 0.5, reference_condition: None, seed: 0 }
    }
}

/// The training split plus one held-out test split per condition, all
/// disjoint. Only reference-condition images can enter training; the
/// reference test split holds its remainder, and every other condition's
/// split holds all of that condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub reference_condition: String,
    pub train: Vec<ImageRecord>,
    pub tests: Vec<(String, Vec<ImageRecord>)>,
}

pub fn split_dataset(
    records: &[ImageRecord],
    cfg: &SplitConfig,
) -> Result<DatasetSplits, SynthError> {
    if !(cfg.train_fraction.is_finite() && cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0) {
        return Err(SynthError::InvalidFractions);
    }
    if records.is_empty() {
        return Err(SynthError::UnknownCondition);
    }
    let reference: String = match &cfg.reference_condition {
        Some(c) => {
            if !records.iter().any(|r| &r.condition == c) {
                return Err(SynthError::UnknownCondition);
            }
            c.clone()
        }
        None => records[0].condition.clone(),
    };

    let reference_records: Vec<ImageRecord> = records
        .iter()
        .filter(|r| r.condition == reference)
        .cloned()
        .collect();
    let n_train = math::rint(cfg.train_fraction * reference_records.len() as f64) as usize;
    let n_train = n_train.min(reference_records.len());
    let train = subsample_dataset(&reference_records, n_train, cfg.seed)
        .expect("n_train <= len by construction");
    let train_ids: BTreeSet<&str> = train.iter().map(|r| r.id.as_str()).collect();

    let mut conditions: Vec<&str> = Vec::new();
    for r in records {
        if !conditions.iter().any(|c| *c == r.condition) {
            conditions.push(&r.condition);
        }
    }
    let tests = conditions
        .into_iter()
        .map(|cond| {
            let rows: Vec<ImageRecord> = records
                .iter()
                .filter(|r| r.condition == cond && !train_ids.contains(r.id.as_str()))
                .cloned()
                .collect();
            (String::from(cond), rows)
        })
        .collect();
    Ok(DatasetSplits { reference_condition: reference, train, tests })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature_spec() -> SynthSpec {
        SynthSpec { rooms: 4, images_per_room: 10, ..SynthSpec::default() }
    }

    #[test]
    fn single_room_spec_uses_one_label() {
        let spec = SynthSpec { rooms: 1, images_per_room: 5, ..SynthSpec::default() };
        let records = generate_synthetic(&spec).unwrap();
        assert_eq!(records.len(), 10);
        assert!(records.iter().all(|r| r.room == "room00"));
    }

    #[test]
    fn zero_condition_shift_makes_variants_identical() {
        let spec = SynthSpec { condition_shift: 0.0, ..feature_spec() };
        let records = generate_synthetic(&spec).unwrap();
        for pair in records.chunks(2) {
            assert_eq!(pair[0].features, pair[1].features);
            assert_eq!(pair[0].pose, pair[1].pose);
            assert_ne!(pair[0].condition, pair[1].condition);
        }
    }

    #[test]
    fn nonzero_shift_separates_conditions_in_nuisance_dims_only() {
        let spec = feature_spec();
        let records = generate_synthetic(&spec).unwrap();
        let signal = spec.feature_dim / 2;
        for pair in records.chunks(2) {
            let day = pair[0].features.as_ref().unwrap();
            let night = pair[1].features.as_ref().unwrap();
            assert_eq!(&day[..signal], &night[..signal]);
            let shift: f64 = day[signal..]
                .iter()
                .zip(&night[signal..])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!((shift - spec.condition_shift).abs() < 1e-9);
        }
    }

    #[test]
    fn counts_labels_and_bounds_hold() {
        let spec = SynthSpec { rooms: 8, images_per_room: 50, ..SynthSpec::default() };
        let records = generate_synthetic(&spec).unwrap();
        assert_eq!(records.len(), 8 * 50 * 2);
        let rooms: BTreeSet<&str> = records.iter().map(|r| r.room.as_str()).collect();
        assert_eq!(rooms.len(), 8);
        for r in &records {
            let idx: usize = r.room[4..].parse().unwrap();
            let origin = spec.room_origin(idx);
            assert!(r.pose.x >= origin.x && r.pose.x <= origin.x + spec.room_size);
            assert!(r.pose.y >= origin.y && r.pose.y <= origin.y + spec.room_size);
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = generate_synthetic(&feature_spec()).unwrap();
        let b = generate_synthetic(&feature_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthSpec { seed: 1, ..feature_spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn raw_features_are_nearest_centroid_separable() {
        // Room classification by nearest feature centroid must be perfect on
        // the reference condition: appearance separation dominates the
        // per-image noise by construction.
        let spec = SynthSpec::default();
        let records = generate_synthetic(&spec).unwrap();
        let day: Vec<&ImageRecord> =
            records.iter().filter(|r| r.condition == "day").collect();
        let rooms: Vec<&str> = {
            let mut v: Vec<&str> = Vec::new();
            for r in &day {
                if !v.contains(&r.room.as_str()) {
                    v.push(&r.room);
                }
            }
            v
        };
        let dim = spec.feature_dim;
        let centroids: Vec<(usize, Vec<f64>)> = rooms
            .iter()
            .map(|room| {
                let members: Vec<&&ImageRecord> =
                    day.iter().filter(|r| r.room == *room).collect();
                let mut c = vec![0.0; dim];
                for m in &members {
                    for (ci, f) in c.iter_mut().zip(m.features.as_ref().unwrap()) {
                        *ci += f;
                    }
                }
                for ci in &mut c {
                    *ci /= members.len() as f64;
                }
                (members.len(), c)
            })
            .collect();
        let mut correct = 0;
        for r in &day {
            let f = r.features.as_ref().unwrap();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, (_, c)) in centroids.iter().enumerate() {
                let d: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            if rooms[best] == r.room {
                correct += 1;
            }
        }
        assert_eq!(correct, day.len());
    }

    #[test]
    fn rendered_records_carry_rasters_only() {
        let spec = SynthSpec {
            rooms: 2,
            images_per_room: 3,
            render: Some((16, 64)),
            ..SynthSpec::default()
        };
        let records = generate_synthetic(&spec).unwrap();
        for r in &records {
            assert!(r.features.is_none());
            let px = r.pixels.as_ref().unwrap();
            assert_eq!((px.rows(), px.cols()), (16, 64));
        }
        let again = generate_synthetic(&spec).unwrap();
        assert_eq!(records, again);
    }

    #[test]
    fn rendered_zero_shift_variants_are_bitwise_identical() {
        let spec = SynthSpec {
            rooms: 2,
            images_per_room: 3,
            condition_shift: 0.0,
            render: Some((8, 32)),
            ..SynthSpec::default()
        };
        let records = generate_synthetic(&spec).unwrap();
        for pair in records.chunks(2) {
            assert_eq!(pair[0].pixels, pair[1].pixels);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = SynthSpec::default();
        for bad in [
            SynthSpec { rooms: 0, ..base.clone() },
            SynthSpec { images_per_room: 0, ..base.clone() },
            SynthSpec { room_size: 0.0, ..base.clone() },
            SynthSpec { feature_dim: 7, ..base.clone() },
            SynthSpec { feature_dim: 6, ..base.clone() },
            SynthSpec { appearance_noise: -0.1, ..base.clone() },
            SynthSpec { condition_shift: f64::NAN, ..base.clone() },
            SynthSpec { conditions: alloc::vec![], ..base.clone() },
            SynthSpec {
                conditions: alloc::vec!["day".into(), "day".into()],
                ..base.clone()
            },
            SynthSpec { render: Some((0, 4)), ..base.clone() },
        ] {
            assert!(generate_synthetic(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn split_keeps_training_inside_the_reference_condition() {
        let records = generate_synthetic(&feature_spec()).unwrap();
        let splits = split_dataset(&records, &SplitConfig::default()).unwrap();
        assert_eq!(splits.reference_condition, "day");
        assert!(!splits.train.is_empty());
        assert!(splits.train.iter().all(|r| r.condition == "day"));
        let day_total = records.iter().filter(|r| r.condition == "day").count();
        assert_eq!(splits.train.len(), day_total / 2);
        let (test_day, test_night) = (&splits.tests[0], &splits.tests[1]);
        assert_eq!(test_day.0, "day");
        assert_eq!(test_day.1.len(), day_total - splits.train.len());
        assert_eq!(test_night.0, "night");
        assert_eq!(test_night.1.len(), day_total);
        let train_ids: BTreeSet<&str> = splits.train.iter().map(|r| r.id.as_str()).collect();
        assert!(test_day.1.iter().all(|r| !train_ids.contains(r.id.as_str())));
        // Training stays room-stratified.
        let train_rooms: BTreeSet<&str> = splits.train.iter().map(|r| r.room.as_str()).collect();
        assert_eq!(train_rooms.len(), 4);
    }

    #[test]
    fn full_train_fraction_empties_the_reference_test() {
        let records = generate_synthetic(&feature_spec()).unwrap();
        let cfg = SplitConfig { train_fraction: 1.0, ..SplitConfig::default() };
        let splits = split_dataset(&records, &cfg).unwrap();
        assert!(splits.tests[0].1.is_empty());
        assert!(!splits.tests[1].1.is_empty());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let records = generate_synthetic(&feature_spec()).unwrap();
        let a = split_dataset(&records, &SplitConfig::default()).unwrap();
        let b = split_dataset(&records, &SplitConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(
            &records,
            &SplitConfig { seed: 9, ..SplitConfig::default() },
        )
        .unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let records = generate_synthetic(&feature_spec()).unwrap();
        for f in [0.0, -0.5, 1.5, f64::NAN] {
            let cfg = SplitConfig { train_fraction: f, ..SplitConfig::default() };
            assert_eq!(split_dataset(&records, &cfg), Err(SynthError::InvalidFractions));
        }
        let cfg = SplitConfig {
            reference_condition: Some("dusk".into()),
            ..SplitConfig::default()
        };
        assert_eq!(split_dataset(&records, &cfg), Err(SynthError::UnknownCondition));
    }

    #[test]
    fn explicit_reference_condition_is_honored() {
        let records = generate_synthetic(&feature_spec()).unwrap();
        let cfg = SplitConfig {
            reference_condition: Some("night".into()),
            ..SplitConfig::default()
        };
        let splits = split_dataset(&records, &cfg).unwrap();
        assert_eq!(splits.reference_condition, "night");
        assert!(splits.train.iter().all(|r| r.condition == "night"));
    }
}
