//! Triplet mining over labeled, posed image records.
//!
//! Coarse mining pairs an anchor with a same-room positive and an
//! other-room negative. Fine mining uses metric predicates on ground-truth
//! poses: positives within `r_plus` meters of the anchor, negatives farther
//! than `r_minus`. Selection is uniform over the eligible candidates and all
//! randomness flows through the caller's seeded generator.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::ImageRecord;

/// Which constraint family the sampler applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiningStage {
    /// Room labels: positive same room, negative different room.
    Coarse,
    /// Pose metric: positive within `r_plus`, negative beyond `r_minus`.
    Fine,
}

impl MiningStage {
    pub fn name(&self) -> &'static str {
        match self {
            MiningStage::Coarse => "coarse",
            MiningStage::Fine => "fine",
        }
    }

    pub fn parse(token: &str) -> Option<MiningStage> {
        match token {
            "coarse" => Some(MiningStage::Coarse),
            "fine" => Some(MiningStage::Fine),
            _ => None,
        }
    }
}

/// Sampler configuration. Radii are in the dataset's pose units (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    pub r_plus: f64,
    pub r_minus: f64,
    pub stage: MiningStage,
    pub seed: u64,
    /// Bulk count for offline triplet dumps; the trainer drives its own total.
    pub count: usize,
    /// Restrict fine-stage positives to the anchor's room in addition to the
    /// metric predicate.
    pub same_room_positives: bool,
}

impl Default for MiningConfig {
    fn default() -> MiningConfig {
        MiningConfig {
            r_plus: 0.4,
            r_minus: 0.4,
            stage: MiningStage::Coarse,
            seed: 0,
            count: 50_000,
            same_room_positives: true,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        if !(self.r_plus > 0.0 && self.r_plus.is_finite()) {
            return Err(MiningError::InvalidConfig("r_plus must be positive"));
        }
        if !(self.r_minus >= 0.0 && self.r_minus.is_finite()) {
            return Err(MiningError::InvalidConfig("r_minus must be nonnegative"));
        }
        Ok(())
    }
}

/// Positions of one mined triplet in the dataset ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiningError {
    /// Fewer than two distinct rooms for coarse mining.
    InsufficientRooms,
    /// No anchor has an eligible positive.
    NoPositiveAvailable,
    /// Positives exist but no anchor with a positive also has a negative.
    NoNegativeAvailable,
    /// Subsample request exceeds the dataset size.
    TooFewImages { requested: usize, available: usize },
    InvalidConfig(&'static str),
}

impl fmt::Display for MiningError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MiningError::InsufficientRooms => {
                write!(f, "coarse mining needs at least two rooms")
            }
            MiningError::NoPositiveAvailable => {
                write!(f, "no anchor has an eligible positive")
            }
            MiningError::NoNegativeAvailable => {
                write!(f, "no eligible negative for any anchor with a positive")
            }
            MiningError::TooFewImages { requested, available } => {
                write!(f, "requested {requested} images but only {available} exist")
            }
            MiningError::InvalidConfig(why) => write!(f, "invalid mining config: {why}"),
        }
    }
}

impl core::error::Error for MiningError {}

/// Attempt budget before a sampler gives up, scaled by dataset size.
fn attempt_cap(n: usize) -> usize {
    10 * n.max(1)
}

fn room_index(records: &[ImageRecord]) -> BTreeMap<&str, Vec<usize>> {
    let mut rooms: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        rooms.entry(r.room.as_str()).or_default().push(i);
    }
    rooms
}

/// Draw one triplet under the room constraints: anchor uniform over records
/// with a same-room partner, positive uniform over the anchor's room minus
/// the anchor, negative uniform over all other rooms.
pub fn sample_coarse_triplet(
    records: &[ImageRecord],
    rng: &mut impl Rng,
) -> Result<TripletIndex, MiningError> {
    let rooms = room_index(records);
    if rooms.len() < 2 {
        return Err(MiningError::InsufficientRooms);
    }
    if rooms.values().all(|members| members.len() < 2) {
        return Err(MiningError::NoPositiveAvailable);
    }
    let n = records.len();
    for _ in 0..attempt_cap(n) {
        let anchor = rng.gen_range(0..n);
        let members = &rooms[records[anchor].room.as_str()];
        if members.len() < 2 {
            continue;
        }
        let positive = pick_excluding(members, anchor, rng);
        let negative = pick_outside(n, members, rng);
        return Ok(TripletIndex { anchor, positive, negative });
    }
    Err(MiningError::NoPositiveAvailable)
}

/// Draw one triplet under the pose predicates in `cfg`. Positives must lie
/// within `r_plus` of the anchor (same room unless disabled); negatives are
/// any record farther than `r_minus`, regardless of room.
pub fn sample_fine_triplet(
    records: &[ImageRecord],
    cfg: &MiningConfig,
    rng: &mut impl Rng,
) -> Result<TripletIndex, MiningError> {
    cfg.validate()?;
    let n = records.len();
    if n == 0 {
        return Err(MiningError::NoPositiveAvailable);
    }
    let mut saw_positive = false;
    for _ in 0..attempt_cap(n) {
        let anchor = rng.gen_range(0..n);
        let a = &records[anchor];
        let positives: Vec<usize> = (0..n)
            .filter(|&j| {
                j != anchor
                    && records[j].pose.distance(&a.pose) <= cfg.r_plus
                    && (!cfg.same_room_positives || records[j].room == a.room)
            })
            .collect();
        if positives.is_empty() {
            continue;
        }
        saw_positive = true;
        let positive = positives[rng.gen_range(0..positives.len())];
        let negatives: Vec<usize> = (0..n)
            .filter(|&j| {
                j != anchor && j != positive && records[j].pose.distance(&a.pose) > cfg.r_minus
            })
            .collect();
        if negatives.is_empty() {
            continue;
        }
        let negative = negatives[rng.gen_range(0..negatives.len())];
        return Ok(TripletIndex { anchor, positive, negative });
    }
    if saw_positive {
        Err(MiningError::NoNegativeAvailable)
    } else {
        Err(MiningError::NoPositiveAvailable)
    }
}

/// Fail-fast check that coarse sampling can succeed on this dataset.
pub fn validate_coarse(records: &[ImageRecord]) -> Result<(), MiningError> {
    let rooms = room_index(records);
    if rooms.len() < 2 {
        return Err(MiningError::InsufficientRooms);
    }
    if rooms.values().all(|members| members.len() < 2) {
        return Err(MiningError::NoPositiveAvailable);
    }
    Ok(())
}

/// Fail-fast check that fine sampling can succeed on this dataset.
pub fn validate_fine(records: &[ImageRecord], cfg: &MiningConfig) -> Result<(), MiningError> {
    cfg.validate()?;
    let n = records.len();
    let mut saw_positive = false;
    for anchor in 0..n {
        let a = &records[anchor];
        let has_positive = records.iter().enumerate().any(|(j, r)| {
            j != anchor
                && r.pose.distance(&a.pose) <= cfg.r_plus
                && (!cfg.same_room_positives || r.room == a.room)
        });
        if !has_positive {
            continue;
        }
        saw_positive = true;
        let negatives = (0..n)
            .filter(|&j| j != anchor && records[j].pose.distance(&a.pose) > cfg.r_minus)
            .count();
        // A lone metric-negative could coincide with the only positive; two
        // candidates always leave one after the positive is excluded.
        if negatives >= 2 {
            return Ok(());
        }
        if negatives == 1 {
            let only = (0..n)
                .find(|&j| j != anchor && records[j].pose.distance(&a.pose) > cfg.r_minus)
                .expect("counted above");
            let positive_candidates = (0..n)
                .filter(|&j| {
                    j != anchor
                        && records[j].pose.distance(&a.pose) <= cfg.r_plus
                        && (!cfg.same_room_positives || records[j].room == a.room)
                })
                .count();
            let only_is_positive = records[only].pose.distance(&a.pose) <= cfg.r_plus
                && (!cfg.same_room_positives || records[only].room == a.room);
            if !only_is_positive || positive_candidates >= 2 {
                return Ok(());
            }
        }
    }
    if saw_positive {
        Err(MiningError::NoNegativeAvailable)
    } else {
        Err(MiningError::NoPositiveAvailable)
    }
}

/// Room-stratified subsample of `n` records, original order preserved.
///
/// With `n` at least the number of rooms, every room keeps one uniformly
/// chosen image and the remaining slots fill uniformly from the rest; with
/// fewer slots than rooms, `n` distinct rooms are drawn and each contributes
/// one image. `n = 0` yields an empty subset.
pub fn subsample_dataset(
    records: &[ImageRecord],
    n: usize,
    seed: u64,
) -> Result<Vec<ImageRecord>, MiningError> {
    use rand::SeedableRng;
    if n > records.len() {
        return Err(MiningError::TooFewImages { requested: n, available: records.len() });
    }
    if n == records.len() {
        return Ok(records.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rooms = room_index(records);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    if n >= rooms.len() {
        for members in rooms.values() {
            chosen.push(members[rng.gen_range(0..members.len())]);
        }
        let mut rest: Vec<usize> =
            (0..records.len()).filter(|i| !chosen.contains(i)).collect();
        let extra = n - chosen.len();
        partial_shuffle(&mut rest, extra, &mut rng);
        chosen.extend_from_slice(&rest[..extra]);
    } else {
        let mut room_keys: Vec<&str> = rooms.keys().copied().collect();
        partial_shuffle(&mut room_keys, n, &mut rng);
        for key in &room_keys[..n] {
            let members = &rooms[key];
            chosen.push(members[rng.gen_range(0..members.len())]);
        }
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| records[i].clone()).collect())
}

/// Uniform pick from `members` excluding the given index.
fn pick_excluding(members: &[usize], excluded: usize, rng: &mut impl Rng) -> usize {
    let k = rng.gen_range(0..members.len() - 1);
    let mut it = members.iter().filter(|&&m| m != excluded);
    *it.nth(k).expect("k < members.len() - 1")
}

/// Uniform pick over `0..n` excluding the sorted positions in `members`.
fn pick_outside(n: usize, members: &[usize], rng: &mut impl Rng) -> usize {
    let mut idx = rng.gen_range(0..n - members.len());
    for &m in members {
        if m <= idx {
            idx += 1;
        } else {
            break;
        }
    }
    idx
}

/// Move `count` uniformly chosen elements (without replacement) to the front.
fn partial_shuffle<T>(items: &mut [T], count: usize, rng: &mut impl Rng) {
    let count = count.min(items.len());
    for i in 0..count {
        let j = rng.gen_range(i..items.len());
        items.swap(i, j);
    }
}
