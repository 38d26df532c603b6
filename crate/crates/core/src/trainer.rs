//! Seeded training loop: sample triplets, embed them, score the configured
//! loss, backpropagate through the encoder, and apply plain gradient descent.
//!
//! The curriculum weight advances by triplets consumed (`step * batch_size`
//! out of `total_triplets`), so it starts at exactly 1 and approaches 0 at
//! the end of the run regardless of batch size. Everything is reproducible
//! from the seeds: same dataset, config, and seeds give bitwise-identical
//! parameters and logs.

use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{Descriptor, ImageRecord};
use crate::encoder::{
    encoder_backward, encoder_forward, encoder_init, input_features, sgd_step, EncoderError,
    EncoderParams,
};
use crate::losses::{
    curriculum_forward, curriculum_gradient, curriculum_weight, loss_forward, loss_gradient,
    LossError, LossKind, LossParams, LossSpec,
};
use crate::mining::{
    sample_coarse_triplet, sample_fine_triplet, validate_coarse, validate_fine, MiningConfig,
    MiningError, MiningStage, TripletIndex,
};
use crate::retrieval::{
    build_visual_map, coarse_localize, room_representatives, single_step_localize,
    RetrievalConfig, RetrievalError,
};

/// Optimization settings and encoder architecture for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Triplets per optimization step.
    pub batch_size: usize,
    /// Total triplets consumed over the run; the step count is the ceiling
    /// of `total_triplets / batch_size`.
    pub total_triplets: usize,
    /// Seed for the encoder parameter initialization.
    pub seed: u64,
    pub loss: LossSpec,
    /// Hidden-layer widths between the input and the descriptor.
    pub hidden: Vec<usize>,
    pub descriptor_dim: usize,
    /// Pooling grid for pixel-only records.
    pub grid: (usize, usize),
    /// Hit threshold for the fine-stage validation metric.
    pub validation_distance: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 4,
            total_triplets: 50_000,
            seed: 0,
            loss: LossSpec::curriculum(
                LossKind::CurriculumTlBh,
                LossParams::with_margin(0.75),
                LossParams::with_margin(1.0),
            ),
            hidden: alloc::vec![256, 64],
            descriptor_dim: 64,
            grid: (16, 64),
            validation_distance: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::InvalidConfig("learning rate must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1"));
        }
        if self.total_triplets == 0 {
            return Err(TrainError::InvalidConfig("total triplets must be at least 1"));
        }
        if self.descriptor_dim == 0 {
            return Err(TrainError::InvalidConfig("descriptor dimension must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(TrainError::InvalidConfig("hidden widths must be nonzero"));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(TrainError::InvalidConfig("pooling grid must be nonzero"));
        }
        if !(self.validation_distance.is_finite() && self.validation_distance > 0.0) {
            return Err(TrainError::InvalidConfig("validation distance must be positive"));
        }
        self.loss.validate()?;
        Ok(())
    }

    /// `[input, hidden.., output]` for a given input width.
    fn shape(&self, input_dim: usize) -> Vec<usize> {
        let mut shape = alloc::vec![input_dim];
        shape.extend_from_slice(&self.hidden);
        shape.push(self.descriptor_dim);
        shape
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Mining(MiningError),
    Encoder(EncoderError),
    Loss(LossError),
    Retrieval(RetrievalError),
    /// The loss or a parameter stopped being finite at this step.
    NonFinite { step: usize },
    InvalidConfig(&'static str),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Mining(e) => write!(f, "{e}"),
            TrainError::Encoder(e) => write!(f, "{e}"),
            TrainError::Loss(e) => write!(f, "{e}"),
            TrainError::Retrieval(e) => write!(f, "{e}"),
            TrainError::NonFinite { step } => {
                write!(f, "training diverged: non-finite value at step {step}")
            }
            TrainError::InvalidConfig(what) => write!(f, "invalid training config: {what}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<MiningError> for TrainError {
    fn from(e: MiningError) -> TrainError {
        TrainError::Mining(e)
    }
}

impl From<EncoderError> for TrainError {
    fn from(e: EncoderError) -> TrainError {
        TrainError::Encoder(e)
    }
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> TrainError {
        TrainError::Loss(e)
    }
}

impl From<RetrievalError> for TrainError {
    fn from(e: RetrievalError) -> TrainError {
        TrainError::Retrieval(e)
    }
}

/// One optimization step as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub w: f64,
    pub loss: f64,
}

/// One held-out check: the stage metric (room accuracy for the coarse stage,
/// recall within the validation distance for the fine stage).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRecord {
    pub step: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub validations: Vec<ValidationRecord>,
    /// Wall-clock time, filled by callers that have a clock.
    pub duration: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Parameters after the last step.
    pub params: EncoderParams,
    /// Parameters at the best validation metric; present when a validation
    /// set was given.
    pub best_params: Option<EncoderParams>,
    pub best_validation: Option<ValidationRecord>,
    pub log: TrainLog,
}

/// Featurize every record up front, checking that all rows agree on length.
fn gather_features(
    records: &[ImageRecord],
    grid: (usize, usize),
) -> Result<Vec<Vec<f64>>, TrainError> {
    let features: Vec<Vec<f64>> = records
        .iter()
        .map(|r| input_features(r, grid))
        .collect::<Result<_, EncoderError>>()?;
    if let Some(first) = features.first() {
        if features.iter().any(|f| f.len() != first.len()) {
            return Err(TrainError::InvalidConfig("records disagree on feature length"));
        }
        if first.is_empty() {
            return Err(TrainError::InvalidConfig("records have empty feature vectors"));
        }
    }
    Ok(features)
}

/// Run the full training loop on `records`, mining triplets per the stage in
/// `mining`. When a held-out `validation` set is given, the stage metric is
/// measured every tenth of the run and the best parameters are retained
/// alongside the final ones.
pub fn train(
    records: &[ImageRecord],
    mining: &MiningConfig,
    config: &TrainConfig,
    validation: Option<&[ImageRecord]>,
) -> Result<TrainResult, TrainError> {
    config.validate()?;
    mining.validate()?;
    match mining.stage {
        MiningStage::Coarse => validate_coarse(records)?,
        MiningStage::Fine => validate_fine(records, mining)?,
    }
    if let Some(val) = validation {
        if val.len() < 2 {
            return Err(TrainError::InvalidConfig(
                "validation needs at least two records (map and query halves)",
            ));
        }
    }

    let features = gather_features(records, config.grid)?;
    let input_dim = features[0].len();
    let mut params = encoder_init(&config.shape(input_dim), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mining.seed);

    let n = config.batch_size;
    let total = config.total_triplets;
    let steps_total = total.div_ceil(n);
    let validation_interval = (steps_total / 10).max(1);

    let mut log = TrainLog::default();
    let mut best: Option<(EncoderParams, ValidationRecord)> = None;

    for step in 0..steps_total {
        let w = curriculum_weight(config.loss.schedule, (step * n).min(total), total)?;

        let mut triplets: Vec<TripletIndex> = Vec::with_capacity(n);
        for _ in 0..n {
            let t = match mining.stage {
                MiningStage::Coarse => sample_coarse_triplet(records, &mut rng)?,
                MiningStage::Fine => sample_fine_triplet(records, mining, &mut rng)?,
            };
            triplets.push(t);
        }

        let encode = |idx: usize| -> Result<Descriptor, TrainError> {
            Ok(encoder_forward(&params, &features[idx])?)
        };
        let anchors: Vec<Descriptor> =
            triplets.iter().map(|t| encode(t.anchor)).collect::<Result<_, _>>()?;
        let positives: Vec<Descriptor> =
            triplets.iter().map(|t| encode(t.positive)).collect::<Result<_, _>>()?;
        let negatives: Vec<Descriptor> =
            triplets.iter().map(|t| encode(t.negative)).collect::<Result<_, _>>()?;
        let batch = crate::losses::TripletBatch::new(anchors, positives, negatives)?;

        let (loss_value, grads) = if config.loss.kind.is_curriculum() {
            (
                curriculum_forward(&config.loss, w, &batch)?,
                curriculum_gradient(&config.loss, w, &batch)?,
            )
        } else {
            (
                loss_forward(config.loss.kind, &config.loss.params1, &batch)?,
                loss_gradient(config.loss.kind, &config.loss.params1, &batch)?,
            )
        };
        if !loss_value.is_finite() {
            return Err(TrainError::NonFinite { step });
        }

        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(3 * n);
        let mut upstream: Vec<Vec<f64>> = Vec::with_capacity(3 * n);
        for (i, t) in triplets.iter().enumerate() {
            inputs.push(features[t.anchor].clone());
            upstream.push(grads.anchors[i].clone());
        }
        for (i, t) in triplets.iter().enumerate() {
            inputs.push(features[t.positive].clone());
            upstream.push(grads.positives[i].clone());
        }
        for (i, t) in triplets.iter().enumerate() {
            inputs.push(features[t.negative].clone());
            upstream.push(grads.negatives[i].clone());
        }
        let param_grads = encoder_backward(&params, &inputs, &upstream)?;
        sgd_step(&mut params, &param_grads, config.learning_rate)?;
        if !params.is_finite() {
            return Err(TrainError::NonFinite { step });
        }

        log.steps.push(StepRecord { step, w, loss: loss_value });

        let last_step = step + 1 == steps_total;
        if let Some(val) =
            validation.filter(|_| (step + 1) % validation_interval == 0 || last_step)
        {
            let metric = validation_metric(&params, val, config, mining.stage)?;
            let record = ValidationRecord { step, metric };
            log.validations.push(record);
            let improved = match &best {
                None => true,
                Some((_, b)) => metric > b.metric,
            };
            if improved {
                best = Some((params.clone(), record));
            }
        }
    }

    let (best_params, best_validation) = match best {
        Some((p, v)) => (Some(p), Some(v)),
        None => (None, None),
    };
    Ok(TrainResult { params, best_params, best_validation, log })
}

/// Stage metric on a held-out set: the even-indexed records act as the map,
/// the odd-indexed ones as queries. Coarse: fraction of queries whose
/// best-room candidates include the true room. Fine: fraction retrieved
/// within the validation distance by whole-map nearest neighbor.
fn validation_metric(
    params: &EncoderParams,
    validation: &[ImageRecord],
    config: &TrainConfig,
    stage: MiningStage,
) -> Result<f64, TrainError> {
    let map_records: Vec<ImageRecord> =
        validation.iter().step_by(2).cloned().collect();
    let queries: Vec<&ImageRecord> = validation.iter().skip(1).step_by(2).collect();
    if map_records.is_empty() || queries.is_empty() {
        return Err(TrainError::InvalidConfig("validation split too small"));
    }
    let map = build_visual_map(&map_records, params, config.grid)?;
    let cfg = RetrievalConfig::default();
    let mut hits = 0usize;
    match stage {
        MiningStage::Coarse => {
            let reps = room_representatives(&map);
            for q in &queries {
                let feats = input_features(q, config.grid)?;
                let d = encoder_forward(params, &feats)?;
                let rooms = coarse_localize(&d, &reps, &cfg)?;
                if rooms.iter().any(|p| p.room == q.room) {
                    hits += 1;
                }
            }
        }
        MiningStage::Fine => {
            for q in &queries {
                let feats = input_features(q, config.grid)?;
                let d = encoder_forward(params, &feats)?;
                let result = single_step_localize(&d, &map, &cfg)?;
                if result.estimated_pose.distance(&q.pose) <= config.validation_distance {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

/// Train with room-label triplets (anchor and positive share a room, the
/// negative comes from another room).
pub fn train_coarse(
    records: &[ImageRecord],
    config: &TrainConfig,
    mining_seed: u64,
    validation: Option<&[ImageRecord]>,
) -> Result<TrainResult, TrainError> {
    let mining =
        MiningConfig { stage: MiningStage::Coarse, seed: mining_seed, ..MiningConfig::default() };
    train(records, &mining, config, validation)
}

/// Train with metric triplets (positive within `r_plus` of the anchor,
/// negative farther than `r_minus`), using the default 0.4 thresholds.
pub fn train_fine(
    records: &[ImageRecord],
    config: &TrainConfig,
    mining_seed: u64,
    validation: Option<&[ImageRecord]>,
) -> Result<TrainResult, TrainError> {
    let mining =
        MiningConfig { stage: MiningStage::Fine, seed: mining_seed, ..MiningConfig::default() };
    train(records, &mining, config, validation)
}
