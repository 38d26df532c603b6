#![cfg_attr(not(test), no_std)]

//! Metric-learning core for hierarchical indoor place recognition.
//!
//! The crate is `no_std` (alloc only) and carries the numeric pipeline:
//! unit-norm descriptors and distances, the triplet loss family with
//! curriculum combinations, pose-based triplet mining, a small feed-forward
//! encoder with analytic gradients, the training loop, two-stage retrieval,
//! and raster perturbation effects. File formats and the command-line tools
//! live in the companion `tripletloc` crate.

extern crate alloc;

pub mod descriptor;
pub mod effects;
pub mod encoder;
pub mod losses;
pub mod mining;
pub mod retrieval;
pub mod synth;
pub mod trainer;
mod math;

pub use descriptor::{
    cosine, euclidean, normalize, Descriptor, ImageRecord, Pose, Raster, RasterError,
    VectorError, ZERO_NORM_EPS,
};
pub use effects::{
    add_gaussian_noise, apply_effect, motion_blur, occlude_columns, EffectError, EffectSpec,
    OcclusionStart,
};
pub use encoder::{
    encoder_backward, encoder_forward, encoder_init, featurize, input_features, sgd_step,
    EncoderError, EncoderParams, Layer, LayerGradient, ParamGradients, DEFAULT_GRID,
};
pub use losses::{
    curriculum_forward, curriculum_gradient, curriculum_weight, distance_profile, loss_forward,
    loss_gradient, BatchGradients, DistanceProfile, LossError, LossKind, LossParams, LossSpec,
    TripletBatch, WeightShape,
};
pub use mining::{
    sample_coarse_triplet, sample_fine_triplet, subsample_dataset, MiningConfig, MiningError,
    MiningStage, TripletIndex,
};
pub use synth::{
    generate_synthetic, split_dataset, DatasetSplits, SplitConfig, SynthError, SynthSpec,
};
pub use retrieval::{
    build_visual_map, coarse_localize, evaluate, fine_localize, hierarchical_localize,
    room_representatives, single_step_localize, EvalContext, EvalMode, Evaluation,
    LocalizationResult, MapEntry, Metric, NearestMatch, QueryOutcome, RetrievalConfig,
    RetrievalError, RoomPrediction, RoomRep, RoomRepresentatives, VisualMap,
};
pub use trainer::{
    train, train_coarse, train_fine, StepRecord, TrainConfig, TrainError, TrainLog, TrainResult,
    ValidationRecord,
};
