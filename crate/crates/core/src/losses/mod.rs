//! The triplet loss family: seven base losses over anchor/positive/negative
//! batches plus curriculum combinations that blend two of them under a
//! decaying weight.
//!
//! Forward values and analytic gradients are exact derivatives of each other;
//! at hinge kinks the zero subgradient is chosen, and max/min selections send
//! gradient only to the selected triplet (ties resolve to the lowest index).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::descriptor::{self, Descriptor};
use crate::math;

mod forward;
mod gradient;

/// Loss selector. Base kinds score one batch; `Curriculum*` kinds blend the
/// two named base kinds as `w * first + (1 - w) * second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean hinge on per-triplet margin violations.
    TripletMargin,
    /// Mean hinge on positive distance plus a soft max over both negative pairs.
    LiftedEmbedding,
    /// Hinge on the single worst margin violation in the batch.
    LazyTriplet,
    /// Mean hinge against the batch-wide closest negative.
    SemiHard,
    /// Hinge on farthest-positive minus closest-negative.
    BatchHard,
    /// Log-sum-exp over similarity terms weighted by their slack to fixed optima.
    Circle,
    /// Log-sum-exp over angle-based terms built from raw dot products.
    Angular,
    CurriculumTlLt,
    CurriculumTlBh,
    CurriculumLtBh,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::TripletMargin,
        LossKind::LiftedEmbedding,
        LossKind::LazyTriplet,
        LossKind::SemiHard,
        LossKind::BatchHard,
        LossKind::Circle,
        LossKind::Angular,
        LossKind::CurriculumTlLt,
        LossKind::CurriculumTlBh,
        LossKind::CurriculumLtBh,
    ];

    /// Stable token used in config files and logs.
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::TripletMargin => "TL",
            LossKind::LiftedEmbedding => "LE",
            LossKind::LazyTriplet => "LT",
            LossKind::SemiHard => "SH",
            LossKind::BatchHard => "BH",
            LossKind::Circle => "CL",
            LossKind::Angular => "AL",
            LossKind::CurriculumTlLt => "CV_TL_LT",
            LossKind::CurriculumTlBh => "CV_TL_BH",
            LossKind::CurriculumLtBh => "CV_LT_BH",
        }
    }

    /// Inverse of [`LossKind::name`].
    pub fn parse(token: &str) -> Option<LossKind> {
        LossKind::ALL.iter().copied().find(|k| k.name() == token)
    }

    pub fn is_curriculum(&self) -> bool {
        self.components().is_some()
    }

    /// The two base kinds a curriculum kind blends, in schedule order.
    pub fn components(&self) -> Option<(LossKind, LossKind)> {
        match self {
            LossKind::CurriculumTlLt => Some((LossKind::TripletMargin, LossKind::LazyTriplet)),
            LossKind::CurriculumTlBh => Some((LossKind::TripletMargin, LossKind::BatchHard)),
            LossKind::CurriculumLtBh => Some((LossKind::LazyTriplet, LossKind::BatchHard)),
            _ => None,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar parameters for one base loss.
///
/// `margin` applies to every kind except `Angular`; `scale` is the Circle
/// loss exponent scale; `angle_deg` is the Angular loss cone angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub margin: f64,
    pub scale: Option<f64>,
    pub angle_deg: Option<f64>,
}

impl LossParams {
    pub fn with_margin(margin: f64) -> LossParams {
        LossParams { margin, scale: None, angle_deg: None }
    }

    pub fn circle(margin: f64, scale: f64) -> LossParams {
        LossParams { margin, scale: Some(scale), angle_deg: None }
    }

    pub fn angular(angle_deg: f64) -> LossParams {
        LossParams { margin: 0.0, scale: None, angle_deg: Some(angle_deg) }
    }
}

impl Default for LossParams {
    fn default() -> LossParams {
        LossParams::with_margin(0.5)
    }
}

/// Decay shape for the curriculum weight `w` over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightShape {
    /// `w = 1 - step / total`.
    #[default]
    Linear,
    /// Half-cosine from 1 to 0.
    Cosine,
}

impl WeightShape {
    pub fn name(&self) -> &'static str {
        match self {
            WeightShape::Linear => "linear",
            WeightShape::Cosine => "cosine",
        }
    }

    pub fn parse(token: &str) -> Option<WeightShape> {
        match token {
            "linear" => Some(WeightShape::Linear),
            "cosine" => Some(WeightShape::Cosine),
            _ => None,
        }
    }
}

/// A fully specified loss: kind, parameters for each component, and the
/// weight schedule used when the kind is a curriculum combination.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub params1: LossParams,
    pub params2: Option<LossParams>,
    pub schedule: WeightShape,
}

impl LossSpec {
    pub fn base(kind: LossKind, params: LossParams) -> LossSpec {
        LossSpec { kind, params1: params, params2: None, schedule: WeightShape::Linear }
    }

    pub fn curriculum(kind: LossKind, params1: LossParams, params2: LossParams) -> LossSpec {
        LossSpec { kind, params1, params2: Some(params2), schedule: WeightShape::Linear }
    }

    /// Check parameter presence and ranges against the kind.
    pub fn validate(&self) -> Result<(), LossError> {
        match self.kind.components() {
            Some((k1, k2)) => {
                let p2 = self.params2.as_ref().ok_or(LossError::MissingParam("params2"))?;
                validate_params(k1, &self.params1)?;
                validate_params(k2, p2)
            }
            None => {
                if self.params2.is_some() {
                    return Err(LossError::InvalidKind);
                }
                validate_params(self.kind, &self.params1)
            }
        }
    }
}

/// Errors from batch construction, parameter validation, and scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossError {
    EmptyBatch,
    DimensionMismatch { left: usize, right: usize },
    /// Lengths of the anchor/positive/negative lists differ.
    LengthMismatch { anchors: usize, positives: usize, negatives: usize },
    NonFinite,
    /// Curriculum operation on a base kind, or base operation on a curriculum kind.
    InvalidKind,
    MissingParam(&'static str),
    InvalidParam(&'static str),
    StepOutOfRange { step: usize, total: usize },
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::EmptyBatch => write!(f, "batch must contain at least one triplet"),
            LossError::DimensionMismatch { left, right } => {
                write!(f, "descriptor dimension mismatch: {left} vs {right}")
            }
            LossError::LengthMismatch { anchors, positives, negatives } => write!(
                f,
                "triplet lists differ in length: {anchors} anchors, {positives} positives, {negatives} negatives"
            ),
            LossError::NonFinite => write!(f, "batch contains a non-finite value"),
            LossError::InvalidKind => write!(f, "loss kind does not support this operation"),
            LossError::MissingParam(p) => write!(f, "missing loss parameter: {p}"),
            LossError::InvalidParam(p) => write!(f, "loss parameter out of range: {p}"),
            LossError::StepOutOfRange { step, total } => {
                write!(f, "schedule step {step} outside 0..={total}")
            }
        }
    }
}

impl core::error::Error for LossError {}

/// An aligned batch of anchor/positive/negative embedding rows.
///
/// Rows normally come from [`Descriptor`]s and are unit norm. The raw
/// constructor skips that guarantee so numerical probes can evaluate the loss
/// in a neighborhood of the sphere; the loss math itself never renormalizes.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    anchors: Vec<Vec<f64>>,
    positives: Vec<Vec<f64>>,
    negatives: Vec<Vec<f64>>,
    dim: usize,
}

impl TripletBatch {
    pub fn new(
        anchors: Vec<Descriptor>,
        positives: Vec<Descriptor>,
        negatives: Vec<Descriptor>,
    ) -> Result<TripletBatch, LossError> {
        TripletBatch::from_raw(
            anchors.into_iter().map(Descriptor::into_vec).collect(),
            positives.into_iter().map(Descriptor::into_vec).collect(),
            negatives.into_iter().map(Descriptor::into_vec).collect(),
        )
    }

    /// Build a batch from plain rows without a unit-norm check.
    pub fn from_raw(
        anchors: Vec<Vec<f64>>,
        positives: Vec<Vec<f64>>,
        negatives: Vec<Vec<f64>>,
    ) -> Result<TripletBatch, LossError> {
        if anchors.len() != positives.len() || anchors.len() != negatives.len() {
            return Err(LossError::LengthMismatch {
                anchors: anchors.len(),
                positives: positives.len(),
                negatives: negatives.len(),
            });
        }
        if anchors.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        let dim = anchors[0].len();
        if dim == 0 {
            return Err(LossError::DimensionMismatch { left: 0, right: 0 });
        }
        for row in anchors.iter().chain(&positives).chain(&negatives) {
            if row.len() != dim {
                return Err(LossError::DimensionMismatch { left: dim, right: row.len() });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(LossError::NonFinite);
            }
        }
        Ok(TripletBatch { anchors, positives, negatives, dim })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i]
    }

    pub fn positive(&self, i: usize) -> &[f64] {
        &self.positives[i]
    }

    pub fn negative(&self, i: usize) -> &[f64] {
        &self.negatives[i]
    }
}

/// Per-triplet distances and similarities the hinge losses consume.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    /// Euclidean anchor-positive distances.
    pub d_ap: Vec<f64>,
    /// Euclidean anchor-negative distances.
    pub d_an: Vec<f64>,
    /// Euclidean positive-negative distances.
    pub d_pn: Vec<f64>,
    /// Anchor-positive similarities (dot products clamped to `[-1, 1]`).
    pub s_p: Vec<f64>,
    /// Anchor-negative similarities (dot products clamped to `[-1, 1]`).
    pub s_n: Vec<f64>,
}

/// Compute all pairwise distances and similarities for a batch.
pub fn distance_profile(batch: &TripletBatch) -> DistanceProfile {
    let n = batch.len();
    let mut p = DistanceProfile {
        d_ap: Vec::with_capacity(n),
        d_an: Vec::with_capacity(n),
        d_pn: Vec::with_capacity(n),
        s_p: Vec::with_capacity(n),
        s_n: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (a, pos, neg) = (batch.anchor(i), batch.positive(i), batch.negative(i));
        p.d_ap.push(descriptor::euclidean_slices(a, pos));
        p.d_an.push(descriptor::euclidean_slices(a, neg));
        p.d_pn.push(descriptor::euclidean_slices(pos, neg));
        p.s_p.push(descriptor::dot(a, pos).clamp(-1.0, 1.0));
        p.s_n.push(descriptor::dot(a, neg).clamp(-1.0, 1.0));
    }
    p
}

/// Gradient of a loss with respect to every batch entry, row-aligned with the
/// batch that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

impl BatchGradients {
    fn zeros(n: usize, dim: usize) -> BatchGradients {
        BatchGradients {
            anchors: vec![vec![0.0; dim]; n],
            positives: vec![vec![0.0; dim]; n],
            negatives: vec![vec![0.0; dim]; n],
        }
    }

    /// `self += coeff * other`, entry by entry.
    fn accumulate(&mut self, other: &BatchGradients, coeff: f64) {
        let add = |dst: &mut Vec<Vec<f64>>, src: &Vec<Vec<f64>>| {
            for (d, s) in dst.iter_mut().zip(src) {
                for (x, y) in d.iter_mut().zip(s) {
                    *x += coeff * y;
                }
            }
        };
        add(&mut self.anchors, &other.anchors);
        add(&mut self.positives, &other.positives);
        add(&mut self.negatives, &other.negatives);
    }
}

fn validate_params(kind: LossKind, params: &LossParams) -> Result<(), LossError> {
    if kind.is_curriculum() {
        return Err(LossError::InvalidKind);
    }
    if kind != LossKind::Angular && !(params.margin >= 0.0 && params.margin.is_finite()) {
        return Err(LossError::InvalidParam("margin"));
    }
    if kind == LossKind::Circle {
        match params.scale {
            Some(s) if s > 0.0 && s.is_finite() => {}
            Some(_) => return Err(LossError::InvalidParam("scale")),
            None => return Err(LossError::MissingParam("scale")),
        }
    }
    if kind == LossKind::Angular {
        match params.angle_deg {
            Some(a) if a > 0.0 && a < 90.0 => {}
            Some(_) => return Err(LossError::InvalidParam("angle")),
            None => return Err(LossError::MissingParam("angle")),
        }
    }
    Ok(())
}

/// Evaluate one base loss on a batch.
pub fn loss_forward(
    kind: LossKind,
    params: &LossParams,
    batch: &TripletBatch,
) -> Result<f64, LossError> {
    validate_params(kind, params)?;
    let profile = distance_profile(batch);
    Ok(forward::forward_base(kind, params, batch, &profile))
}

/// Analytic gradient of [`loss_forward`] with respect to every batch entry.
pub fn loss_gradient(
    kind: LossKind,
    params: &LossParams,
    batch: &TripletBatch,
) -> Result<BatchGradients, LossError> {
    validate_params(kind, params)?;
    let profile = distance_profile(batch);
    Ok(gradient::gradient_base(kind, params, batch, &profile))
}

/// Curriculum weight after `step` of `total` scheduled units.
///
/// Endpoints are exact for every shape: `w(0) = 1`, `w(total) = 0`.
pub fn curriculum_weight(shape: WeightShape, step: usize, total: usize) -> Result<f64, LossError> {
    if total == 0 {
        return Err(LossError::InvalidParam("total"));
    }
    if step > total {
        return Err(LossError::StepOutOfRange { step, total });
    }
    if step == 0 {
        return Ok(1.0);
    }
    if step == total {
        return Ok(0.0);
    }
    let frac = step as f64 / total as f64;
    Ok(match shape {
        WeightShape::Linear => 1.0 - frac,
        WeightShape::Cosine => 0.5 * (1.0 + math::cos(core::f64::consts::PI * frac)),
    })
}

fn curriculum_parts(spec: &LossSpec, w: f64) -> Result<(LossKind, LossKind), LossError> {
    if !(0.0..=1.0).contains(&w) || !w.is_finite() {
        return Err(LossError::InvalidParam("w"));
    }
    spec.validate()?;
    spec.kind.components().ok_or(LossError::InvalidKind)
}

/// Blended forward value `w * first + (1 - w) * second` for a curriculum spec.
pub fn curriculum_forward(spec: &LossSpec, w: f64, batch: &TripletBatch) -> Result<f64, LossError> {
    let (k1, k2) = curriculum_parts(spec, w)?;
    let p2 = spec.params2.as_ref().expect("validated");
    let profile = distance_profile(batch);
    let l1 = forward::forward_base(k1, &spec.params1, batch, &profile);
    let l2 = forward::forward_base(k2, p2, batch, &profile);
    Ok(w * l1 + (1.0 - w) * l2)
}

/// Gradient of [`curriculum_forward`] at fixed `w`.
pub fn curriculum_gradient(
    spec: &LossSpec,
    w: f64,
    batch: &TripletBatch,
) -> Result<BatchGradients, LossError> {
    let (k1, k2) = curriculum_parts(spec, w)?;
    let p2 = spec.params2.as_ref().expect("validated");
    let profile = distance_profile(batch);
    let mut g = gradient::gradient_base(k1, &spec.params1, batch, &profile);
    let g2 = gradient::gradient_base(k2, p2, batch, &profile);
    for row in g.anchors.iter_mut().chain(&mut g.positives).chain(&mut g.negatives) {
        for x in row.iter_mut() {
            *x *= w;
        }
    }
    g.accumulate(&g2, 1.0 - w);
    Ok(g)
}

pub(crate) fn hinge(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Index of the maximum value, first occurrence on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the minimum value, first occurrence on ties.
pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Stable `ln(exp(a) + exp(b))`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + math::ln(math::exp(a - m) + math::exp(b - m))
}
