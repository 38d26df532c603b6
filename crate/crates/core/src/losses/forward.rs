//! Forward evaluation of the seven base losses.

use alloc::vec::Vec;

use crate::descriptor::dot;
use crate::math;

use super::{argmax, argmin, hinge, log_add_exp, DistanceProfile, LossKind, LossParams, TripletBatch};

pub(super) fn forward_base(
    kind: LossKind,
    params: &LossParams,
    batch: &TripletBatch,
    profile: &DistanceProfile,
) -> f64 {
    match kind {
        LossKind::TripletMargin => triplet_margin(params.margin, profile),
        LossKind::LiftedEmbedding => lifted_embedding(params.margin, profile),
        LossKind::LazyTriplet => lazy_triplet(params.margin, profile),
        LossKind::SemiHard => semi_hard(params.margin, profile),
        LossKind::BatchHard => batch_hard(params.margin, profile),
        LossKind::Circle => circle(params.margin, params.scale.expect("validated"), profile),
        LossKind::Angular => angular(params.angle_deg.expect("validated"), batch),
        _ => unreachable!("curriculum kinds are dispatched before forward_base"),
    }
}

fn triplet_margin(m: f64, p: &DistanceProfile) -> f64 {
    let n = p.d_ap.len() as f64;
    let sum: f64 = p
        .d_ap
        .iter()
        .zip(&p.d_an)
        .map(|(ap, an)| hinge(ap - an + m))
        .sum();
    sum / n
}

fn lifted_embedding(m: f64, p: &DistanceProfile) -> f64 {
    let n = p.d_ap.len() as f64;
    let sum: f64 = (0..p.d_ap.len())
        .map(|i| hinge(p.d_ap[i] + log_add_exp(m - p.d_an[i], m - p.d_pn[i])))
        .sum();
    sum / n
}

fn lazy_triplet(m: f64, p: &DistanceProfile) -> f64 {
    let pre: Vec<f64> = p.d_ap.iter().zip(&p.d_an).map(|(ap, an)| ap - an + m).collect();
    hinge(pre[argmax(&pre)])
}

fn semi_hard(m: f64, p: &DistanceProfile) -> f64 {
    let n = p.d_ap.len() as f64;
    let d_min = p.d_an[argmin(&p.d_an)];
    let sum: f64 = p.d_ap.iter().map(|ap| hinge(ap - d_min + m)).sum();
    sum / n
}

fn batch_hard(m: f64, p: &DistanceProfile) -> f64 {
    let d_max = p.d_ap[argmax(&p.d_ap)];
    let d_min = p.d_an[argmin(&p.d_an)];
    hinge(d_max - d_min + m)
}

/// Per-pair exponent terms of the circle loss: `gamma * alpha_n * s_n` for
/// negatives and `-gamma * alpha_p * s_p` for positives, where the weights
/// `alpha` are hinges on the slack to the fixed optima `1 - m` and `m`.
pub(super) fn circle_terms(m: f64, gamma: f64, p: &DistanceProfile) -> (Vec<f64>, Vec<f64>) {
    let o_p = 1.0 - m;
    let o_n = m;
    let t_p = p.s_p.iter().map(|&s| -gamma * hinge(o_p - s) * s).collect();
    let t_n = p.s_n.iter().map(|&s| gamma * hinge(s - o_n) * s).collect();
    (t_p, t_n)
}

fn circle(m: f64, gamma: f64, p: &DistanceProfile) -> f64 {
    let (t_p, t_n) = circle_terms(m, gamma, p);
    log_one_plus_sum_exp(t_p.iter().chain(&t_n))
}

/// Per-triplet exponent terms of the angular loss, from raw dot products.
pub(super) fn angular_terms(angle_deg: f64, batch: &TripletBatch) -> Vec<f64> {
    let tan = math::tan(angle_deg.to_radians());
    let t2 = tan * tan;
    (0..batch.len())
        .map(|i| {
            let (a, p, n) = (batch.anchor(i), batch.positive(i), batch.negative(i));
            let ap_n = dot(a, n) + dot(p, n);
            4.0 * t2 * ap_n - 2.0 * (1.0 + t2) * dot(a, p)
        })
        .collect()
}

fn angular(angle_deg: f64, batch: &TripletBatch) -> f64 {
    log_one_plus_sum_exp(angular_terms(angle_deg, batch).iter())
}

/// Stable `ln(1 + sum(exp(t)))` over the given exponents.
fn log_one_plus_sum_exp<'a>(terms: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let mut max = 0.0f64;
    for &t in terms.clone() {
        max = max.max(t);
    }
    let mut sum = math::exp(-max);
    for &t in terms {
        sum += math::exp(t - max);
    }
    max + math::ln(sum)
}
