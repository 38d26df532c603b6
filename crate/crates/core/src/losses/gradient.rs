//! Analytic gradients of the seven base losses.
//!
//! Every function here differentiates the corresponding forward expression
//! exactly: hinge kinks take the zero subgradient, max/min selections route
//! gradient to the first-best index only, and the circle weights are
//! differentiated through (they are functions of the similarities).

use alloc::vec::Vec;

use crate::math;

use super::forward::{angular_terms, circle_terms};
use super::{argmax, argmin, DistanceProfile, LossKind, LossParams, TripletBatch};
use super::{log_add_exp, BatchGradients};

pub(super) fn gradient_base(
    kind: LossKind,
    params: &LossParams,
    batch: &TripletBatch,
    profile: &DistanceProfile,
) -> BatchGradients {
    let mut acc = Acc { grads: BatchGradients::zeros(batch.len(), batch.dim()), batch, profile };
    match kind {
        LossKind::TripletMargin => triplet_margin(params.margin, &mut acc),
        LossKind::LiftedEmbedding => lifted_embedding(params.margin, &mut acc),
        LossKind::LazyTriplet => lazy_triplet(params.margin, &mut acc),
        LossKind::SemiHard => semi_hard(params.margin, &mut acc),
        LossKind::BatchHard => batch_hard(params.margin, &mut acc),
        LossKind::Circle => circle(params.margin, params.scale.expect("validated"), &mut acc),
        LossKind::Angular => angular(params.angle_deg.expect("validated"), &mut acc),
        _ => unreachable!("curriculum kinds are dispatched before gradient_base"),
    }
    acc.grads
}

/// Which pairwise distance a coefficient flows through.
#[derive(Clone, Copy)]
enum Pair {
    AnchorPositive,
    AnchorNegative,
    PositiveNegative,
}

struct Acc<'a> {
    grads: BatchGradients,
    batch: &'a TripletBatch,
    profile: &'a DistanceProfile,
}

impl Acc<'_> {
    /// Accumulate `coeff * d(dist)/d(endpoints)` for one pair of triplet `i`.
    ///
    /// The derivative of `||x - y||` is the unit difference vector; at exactly
    /// coincident points the distance has no direction and the flat
    /// subgradient (zero) is used.
    fn add_pair(&mut self, i: usize, pair: Pair, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let (dist, x, y) = match pair {
            Pair::AnchorPositive => (self.profile.d_ap[i], self.batch.anchor(i), self.batch.positive(i)),
            Pair::AnchorNegative => (self.profile.d_an[i], self.batch.anchor(i), self.batch.negative(i)),
            Pair::PositiveNegative => {
                (self.profile.d_pn[i], self.batch.positive(i), self.batch.negative(i))
            }
        };
        if dist <= 0.0 {
            return;
        }
        let c = coeff / dist;
        let (gx, gy) = match pair {
            Pair::AnchorPositive => (&mut self.grads.anchors[i], &mut self.grads.positives[i]),
            Pair::AnchorNegative => (&mut self.grads.anchors[i], &mut self.grads.negatives[i]),
            Pair::PositiveNegative => (&mut self.grads.positives[i], &mut self.grads.negatives[i]),
        };
        for k in 0..x.len() {
            let diff = c * (x[k] - y[k]);
            gx[k] += diff;
            gy[k] -= diff;
        }
    }

    /// Accumulate `coeff * d(a . b)/d(a, b)` for a dot-product pair.
    fn add_dot(&mut self, i: usize, with_negative: bool, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let (x, y) = if with_negative {
            (self.batch.anchor(i), self.batch.negative(i))
        } else {
            (self.batch.anchor(i), self.batch.positive(i))
        };
        let gy_row = if with_negative { &mut self.grads.negatives[i] } else { &mut self.grads.positives[i] };
        for k in 0..x.len() {
            gy_row[k] += coeff * x[k];
        }
        let ga_row = &mut self.grads.anchors[i];
        for k in 0..y.len() {
            ga_row[k] += coeff * y[k];
        }
    }
}

fn triplet_margin(m: f64, acc: &mut Acc) {
    let inv_n = 1.0 / acc.batch.len() as f64;
    for i in 0..acc.batch.len() {
        if acc.profile.d_ap[i] - acc.profile.d_an[i] + m > 0.0 {
            acc.add_pair(i, Pair::AnchorPositive, inv_n);
            acc.add_pair(i, Pair::AnchorNegative, -inv_n);
        }
    }
}

fn lifted_embedding(m: f64, acc: &mut Acc) {
    let inv_n = 1.0 / acc.batch.len() as f64;
    for i in 0..acc.batch.len() {
        let e_an = m - acc.profile.d_an[i];
        let e_pn = m - acc.profile.d_pn[i];
        if acc.profile.d_ap[i] + log_add_exp(e_an, e_pn) > 0.0 {
            // Softmax split of the inner log-sum-exp between the two
            // negative-pair distances.
            let shift = e_an.max(e_pn);
            let w_an = math::exp(e_an - shift);
            let w_pn = math::exp(e_pn - shift);
            let z = w_an + w_pn;
            acc.add_pair(i, Pair::AnchorPositive, inv_n);
            acc.add_pair(i, Pair::AnchorNegative, -inv_n * w_an / z);
            acc.add_pair(i, Pair::PositiveNegative, -inv_n * w_pn / z);
        }
    }
}

fn lazy_triplet(m: f64, acc: &mut Acc) {
    let pre: Vec<f64> = acc
        .profile
        .d_ap
        .iter()
        .zip(&acc.profile.d_an)
        .map(|(ap, an)| ap - an + m)
        .collect();
    let k = argmax(&pre);
    if pre[k] > 0.0 {
        acc.add_pair(k, Pair::AnchorPositive, 1.0);
        acc.add_pair(k, Pair::AnchorNegative, -1.0);
    }
}

fn semi_hard(m: f64, acc: &mut Acc) {
    let n = acc.batch.len();
    let j = argmin(&acc.profile.d_an);
    let d_min = acc.profile.d_an[j];
    let inv_n = 1.0 / n as f64;
    let mut active = 0usize;
    for i in 0..n {
        if acc.profile.d_ap[i] - d_min + m > 0.0 {
            active += 1;
            acc.add_pair(i, Pair::AnchorPositive, inv_n);
        }
    }
    // Every active term subtracts the same batch-wide minimum distance.
    acc.add_pair(j, Pair::AnchorNegative, -(active as f64) * inv_n);
}

fn batch_hard(m: f64, acc: &mut Acc) {
    let i = argmax(&acc.profile.d_ap);
    let j = argmin(&acc.profile.d_an);
    if acc.profile.d_ap[i] - acc.profile.d_an[j] + m > 0.0 {
        acc.add_pair(i, Pair::AnchorPositive, 1.0);
        acc.add_pair(j, Pair::AnchorNegative, -1.0);
    }
}

fn circle(m: f64, gamma: f64, acc: &mut Acc) {
    let (t_p, t_n) = circle_terms(m, gamma, acc.profile);
    let weights = softmax_with_one(t_p.iter().chain(&t_n));
    let (w_p, w_n) = weights.split_at(t_p.len());
    let o_p = 1.0 - m;
    let o_n = m;
    for i in 0..acc.batch.len() {
        // d/ds of -gamma * [o_p - s]_+ * s and gamma * [s - o_n]_+ * s.
        let s_p = acc.profile.s_p[i];
        if o_p - s_p > 0.0 {
            acc.add_dot(i, false, w_p[i] * -gamma * (o_p - 2.0 * s_p));
        }
        let s_n = acc.profile.s_n[i];
        if s_n - o_n > 0.0 {
            acc.add_dot(i, true, w_n[i] * gamma * (2.0 * s_n - o_n));
        }
    }
}

fn angular(angle_deg: f64, acc: &mut Acc) {
    let terms = angular_terms(angle_deg, acc.batch);
    let weights = softmax_with_one(terms.iter());
    let tan = math::tan(angle_deg.to_radians());
    let t2 = tan * tan;
    for (i, &w) in weights.iter().enumerate() {
        let c_n = w * 4.0 * t2;
        let c_ap = w * -2.0 * (1.0 + t2);
        let dim = acc.batch.dim();
        for k in 0..dim {
            let (a, p, n) = (acc.batch.anchor(i)[k], acc.batch.positive(i)[k], acc.batch.negative(i)[k]);
            acc.grads.anchors[i][k] += c_n * n + c_ap * p;
            acc.grads.positives[i][k] += c_n * n + c_ap * a;
            acc.grads.negatives[i][k] += c_n * (a + p);
        }
    }
}

/// Weights `exp(t_k) / (1 + sum(exp(t)))` for each exponent, computed with a
/// shared shift so large exponents cannot overflow. These are the derivatives
/// of `ln(1 + sum(exp(t)))` with respect to each `t_k`.
fn softmax_with_one<'a>(terms: impl Iterator<Item = &'a f64> + Clone) -> Vec<f64> {
    let mut max = 0.0f64;
    for &t in terms.clone() {
        max = max.max(t);
    }
    let mut z = math::exp(-max);
    let exps: Vec<f64> = terms.map(|&t| math::exp(t - max)).collect();
    for &e in &exps {
        z += e;
    }
    exps.into_iter().map(|e| e / z).collect()
}
