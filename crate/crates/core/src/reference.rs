//! Straight-line evaluation of the minibatch training objective in
//! double-double precision. It shares no code with the production forward
//! pass and serves as the finite-difference oracle of the gradient checker.

use crate::ddouble::Dd;
use crate::model::{ModelParams, DEFAULT_RULE_PRIORITY};
use crate::training::PROB_FLOOR;

fn softplus(u: f64) -> Dd {
    let u = Dd::from(u);
    // log(1 + e^u) = max(u, 0) + log(1 + e^-|u|)
    let pos = u.max(Dd::ZERO);
    let neg_abs = if u.to_f64() > 0.0 { -u } else { u };
    pos + (Dd::ONE + neg_abs.exp()).ln()
}

fn softmax(z: &[Dd]) -> Vec<Dd> {
    let m = z.iter().copied().fold(z[0], Dd::max);
    let e: Vec<Dd> = z.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().copied().fold(Dd::ZERO, |a, b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

/// Returns `(class probabilities, indicator)` for one sample.
fn forward(p: &ModelParams, x: &[f64], noise: &[f64]) -> (Vec<Dd>, Vec<Dd>) {
    let dims = p.dims();
    let inv_t_pred = Dd::ONE / Dd::from(p.pred_temp);
    let inv_t_list = Dd::ONE / Dd::from(p.list_temp);
    let eps = Dd::from(p.epsilon);
    let mut scores = Vec::with_capacity(dims.rules);
    for j in 0..dims.rules {
        let (antecedent, priority) = if p.is_default(j) {
            (Dd::ONE, Dd::from(DEFAULT_RULE_PRIORITY))
        } else {
            let w: Vec<Dd> = p.raw_weights(j).iter().map(|&u| softplus(u)).collect();
            let sum_w = w.iter().copied().fold(Dd::ZERO, |a, b| a + b);
            let eta = eps / sum_w;
            let mut h = Dd::ZERO;
            for i in 0..dims.features {
                let xi = Dd::from(x[i]);
                let lo = ((Dd::from(p.alpha(j)[i]) - xi) * inv_t_pred).exp();
                let hi = ((xi - Dd::from(p.beta(j)[i])) * inv_t_pred).exp();
                let pred = Dd::ONE / (lo + Dd::ONE + hi);
                h = h + w[i] / (pred + eta);
            }
            (sum_w / ((Dd::ONE + eta) * h), softplus(p.raw_priority(j)))
        };
        scores.push((antecedent * priority + Dd::from(noise[j])) * inv_t_list);
    }
    let indicator = softmax(&scores);
    let mut logits = vec![Dd::ZERO; dims.classes];
    for (j, &ind) in indicator.iter().enumerate() {
        for (z, &c) in logits.iter_mut().zip(p.consequent(j)) {
            *z = *z + ind * Dd::from(c);
        }
    }
    (softmax(&logits), indicator)
}

/// Mean cross-entropy plus `lambda` times the support regularizer of the
/// soft batch coverage.
#[allow(clippy::too_many_arguments)]
pub(crate) fn objective(
    p: &ModelParams,
    rows: &[&[f64]],
    labels: &[usize],
    noise: &[Vec<f64>],
    lambda: f64,
    cov_min: f64,
    cov_max: f64,
) -> Dd {
    let k = p.dims().rules;
    let n = Dd::from(rows.len() as f64);
    let mut ce = Dd::ZERO;
    let mut cov = vec![Dd::ZERO; k];
    for ((x, &y), g) in rows.iter().zip(labels).zip(noise) {
        let (probs, ind) = forward(p, x, g);
        ce = ce - probs[y].max(Dd::from(PROB_FLOOR)).ln();
        for (c, v) in cov.iter_mut().zip(ind) {
            *c = *c + v;
        }
    }
    let (lo, hi) = (Dd::from(cov_min), Dd::from(cov_max));
    let mut reg = Dd::ZERO;
    for c in cov {
        let c = c / n;
        let under = (lo - c).max(Dd::ZERO);
        let over = (c - hi).max(Dd::ZERO);
        reg = reg + under * under + over * over;
    }
    ce / n + Dd::from(lambda) * reg / Dd::from(k as f64)
}
