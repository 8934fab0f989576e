//! Relaxed weighted-harmonic-mean conjunction.
//!
//! For effective weights `w_i > 0`, slack `eps >= 0` and `eta = eps / sum(w)`:
//!
//! ```text
//! a(pi) = sum(w) / sum(w_i * (1 + eta) / (pi_i + eta))
//! ```
//!
//! With `eps = 0` this is the plain weighted harmonic mean of the predicates.
//! Any predicate at zero with weight `w_j` caps the result at
//! `eps / (eps + w_j)`, while gradients keep flowing to every predicate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Largest reciprocal used on the `eps = 0` path, where `1 / 0` would
/// otherwise produce infinity.
pub const RECIPROCAL_CAP: f64 = 1e12;

/// Default slack of the relaxed conjunction.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// `log(1 + e^u)`, evaluated without overflow.
#[inline]
pub fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `w > 0`.
pub fn softplus_inverse(w: f64) -> f64 {
    if w > 30.0 {
        w
    } else {
        w.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjunctionParams {
    /// Free parameters `u_i`; the effective weights are `softplus(u_i)`.
    pub raw_weights: Vec<f64>,
    pub epsilon: f64,
}

impl ConjunctionParams {
    pub fn new(raw_weights: Vec<f64>, epsilon: f64) -> Result<Self> {
        let cp = Self { raw_weights, epsilon };
        cp.validate()?;
        Ok(cp)
    }

    /// Builds parameters whose effective weights equal `weights`.
    pub fn from_weights(weights: &[f64], epsilon: f64) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(invalid(format!("conjunction weights must be positive and finite, got {w}")));
        }
        Self::new(weights.iter().map(|&w| softplus_inverse(w)).collect(), epsilon)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.raw_weights.iter().map(|&u| softplus(u)).collect()
    }

    /// The derived slack constant for the current weights.
    pub fn eta(&self) -> f64 {
        self.epsilon / self.weights().iter().sum::<f64>()
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(invalid(format!("epsilon must be a nonnegative real, got {}", self.epsilon)));
        }
        if self.raw_weights.is_empty() {
            return Err(invalid("conjunction needs at least one weight"));
        }
        if self.raw_weights.iter().any(|u| !u.is_finite()) {
            return Err(invalid("conjunction raw weights must be finite"));
        }
        Ok(())
    }
}

/// Gradient of the conjunction with respect to its predicates and raw weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjunctionGrad {
    pub dpreds: Vec<f64>,
    pub draw_weights: Vec<f64>,
}

#[inline]
fn reciprocal(pred: f64, eta: f64) -> (f64, bool) {
    let r = 1.0 / (pred + eta);
    if r > RECIPROCAL_CAP || !r.is_finite() {
        (RECIPROCAL_CAP, true)
    } else {
        (r, false)
    }
}

/// Conjunction value from effective weights. `weights` must have a positive sum.
#[inline]
pub fn relaxed_and(preds: &[f64], weights: &[f64], epsilon: f64) -> f64 {
    let sum_w: f64 = weights.iter().sum();
    let eta = epsilon / sum_w;
    let h: f64 = preds
        .iter()
        .zip(weights)
        .map(|(&p, &w)| w * reciprocal(p, eta).0)
        .sum();
    sum_w / ((1.0 + eta) * h)
}

/// Conjunction value plus gradients with respect to the predicates and the
/// effective weights. The weight gradient includes the dependence of `eta`
/// on `sum(w)`.
pub fn relaxed_and_grad(
    preds: &[f64],
    weights: &[f64],
    epsilon: f64,
    dpreds: &mut [f64],
    dweights: &mut [f64],
) -> f64 {
    let sum_w: f64 = weights.iter().sum();
    let eta = epsilon / sum_w;
    let mut h = 0.0;
    let mut q = 0.0;
    for (&p, &w) in preds.iter().zip(weights) {
        let (r, clamped) = reciprocal(p, eta);
        h += w * r;
        if !clamped {
            q += w * r * r;
        }
    }
    let value = sum_w / ((1.0 + eta) * h);
    let common = 1.0 / sum_w + (eta / sum_w) / (1.0 + eta) - (eta / sum_w) * q / h;
    for i in 0..preds.len() {
        let (r, clamped) = reciprocal(preds[i], eta);
        dpreds[i] = if clamped { 0.0 } else { value * weights[i] * r * r / h };
        dweights[i] = value * (common - r / h);
    }
    value
}

fn check_inputs(preds: &[f64], cp: &ConjunctionParams) -> Result<()> {
    cp.validate()?;
    if preds.len() != cp.raw_weights.len() {
        return Err(invalid(format!(
            "conjunction got {} predicates for {} weights",
            preds.len(),
            cp.raw_weights.len()
        )));
    }
    if let Some(p) = preds.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(invalid(format!("predicate activations must lie in [0, 1], got {p}")));
    }
    Ok(())
}

/// Relaxed conjunction of soft predicate activations.
pub fn conjunction_forward(preds: &[f64], cp: &ConjunctionParams) -> Result<f64> {
    check_inputs(preds, cp)?;
    Ok(relaxed_and(preds, &cp.weights(), cp.epsilon))
}

/// Closed-form gradient of [`conjunction_forward`], chained through the
/// softplus weight map.
pub fn conjunction_backward(preds: &[f64], cp: &ConjunctionParams) -> Result<ConjunctionGrad> {
    check_inputs(preds, cp)?;
    let weights = cp.weights();
    let mut dpreds = vec![0.0; preds.len()];
    let mut dweights = vec![0.0; preds.len()];
    relaxed_and_grad(preds, &weights, cp.epsilon, &mut dpreds, &mut dweights);
    let draw_weights = dweights
        .iter()
        .zip(&cp.raw_weights)
        .map(|(g, &u)| g * sigmoid(u))
        .collect();
    Ok(ConjunctionGrad { dpreds, draw_weights })
}
