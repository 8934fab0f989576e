//! Soft interval predicates.
//!
//! A predicate `alpha <= x <= beta` is relaxed into the middle component of a
//! softmax over the three logits `(x, 2x - alpha, 3x - alpha - beta) / t`.
//! Dividing numerator and denominator by the middle exponential gives
//!
//! ```text
//! pi(x) = 1 / (exp((alpha - x) / t) + 1 + exp((x - beta) / t))
//! ```
//!
//! which never overflows into NaN: a huge exponent only drives the value to 0.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Bounds and temperature of a single soft predicate, in scaled feature units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredicateParams {
    pub alpha: f64,
    pub beta: f64,
    pub temp: f64,
}

impl PredicateParams {
    pub fn new(alpha: f64, beta: f64, temp: f64) -> Result<Self> {
        let p = Self { alpha, beta, temp };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.temp > 0.0) || !self.temp.is_finite() {
            return Err(invalid(format!("predicate temperature must be positive, got {}", self.temp)));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(invalid(format!(
                "predicate bounds must be finite, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Partial derivatives of the soft predicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredicateGrad {
    pub dx: f64,
    pub dalpha: f64,
    pub dbeta: f64,
}

/// Soft predicate activation without argument checks.
#[inline]
pub fn activation(x: f64, alpha: f64, beta: f64, temp: f64) -> f64 {
    1.0 / (((alpha - x) / temp).exp() + 1.0 + ((x - beta) / temp).exp())
}

/// Activation and gradient without argument checks.
///
/// The gradient is taken from the full three-way softmax, with the largest
/// logit subtracted, so saturated inputs yield exact zeros instead of `0 * inf`.
#[inline]
pub fn activation_and_grad(x: f64, alpha: f64, beta: f64, temp: f64) -> (f64, PredicateGrad) {
    // logits relative to the middle one
    let lo = (alpha - x) / temp;
    let hi = (x - beta) / temp;
    let m = lo.max(hi).max(0.0);
    let e_lo = (lo - m).exp();
    let e_mid = (-m).exp();
    let e_hi = (hi - m).exp();
    let z = e_lo + e_mid + e_hi;
    let (p_lo, p_mid, p_hi) = (e_lo / z, e_mid / z, e_hi / z);
    let value = activation(x, alpha, beta, temp);
    let grad = PredicateGrad {
        dx: p_mid * (p_lo - p_hi) / temp,
        dalpha: -p_mid * p_lo / temp,
        dbeta: p_mid * p_hi / temp,
    };
    (value, grad)
}

/// Evaluates the soft predicate at `x`.
pub fn soft_predicate_forward(x: f64, p: &PredicateParams) -> Result<f64> {
    p.validate()?;
    if !x.is_finite() {
        return Err(invalid(format!("predicate input must be finite, got {x}")));
    }
    Ok(activation(x, p.alpha, p.beta, p.temp))
}

/// Returns `(d/dx, d/dalpha, d/dbeta)` of [`soft_predicate_forward`].
pub fn soft_predicate_backward(x: f64, p: &PredicateParams) -> Result<PredicateGrad> {
    p.validate()?;
    if !x.is_finite() {
        return Err(invalid(format!("predicate input must be finite, got {x}")));
    }
    Ok(activation_and_grad(x, p.alpha, p.beta, p.temp).1)
}

/// Crisp predicate on a closed interval. A point on a bound counts as inside.
#[inline]
pub fn hard_predicate(x: f64, alpha: f64, beta: f64) -> bool {
    alpha <= x && x <= beta
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Direct three-logit softmax, evaluated without any rearrangement.
    fn naive(x: f64, a: f64, b: f64, t: f64) -> f64 {
        let l = [x / t, (2.0 * x - a) / t, (3.0 * x - a - b) / t];
        let e: Vec<f64> = l.iter().map(|v| v.exp()).collect();
        e[1] / (e[0] + e[1] + e[2])
    }

    fn central(f: impl Fn(f64) -> f64, v: f64) -> f64 {
        let h = 1e-5;
        (f(v + h) - f(v - h)) / (2.0 * h)
    }

    #[test]
    fn interior_value_matches_closed_form() {
        let p = PredicateParams::new(0.2, 0.8, 0.1).unwrap();
        let v = soft_predicate_forward(0.5, &p).unwrap();
        // 1 / (1 + 2 e^-3), 40-digit evaluation
        assert_relative_eq!(v, 0.909_442_998_512_741_9, epsilon = 1e-14);
        assert_relative_eq!(v, naive(0.5, 0.2, 0.8, 0.1), epsilon = 1e-14);
    }

    #[test]
    fn boundary_tends_to_half() {
        let p = PredicateParams::new(0.2, 0.8, 1e-4).unwrap();
        assert_relative_eq!(soft_predicate_forward(0.2, &p).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(soft_predicate_forward(0.8, &p).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn interior_converges_to_one() {
        let p = PredicateParams::new(0.2, 0.8, 0.001).unwrap();
        assert!((soft_predicate_forward(0.5, &p).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_overflow_at_tiny_temperature() {
        let p = PredicateParams::new(0.2, 0.8, 1e-6).unwrap();
        let v = soft_predicate_forward(0.95, &p).unwrap();
        assert_eq!(v, 0.0);
        let g = soft_predicate_backward(0.95, &p).unwrap();
        assert!(g.dx.is_finite() && g.dalpha.is_finite() && g.dbeta.is_finite());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(PredicateParams::new(0.2, 0.8, 0.0).is_err());
        assert!(PredicateParams::new(0.2, 0.8, -1.0).is_err());
        assert!(PredicateParams::new(f64::NAN, 0.8, 0.1).is_err());
        let p = PredicateParams { alpha: 0.2, beta: 0.8, temp: 0.1 };
        assert!(soft_predicate_forward(f64::INFINITY, &p).is_err());
        assert!(soft_predicate_backward(f64::NAN, &p).is_err());
    }

    #[test]
    fn symmetric_point_has_opposite_bound_gradients() {
        let p = PredicateParams::new(0.3, 0.7, 0.1).unwrap();
        let g = soft_predicate_backward(0.5, &p).unwrap();
        assert_relative_eq!(g.dalpha, -g.dbeta, epsilon = 1e-15);
        assert!(g.dx.abs() < 1e-15);
    }

    #[test]
    fn saturated_gradient_vanishes() {
        let p = PredicateParams::new(0.0, 1.0, 0.025).unwrap();
        let g = soft_predicate_backward(0.5, &p).unwrap();
        assert!(g.dx.abs() < 1e-6 && g.dalpha.abs() < 1e-6 && g.dbeta.abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences_at_reference_point() {
        let (x, a, b, t) = (0.5, 0.2, 0.8, 0.1);
        let g = soft_predicate_backward(x, &PredicateParams::new(a, b, t).unwrap()).unwrap();
        let fx = central(|v| naive(v, a, b, t), x);
        let fa = central(|v| naive(x, v, b, t), a);
        let fb = central(|v| naive(x, a, v, t), b);
        // dx vanishes at the midpoint, so only roundoff is left to compare
        assert_relative_eq!(g.dx, fx, epsilon = 1e-9);
        assert_relative_eq!(g.dalpha, fa, max_relative = 1e-4);
        assert_relative_eq!(g.dbeta, fb, max_relative = 1e-4);
    }

    #[test]
    fn hard_predicate_uses_closed_interval() {
        assert!(hard_predicate(0.3, 0.2, 0.8));
        assert!(hard_predicate(0.2, 0.2, 0.8));
        assert!(hard_predicate(0.8, 0.2, 0.8));
        assert!(!hard_predicate(0.9, 0.2, 0.8));
        assert!(!hard_predicate(0.5, 0.8, 0.2));
    }

    proptest! {
        #[test]
        fn activation_is_in_open_unit_interval(
            x in 0.0f64..1.0, a in -0.5f64..1.5, b in -0.5f64..1.5, t in 0.05f64..1.0
        ) {
            let v = activation(x, a, b, t);
            prop_assert!(v > 0.0 && v < 1.0);
        }

        #[test]
        // Outside the interval the far bound pulls the other way, so exterior
        // monotonicity only holds once t is below e times the gap to the near
        // bound (here gap >= 0.05, t <= 0.13).
        fn sharpening_is_monotone(
            a in 0.0f64..0.45, w in 0.1f64..0.5, u in 0.0f64..1.0,
            t1 in 0.01f64..0.13, shrink in 0.1f64..1.0
        ) {
            let b = a + w;
            let t2 = t1 * shrink;
            let inside = a + u * w;
            prop_assert!(activation(inside, a, b, t2) >= activation(inside, a, b, t1) - 1e-15);
            let outside = if u < 0.5 { a - 0.05 - u } else { b + 0.05 + (u - 0.5) };
            prop_assert!(activation(outside, a, b, t2) <= activation(outside, a, b, t1) + 1e-15);
        }

        #[test]
        fn gradient_agrees_with_central_differences(
            x in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0, t in 0.05f64..0.5
        ) {
            let v = activation(x, a, b, t);
            prop_assume!((1e-6..=1.0 - 1e-6).contains(&v));
            let (_, g) = activation_and_grad(x, a, b, t);
            let checks = [
                (g.dx, central(|s| naive(s, a, b, t), x)),
                (g.dalpha, central(|s| naive(x, s, b, t), a)),
                (g.dbeta, central(|s| naive(x, a, s, t), b)),
            ];
            for (an, fd) in checks {
                let scale = an.abs().max(fd.abs());
                if scale > 1e-6 {
                    prop_assert!((an - fd).abs() / scale < 1e-4, "analytic {} vs fd {}", an, fd);
                }
            }
        }
    }
}
