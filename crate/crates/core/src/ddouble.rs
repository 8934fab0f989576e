//! Double-double arithmetic (about 30 significant digits after exp/ln), used only to
//! evaluate the finite-difference oracle without f64 roundoff swamping
//! gradients of order 1e-8.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

/// `1 / n!` for `n = 1..=11`.
const INV_FACT: [Dd; 11] = [
    Dd { hi: 1.0, lo: 0.0 },
    Dd { hi: 0.5, lo: 0.0 },
    Dd { hi: 0.166_666_666_666_666_66, lo: 9.251_858_538_542_97e-18 },
    Dd { hi: 0.041_666_666_666_666_664, lo: 2.312_964_634_635_742_7e-18 },
    Dd { hi: 0.008_333_333_333_333_333, lo: 1.156_482_317_317_871_4e-19 },
    Dd { hi: 0.001_388_888_888_888_889, lo: -5.300_543_954_373_577e-20 },
    Dd { hi: 0.000_198_412_698_412_698_4, lo: 1.720_955_829_342_070_5e-22 },
    Dd { hi: 2.480_158_730_158_73e-5, lo: 2.151_194_786_677_588_2e-23 },
    Dd { hi: 2.755_731_922_398_589_3e-6, lo: -1.858_393_274_046_472e-22 },
    Dd { hi: 2.755_731_922_398_589e-7, lo: 2.376_771_462_225_029_7e-23 },
    Dd { hi: 2.505_210_838_544_172e-8, lo: -1.448_814_070_935_912e-24 },
];

const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn scale_pow2(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd { hi: self.hi * f, lo: self.lo * f }
    }

    pub fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd { hi: f64::INFINITY, lo: 0.0 };
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        // x = k ln2 + r, then exp(r) = (exp(r / 2^10))^(2^10)
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from(k)).scale_pow2(-10);
        // |r| < 3.4e-4, so the Taylor tail after r^11 / 11! is below 1e-45
        let mut sum = INV_FACT[10];
        for c in INV_FACT[..10].iter().rev() {
            sum = sum * r + *c;
        }
        sum = sum * r + Dd::ONE;
        for _ in 0..10 {
            sum = sum * sum;
        }
        // split the power of two so subnormal results do not overflow the factor
        let k = k as i32;
        let half = k / 2;
        sum.scale_pow2(half).scale_pow2(k - half)
    }

    pub fn ln(self) -> Dd {
        // one Newton step on exp(y) = x doubles the 53-bit starting accuracy
        let y = Dd::from(self.hi.ln());
        y + self * (-y).exp() - Dd::ONE
    }

    pub fn max(self, other: Dd) -> Dd {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        // long division: two correction steps
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, b: Dd, tol: f64) -> bool {
        let d = (a - b).to_f64().abs();
        d <= tol * b.to_f64().abs().max(1e-300)
    }

    #[test]
    fn arithmetic_keeps_extra_digits() {
        let tiny = Dd::from(1e-20);
        let x = Dd::ONE + tiny;
        assert_eq!((x - Dd::ONE).to_f64(), 1e-20);
        let third = Dd::ONE / Dd::from(3.0);
        assert!(close(third * Dd::from(3.0), Dd::ONE, 1e-31));
    }

    #[test]
    fn exp_and_ln_are_inverse() {
        for v in [-40.0, -3.2, -1e-3, 0.0, 0.7, 5.5, 30.0] {
            let x = Dd::from(v) + Dd::from(v * 1e-17);
            let err = (x.exp().ln() - x).to_f64().abs();
            assert!(err < 1e-28 * v.abs().max(1.0), "{v}: {err:e}");
        }
    }

    #[test]
    fn known_values() {
        // e to 32 digits: 2.7182818284590452353602874713527
        let e = Dd::ONE.exp();
        assert_eq!(e.hi, std::f64::consts::E);
        assert!((e.lo - 1.445_646_891_729_250_2e-16).abs() < 1e-29);
        assert!(close(Dd::from(2.0).ln(), LN2, 1e-29));
        assert_eq!(Dd::from(-800.0).exp(), Dd::ZERO);
    }
}
