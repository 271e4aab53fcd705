//! Scalar abstraction for probability arithmetic.
//!
//! Every closed-form probability in the crate (transcript probabilities,
//! overwrite/download marginals, the exact trace enumerator) is written once
//! against [`Probability`] and instantiated either with floating point for
//! speed or with arbitrary-precision rationals when a check must be exact.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Num, ToPrimitive};

/// A number type that can carry probabilities.
pub trait Probability:
    Num + Clone + Debug + PartialOrd + AddAssign + MulAssign + Send + Sync + 'static
{
    /// `num / den`. `den` must be non-zero.
    fn from_ratio(num: u64, den: u64) -> Self;

    /// Converts an `f64`. Rational types convert the binary value exactly, so
    /// `0.5` becomes `1/2` while `0.1` becomes the nearest dyadic rational.
    /// Returns `None` for non-finite input.
    fn from_f64(x: f64) -> Option<Self>;

    fn to_f64(&self) -> f64;

    /// Whether arithmetic in this type is exact.
    fn is_exact() -> bool;

    fn from_u64(x: u64) -> Self {
        Self::from_ratio(x, 1)
    }

    /// `1 - self`.
    fn complement(&self) -> Self {
        Self::one() - self.clone()
    }
}

impl Probability for f64 {
    fn from_ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn from_f64(x: f64) -> Option<Self> {
        x.is_finite().then_some(x)
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn is_exact() -> bool {
        false
    }
}

impl Probability for f32 {
    fn from_ratio(num: u64, den: u64) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn from_f64(x: f64) -> Option<Self> {
        x.is_finite().then_some(x as f32)
    }

    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }

    fn is_exact() -> bool {
        false
    }
}

impl Probability for BigRational {
    fn from_ratio(num: u64, den: u64) -> Self {
        Ratio::new(BigInt::from(num), BigInt::from(den))
    }

    fn from_f64(x: f64) -> Option<Self> {
        Ratio::from_float(x)
    }

    fn to_f64(&self) -> f64 {
        // Ratio::to_f64 handles numerators/denominators beyond f64 range.
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn is_exact() -> bool {
        true
    }
}

/// Binomial coefficient `C(n, k)` in the target scalar type.
pub fn binomial<P: Probability>(n: u64, k: u64) -> P {
    if k > n {
        return P::zero();
    }
    let k = k.min(n - k);
    let mut acc = P::one();
    for i in 1..=k {
        acc *= P::from_ratio(n - k + i, i);
    }
    acc
}

/// Natural log of a ratio of two probabilities, computed without leaving the
/// exact domain until the final step.
pub fn ln_ratio<P: Probability>(num: &P, den: &P) -> f64 {
    if num.is_zero() && den.is_zero() {
        return 0.0;
    }
    if den.is_zero() {
        return f64::INFINITY;
    }
    if num.is_zero() {
        return f64::NEG_INFINITY;
    }
    let r = num.clone() / den.clone();
    let v = r.to_f64();
    if v.is_finite() && v > 0.0 {
        v.ln()
    } else {
        // Ratios far outside f64 range: fall back to the difference of logs.
        num.to_f64().ln() - den.to_f64().ln()
    }
}

/// Returns the larger of two probabilities.
pub fn max_of<P: Probability>(a: P, b: P) -> P {
    if a >= b {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use num_traits::{One, Zero};

    use super::*;

    #[test]
    fn binomial_matches_pascal() {
        for n in 0..20u64 {
            for k in 0..=n {
                let lhs: BigRational = binomial(n + 1, k + 1);
                let rhs: BigRational = binomial::<BigRational>(n, k) + binomial::<BigRational>(n, k + 1);
                assert_eq!(lhs, rhs, "n={n} k={k}");
            }
        }
        assert_eq!(binomial::<f64>(6, 3), 20.0);
        assert_eq!(binomial::<f64>(3, 5), 0.0);
    }

    #[test]
    fn rational_from_f64_is_exact_for_dyadics() {
        let half = <BigRational as Probability>::from_f64(0.5).unwrap();
        assert_eq!(half, BigRational::from_ratio(1, 2));
        assert!(<BigRational as Probability>::from_f64(f64::NAN).is_none());
    }

    #[test]
    fn ln_ratio_handles_zero_mass() {
        let z = BigRational::zero();
        let one = BigRational::one();
        assert_eq!(ln_ratio(&one, &z), f64::INFINITY);
        assert_eq!(ln_ratio(&z, &one), f64::NEG_INFINITY);
        assert_eq!(ln_ratio(&z, &z), 0.0);
        let five = BigRational::from_ratio(5, 1);
        assert!((ln_ratio(&five, &one) - 5f64.ln()).abs() < 1e-15);
    }
}
