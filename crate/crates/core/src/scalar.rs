//! Numeric values carried by range attributes.
//!
//! Predicates, filters and range trees are generic over [`Scalar`], so the
//! same matching and merging code runs on exact rationals, machine floats or
//! plain integers. The protocols default to [`Rational`](crate::Rational),
//! which keeps interval endpoints free of rounding surprises.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// A totally ordered number usable as a range-attribute value.
///
/// `PartialOrd` must behave as a total order on every value that
/// [`Scalar::parse_literal`] can produce (floats reject NaN at parse time).
pub trait Scalar:
    Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug + Display + Send + Sync + 'static
{
    /// Parses a literal as written inside `name[lo,hi]`.
    fn parse_literal(text: &str) -> Option<Self>;

    /// Renders the value so that `parse_literal(format_literal(v)) == v`.
    fn format_literal(&self) -> String {
        self.to_string()
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }
}

impl Scalar for Ratio<i64> {
    /// Accepts integers (`-3`), fractions (`1/2`) and finite decimals (`0.25`).
    fn parse_literal(text: &str) -> Option<Self> {
        let text = text.trim();
        if text.is_empty() {
            return None;
        }
        if let Some((num, den)) = text.split_once('/') {
            let num: i64 = num.trim().parse().ok()?;
            let den: i64 = den.trim().parse().ok()?;
            if den == 0 {
                return None;
            }
            return Some(Ratio::new(num, den));
        }
        if let Some((int_part, frac_part)) = text.split_once('.') {
            if frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            if frac_part.len() > 17 {
                return None;
            }
            let negative = int_part.starts_with('-');
            let int_digits = int_part.trim_start_matches(['-', '+']);
            let whole: i64 = if int_digits.is_empty() {
                0
            } else {
                int_digits.parse().ok()?
            };
            let scale = 10i64.checked_pow(frac_part.len() as u32)?;
            let frac: i64 = frac_part.parse().ok()?;
            let magnitude = whole.checked_mul(scale)?.checked_add(frac)?;
            let signed = if negative { -magnitude } else { magnitude };
            return Some(Ratio::new(signed, scale));
        }
        text.parse::<i64>().ok().map(Ratio::from_integer)
    }

    fn format_literal(&self) -> String {
        if *self.denom() == 1 {
            self.numer().to_string()
        } else {
            format!("{}/{}", self.numer(), self.denom())
        }
    }
}

macro_rules! float_scalar {
    ($($ty:ty),*) => {$(
        impl Scalar for $ty {
            fn parse_literal(text: &str) -> Option<Self> {
                let value: $ty = text.trim().parse().ok()?;
                value.is_finite().then_some(value)
            }

            fn format_literal(&self) -> String {
                // `{:?}` keeps enough digits to round-trip exactly.
                format!("{:?}", self)
            }
        }
    )*};
}

float_scalar!(f32, f64);

macro_rules! int_scalar {
    ($($ty:ty),*) => {$(
        impl Scalar for $ty {
            fn parse_literal(text: &str) -> Option<Self> {
                text.trim().parse().ok()
            }
        }
    )*};
}

int_scalar!(i32, i64);

#[cfg(test)]
mod tests {
    use super::*;

    type R = Ratio<i64>;

    #[test]
    fn rational_literals() {
        assert_eq!(R::parse_literal("3"), Some(R::from_integer(3)));
        assert_eq!(R::parse_literal("-3"), Some(R::from_integer(-3)));
        assert_eq!(R::parse_literal("1/2"), Some(R::new(1, 2)));
        assert_eq!(R::parse_literal("0.25"), Some(R::new(1, 4)));
        assert_eq!(R::parse_literal("-1.5"), Some(R::new(-3, 2)));
        assert_eq!(R::parse_literal(".5"), Some(R::new(1, 2)));
        assert_eq!(R::parse_literal("1/0"), None);
        assert_eq!(R::parse_literal("1."), None);
        assert_eq!(R::parse_literal("abc"), None);
        assert_eq!(R::parse_literal(""), None);
    }

    #[test]
    fn rational_format_round_trips() {
        for v in [R::new(1, 3), R::from_integer(7), R::new(-5, 2)] {
            assert_eq!(R::parse_literal(&v.format_literal()), Some(v));
        }
    }

    #[test]
    fn floats_reject_non_finite() {
        assert_eq!(f64::parse_literal("NaN"), None);
        assert_eq!(f64::parse_literal("inf"), None);
        assert_eq!(f64::parse_literal("0.1"), Some(0.1));
        let v = 0.1f64 + 0.2;
        assert_eq!(f64::parse_literal(&v.format_literal()), Some(v));
    }

    #[test]
    fn integers() {
        assert_eq!(i64::parse_literal("42"), Some(42));
        assert_eq!(i64::parse_literal("4.2"), None);
    }
}
