//! Step-decay learning rate evaluated in decimal, so a schedule configured as
//! `1e-4 × 0.75^k` lands on the double nearest the decimal result instead of
//! accumulating binary rounding from repeated products.

/// Significant decimal digits kept during the product; far more than an f64 holds.
const KEEP_DIGITS: u32 = 34;

struct Decimal {
    mantissa: u128,
    exponent: i32,
}

impl Decimal {
    /// Shortest round-trip decimal form of a finite, positive double.
    fn parse(x: f64) -> Option<Decimal> {
        let text = format!("{x:e}");
        let (digits, exp) = text.split_once('e')?;
        let exp: i32 = exp.parse().ok()?;
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        let mantissa: u128 = format!("{int}{frac}").parse().ok()?;
        Some(Decimal {
            mantissa,
            exponent: exp - frac.len() as i32,
        })
    }

    fn mul(&self, other: &Decimal) -> Decimal {
        let mut a = self.mantissa;
        let mut b = other.mantissa;
        let mut exponent = self.exponent + other.exponent;
        let limit = 10u128.pow(KEEP_DIGITS / 2 + 1);
        for m in [&mut a, &mut b] {
            while *m >= limit {
                *m = (*m + 5) / 10;
                exponent += 1;
            }
        }
        let mut out = Decimal {
            mantissa: a * b,
            exponent,
        };
        out.normalize();
        out
    }

    fn normalize(&mut self) {
        let limit = 10u128.pow(KEEP_DIGITS);
        while self.mantissa >= limit {
            self.mantissa = (self.mantissa + 5) / 10;
            self.exponent += 1;
        }
        while self.mantissa != 0 && self.mantissa.is_multiple_of(10) {
            self.mantissa /= 10;
            self.exponent += 1;
        }
    }

    fn to_f64(&self) -> f64 {
        format!("{}e{}", self.mantissa, self.exponent)
            .parse()
            .unwrap_or(f64::NAN)
    }
}

/// `base × factor^k` rounded once to the nearest double.
pub(crate) fn decayed(base: f64, factor: f64, k: u64) -> f64 {
    let (Some(b), Some(f)) = (Decimal::parse(base), Decimal::parse(factor)) else {
        return base * factor.powi(k.min(i32::MAX as u64) as i32);
    };
    if base <= 0.0 || factor <= 0.0 {
        return base * factor.powi(k.min(i32::MAX as u64) as i32);
    }
    let mut acc = b;
    for _ in 0..k {
        acc = acc.mul(&f);
        if acc.mantissa == 0 || acc.exponent < -400 {
            return 0.0;
        }
    }
    acc.to_f64()
}
