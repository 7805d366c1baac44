//! Exact rational helpers: parsing user input and rendering decimals.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn frac(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// Parses `"3"`, `"-2/7"`, `"0.125"` or `"1.5e-2"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Config(format!("not a rational number: {s:?}"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = parse_int(n).ok_or_else(bad)?;
        let d: BigInt = parse_int(d).ok_or_else(bad)?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(Rational::new(n, d));
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => {
            let e: i32 = s[i + 1..].parse().map_err(|_| bad())?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    if exp.abs() > 1000 {
        return Err(bad());
    }
    let (neg, body) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (whole, fracpart) = body.split_once('.').unwrap_or((body, ""));
    if whole.is_empty() && fracpart.is_empty() {
        return Err(bad());
    }
    if !whole.chars().chain(fracpart.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{whole}{fracpart}");
    let mut num: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().map_err(|_| bad())? };
    if neg {
        num = -num;
    }
    let scale = exp - fracpart.len() as i32;
    let ten = BigInt::from(10);
    Ok(if scale >= 0 {
        Rational::from_integer(num * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(num, num_traits::pow(ten, (-scale) as usize))
    })
}

fn parse_int(s: &str) -> Option<BigInt> {
    let s = s.trim();
    let body = s.strip_prefix('-').unwrap_or(s);
    if body.is_empty() || !body.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// `num/den` with the denominator always present, e.g. `3/1`.
pub fn exact(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn parse_exact(s: &str) -> Result<Rational> {
    parse_rational(s)
}

/// Positional decimal with `sig` significant digits, trailing zeros trimmed.
pub fn decimal(r: &Rational, sig: usize) -> String {
    let sig = sig.max(1);
    if r.is_zero() {
        return "0".to_string();
    }
    let neg = r.is_negative();
    let a = r.abs();
    let ten = BigInt::from(10);
    // e = floor(log10(a))
    let mut e: i64 = (a.numer().to_string().len() as i64) - (a.denom().to_string().len() as i64);
    let pow10 = |k: i64| -> Rational {
        if k >= 0 {
            Rational::from_integer(num_traits::pow(ten.clone(), k as usize))
        } else {
            Rational::new(BigInt::one(), num_traits::pow(ten.clone(), (-k) as usize))
        }
    };
    while a < pow10(e) {
        e -= 1;
    }
    while a >= pow10(e + 1) {
        e += 1;
    }
    let shift = sig as i64 - 1 - e;
    let scaled = &a * pow10(shift);
    // round half away from zero
    let (q, rem) = scaled.numer().div_rem(scaled.denom());
    let mut m = q;
    if rem * BigInt::from(2) >= *scaled.denom() {
        m += 1;
    }
    let mut shift = shift;
    if m == num_traits::pow(ten.clone(), sig) {
        m /= &ten;
        shift -= 1;
    }
    let digits = m.to_string();
    let mut out = if shift <= 0 {
        format!("{}{}", digits, "0".repeat((-shift) as usize))
    } else {
        let shift = shift as usize;
        if digits.len() > shift {
            let (a, b) = digits.split_at(digits.len() - shift);
            format!("{a}.{b}")
        } else {
            format!("0.{}{}", "0".repeat(shift - digits.len()), digits)
        }
    };
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
    if neg {
        out.insert(0, '-');
    }
    out
}

pub fn to_u64(r: &Rational) -> Option<u64> {
    if r.is_integer() {
        r.numer().to_u64()
    } else {
        None
    }
}

pub fn to_f64(r: &Rational) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_forms() {
        assert_eq!(parse_rational("3").unwrap(), int(3));
        assert_eq!(parse_rational("-2/4").unwrap(), frac(-1, 2));
        assert_eq!(parse_rational("0.5").unwrap(), frac(1, 2));
        assert_eq!(parse_rational(".25").unwrap(), frac(1, 4));
        assert_eq!(parse_rational("1.5e-2").unwrap(), frac(3, 200));
        assert_eq!(parse_rational("2E3").unwrap(), int(2000));
        for bad in ["", "1/0", "a", "1.2.3", "--1", "1/", "e5", ".", "1e99999"] {
            assert!(parse_rational(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(decimal(&frac(27, 10), 6), "2.7");
        assert_eq!(decimal(&int(100), 6), "100");
        assert_eq!(decimal(&int(1), 6), "1");
        assert_eq!(decimal(&frac(4, 3), 6), "1.33333");
        assert_eq!(decimal(&frac(2, 3), 6), "0.666667");
        assert_eq!(decimal(&frac(1, 1000), 6), "0.001");
        assert_eq!(decimal(&frac(-5, 2), 6), "-2.5");
        assert_eq!(decimal(&frac(9999999, 10), 6), "1000000");
        assert_eq!(decimal(&int(1234567), 6), "1234570");
        assert_eq!(decimal(&int(0), 6), "0");
    }

    #[test]
    fn exact_form_keeps_denominator() {
        assert_eq!(exact(&int(3)), "3/1");
        assert_eq!(exact(&frac(54, 20)), "27/10");
    }
}
