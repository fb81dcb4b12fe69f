//! Exact rational scalars shared by every module.

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};

/// Exact rational number used for weights, distances and costs.
pub type Rat = Ratio<i128>;

/// Builds `n / d`.
pub fn rat(n: i128, d: i128) -> Rat {
    Ratio::new(n, d)
}

/// Integer as a rational.
pub fn int(n: i128) -> Rat {
    Ratio::from_integer(n)
}

/// Lossy conversion for reporting.
pub fn to_f64(x: &Rat) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Renders `p/q`, or `p` when the denominator is one.
pub fn fmt(x: &Rat) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Parses `p`, `p/q` or a finite decimal such as `0.25`.
pub fn parse(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let n: i128 = a.trim().parse().ok()?;
        let d: i128 = b.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(rat(n, d));
    }
    if let Some((a, b)) = s.split_once('.') {
        let neg = a.starts_with('-');
        let whole: i128 = if a.is_empty() || a == "-" { 0 } else { a.parse().ok()? };
        if !b.chars().all(|c| c.is_ascii_digit()) || b.len() > 30 {
            return None;
        }
        let scale = 10i128.pow(b.len() as u32);
        let frac: i128 = if b.is_empty() { 0 } else { b.parse().ok()? };
        let frac = if neg { -frac } else { frac };
        return Some(rat(whole * scale + frac, scale));
    }
    s.parse::<i128>().ok().map(int)
}

/// Least common multiple of two positive integers.
pub fn lcm(a: i128, b: i128) -> i128 {
    a.lcm(&b)
}

/// Absolute value.
pub fn abs(x: &Rat) -> Rat {
    x.abs()
}

/// `max(x, 0)`.
pub fn pos(x: &Rat) -> Rat {
    if x.is_negative() {
        Rat::zero()
    } else {
        *x
    }
}

/// Closest rational with denominator `den` not below `x` (for `x >= 0`).
pub fn ceil_to(x: f64, den: i128) -> Rat {
    rat((x * den as f64).ceil() as i128, den)
}

pub(crate) mod serde_rat {
    use super::{fmt, parse, Rat};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Rat, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rat, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            S(String),
            I(i64),
            F(f64),
        }
        match Raw::deserialize(d)? {
            Raw::S(s) => parse(&s).ok_or_else(|| D::Error::custom(format!("bad rational {s:?}"))),
            Raw::I(i) => Ok(Rat::from_integer(i as i128)),
            Raw::F(f) => parse(&format!("{f}")).ok_or_else(|| D::Error::custom("bad number")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse("3/4"), Some(rat(3, 4)));
        assert_eq!(parse("0.25"), Some(rat(1, 4)));
        assert_eq!(parse("-1.5"), Some(rat(-3, 2)));
        assert_eq!(parse("7"), Some(int(7)));
        assert_eq!(parse("1/0"), None);
    }

    #[test]
    fn fmt_round_trip() {
        for x in [rat(5, 3), int(2), rat(-7, 9)] {
            assert_eq!(parse(&fmt(&x)), Some(x));
        }
    }
}
