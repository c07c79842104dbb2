//! Exact-rational scale exponents and the regime they select.

use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};

/// Which local problem determines the corrector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `q < r < q+2`: elliptic local problem for every `s`.
    SubCritical,
    /// `r = q+2`: parabolic local problem (resonance).
    Critical,
    /// `r > q+2`: elliptic local problem with the time-averaged coefficient.
    SuperCritical,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::SubCritical, Regime::Critical, Regime::SuperCritical];

    pub fn tag(self) -> u8 {
        match self {
            Regime::SubCritical => 0,
            Regime::Critical => 1,
            Regime::SuperCritical => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Regime::SubCritical),
            1 => Some(Regime::Critical),
            2 => Some(Regime::SuperCritical),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::SubCritical => "subcritical",
            Regime::Critical => "critical",
            Regime::SuperCritical => "supercritical",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `"3"`, `"5/2"`, `"-1/4"` or a finite decimal such as `"2.5"` into an
/// exact rational.
pub fn parse_rational(text: &str) -> Result<Rational64> {
    let t = text.trim();
    let bad = || HomogError::Validation(format!("`{text}` is not a rational number"));
    if t.is_empty() {
        return Err(bad());
    }
    if let Some((int, frac)) = t.split_once('.') {
        if t.contains('/') || frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let neg = int.starts_with('-');
        let int_digits = int.trim_start_matches(['-', '+']);
        if !int_digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let scale = 10i64.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        let whole: i64 = if int_digits.is_empty() { 0 } else { int_digits.parse().map_err(|_| bad())? };
        let part: i64 = frac.parse().map_err(|_| bad())?;
        let num = whole.checked_mul(scale).and_then(|w| w.checked_add(part)).ok_or_else(bad)?;
        let r = Rational64::new(num, scale);
        return Ok(if neg { -r } else { r });
    }
    let r = Rational64::from_str(t).map_err(|_| bad())?;
    Ok(r)
}

pub fn rational_to_string(r: &Rational64) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rational_to_f64(r: &Rational64) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exponents of the heat capacity (`ε^q`) and of the temporal micro-scale (`ε^r`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegimeExponents {
    q: Rational64,
    r: Rational64,
}

impl RegimeExponents {
    pub fn new(q: Rational64, r: Rational64) -> Result<Self> {
        if !q.is_positive() {
            return Err(HomogError::Validation(format!(
                "q must be positive, got {}",
                rational_to_string(&q)
            )));
        }
        if r <= q {
            return Err(HomogError::Validation(format!(
                "r must exceed q, got q={} r={}",
                rational_to_string(&q),
                rational_to_string(&r)
            )));
        }
        Ok(RegimeExponents { q, r })
    }

    pub fn parse(q: &str, r: &str) -> Result<Self> {
        Self::new(parse_rational(q)?, parse_rational(r)?)
    }

    pub fn q(&self) -> Rational64 {
        self.q
    }

    pub fn r(&self) -> Rational64 {
        self.r
    }

    pub fn q_f64(&self) -> f64 {
        rational_to_f64(&self.q)
    }

    pub fn r_f64(&self) -> f64 {
        rational_to_f64(&self.r)
    }

    pub fn regime(&self) -> Regime {
        classify_regime(self.q, self.r).expect("exponents validated at construction")
    }
}

/// Exact comparison of `r` against `q + 2`.
pub fn classify_regime(q: Rational64, r: Rational64) -> Result<Regime> {
    if q <= Rational64::zero() || r <= q {
        return Err(HomogError::Validation(format!(
            "need 0 < q < r, got q={} r={}",
            rational_to_string(&q),
            rational_to_string(&r)
        )));
    }
    let resonant = q + Rational64::from_integer(2);
    Ok(match r.cmp(&resonant) {
        std::cmp::Ordering::Less => Regime::SubCritical,
        std::cmp::Ordering::Equal => Regime::Critical,
        std::cmp::Ordering::Greater => Regime::SuperCritical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(s: &str) -> Rational64 {
        parse_rational(s).unwrap()
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_regime(rat("1"), rat("3")).unwrap(), Regime::Critical);
        assert_eq!(classify_regime(rat("1"), rat("5/2")).unwrap(), Regime::SubCritical);
        assert_eq!(classify_regime(rat("1"), rat("7/2")).unwrap(), Regime::SuperCritical);
        assert_eq!(classify_regime(rat("1/3"), rat("7/3")).unwrap(), Regime::Critical);
    }

    #[test]
    fn classification_rejects_invalid() {
        assert!(classify_regime(rat("0"), rat("1")).is_err());
        assert!(classify_regime(rat("2"), rat("2")).is_err());
        assert!(classify_regime(rat("2"), rat("1")).is_err());
        assert!(RegimeExponents::parse("1", "abc").is_err());
    }

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!(rat("2.5"), Rational64::new(5, 2));
        assert_eq!(rat("-0.25"), Rational64::new(-1, 4));
        assert_eq!(rat(" 7/2 "), Rational64::new(7, 2));
        assert!(parse_rational("1.").is_err());
        assert!(parse_rational("1/0.5").is_err());
        assert!(parse_rational("").is_err());
        // 0.1 + 2 is exactly 21/10, so r = q + 2 survives decimal input.
        assert_eq!(
            classify_regime(rat("0.1"), rat("2.1")).unwrap(),
            Regime::Critical
        );
    }

    #[test]
    fn formatting_round_trips() {
        for s in ["3", "5/2", "-1/4"] {
            assert_eq!(rational_to_string(&rat(s)), s);
        }
    }
}
