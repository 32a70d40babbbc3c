//! Exact service-time rates and human-readable byte sizes.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UnitError {
    #[error("invalid rate {0:?}: expected an integer, a decimal or a fraction like 3/2")]
    BadRate(String),
    #[error("invalid size {0:?}: expected bytes with an optional K/M/G/T or Ki/Mi/Gi/Ti suffix")]
    BadSize(String),
    #[error("rate denominator must be positive")]
    ZeroDenominator,
}

/// Non-negative rational number of nanoseconds per unit (byte, frame or request).
///
/// Stored reduced. `time_for` rounds up to whole nanoseconds, so a 64 KiB frame at
/// 0.8 ns/byte costs 52 429 ns rather than drifting through floating point.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rate {
    num: u64,
    den: u64,
}

impl Rate {
    pub const ZERO: Rate = Rate { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Rate, UnitError> {
        if den == 0 {
            return Err(UnitError::ZeroDenominator);
        }
        let g = num.gcd(&den).max(1);
        Ok(Rate {
            num: num / g,
            den: den / g,
        })
    }

    pub const fn from_int(ns: u64) -> Rate {
        Rate { num: ns, den: 1 }
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// Whole nanoseconds needed for `units`, rounded up.
    pub fn time_for(&self, units: u64) -> u64 {
        let n = units as u128 * self.num as u128;
        let d = self.den as u128;
        let t = n.div_ceil(d);
        u64::try_from(t).expect("service time overflows u64 nanoseconds")
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Closest rate for a finite non-negative float, exact when the float's shortest
    /// decimal form has at most 18 fractional digits.
    pub fn from_f64(v: f64) -> Result<Rate, UnitError> {
        if !v.is_finite() || v < 0.0 {
            return Err(UnitError::BadRate(v.to_string()));
        }
        format!("{v}").parse()
    }
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rate({self})")
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            return write!(f, "{}", self.num);
        }
        // Print as a terminating decimal when the denominator divides a power of ten.
        let mut scale: u128 = 1;
        for digits in 1..=18 {
            scale *= 10;
            if scale.is_multiple_of(self.den as u128) {
                let scaled = self.num as u128 * (scale / self.den as u128);
                let int = scaled / scale;
                let frac = scaled % scale;
                return write!(f, "{int}.{frac:0width$}", width = digits);
            }
        }
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Rate {
    type Err = UnitError;

    fn from_str(s: &str) -> Result<Rate, UnitError> {
        let bad = || UnitError::BadRate(s.to_string());
        let t = s.trim();
        if let Some((n, d)) = t.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            return Rate::new(n, d);
        }
        match t.split_once('.') {
            None => Ok(Rate::from_int(t.parse().map_err(|_| bad())?)),
            Some((int, frac)) => {
                if frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad());
                }
                let int: u64 = if int.is_empty() {
                    0
                } else {
                    int.parse().map_err(|_| bad())?
                };
                let den = 10u64.pow(frac.len() as u32);
                let frac: u64 = if frac.is_empty() {
                    0
                } else {
                    frac.parse().map_err(|_| bad())?
                };
                let num = int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
                Rate::new(num, den)
            }
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.den == 1 {
            s.serialize_u64(self.num)
        } else {
            s.collect_str(self)
        }
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Rate, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let rate = match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Rate::from_int(v)),
            Raw::Float(v) => Rate::from_f64(v),
            Raw::Text(v) => v.parse(),
        };
        rate.map_err(serde::de::Error::custom)
    }
}

/// Parse a byte count such as `4096`, `100M` (10^6) or `64Ki` (2^10).
pub fn parse_size(s: &str) -> Result<u64, UnitError> {
    let bad = || UnitError::BadSize(s.to_string());
    let t = s.trim();
    let split = t.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(t.len());
    let (number, suffix) = t.split_at(split);
    let mult: u64 = match suffix.trim_end_matches(['B', 'b']) {
        "" => 1,
        "K" | "k" => 1_000,
        "M" => 1_000_000,
        "G" => 1_000_000_000,
        "T" => 1_000_000_000_000,
        "Ki" => 1 << 10,
        "Mi" => 1 << 20,
        "Gi" => 1 << 30,
        "Ti" => 1 << 40,
        _ => return Err(bad()),
    };
    if number.is_empty() {
        return Err(bad());
    }
    // Decimal multipliers allow a fractional mantissa such as 1.7G or 5.6K.
    let rate: Rate = number.parse().map_err(|_| bad())?;
    let bytes = rate.num as u128 * mult as u128;
    if !bytes.is_multiple_of(rate.den as u128) {
        return Err(bad());
    }
    u64::try_from(bytes / rate.den as u128).map_err(|_| bad())
}
