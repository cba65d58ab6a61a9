use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{config_err, Error, Result};

/// Exact non-negative rational, written `num/den` in config files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Fraction {
    num: u32,
    den: u32,
}

impl Fraction {
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 {
            return Err(config_err!("fraction {num}/0 has a zero denominator"));
        }
        let g = gcd(num, den).max(1);
        Ok(Fraction { num: num / g, den: den / g })
    }

    pub const fn num(self) -> u32 {
        self.num
    }

    pub const fn den(self) -> u32 {
        self.den
    }

    /// `floor(self * n)`.
    pub fn floor_mul(self, n: usize) -> usize {
        (n as u64 * self.num as u64 / self.den as u64) as usize
    }

    /// `self * n` when the product is an integer.
    pub fn exact_mul(self, n: usize) -> Option<usize> {
        let p = n as u64 * self.num as u64;
        p.is_multiple_of(self.den as u64).then(|| (p / self.den as u64) as usize)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Exact test that the fractions add up to one.
    pub fn sums_to_one(parts: &[Fraction]) -> bool {
        // running sum kept as a reduced fraction
        let (mut n, mut d) = (0u64, 1u64);
        for p in parts {
            n = n * p.den as u64 + p.num as u64 * d;
            d *= p.den as u64;
            let g = gcd64(n, d).max(1);
            n /= g;
            d /= g;
        }
        n == d
    }

    pub fn one_minus(self, times: u32) -> Result<Fraction> {
        let taken = self.num as u64 * times as u64;
        if taken > self.den as u64 {
            return Err(config_err!("{times} groups of {self} exceed the channel count"));
        }
        Fraction::new(self.den - taken as u32, self.den)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    gcd64(a as u64, b as u64) as u32
}

fn gcd64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |p: &str| {
            p.trim().parse::<u32>().map_err(|_| config_err!("`{s}` is not a fraction like `1/8`"))
        };
        match s.split_once('/') {
            Some((n, d)) => Fraction::new(parse(n)?, parse(d)?),
            None => Fraction::new(parse(s)?, 1),
        }
    }
}

impl TryFrom<String> for Fraction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Fraction> for String {
    fn from(f: Fraction) -> String {
        if f.den == 1 {
            f.num.to_string()
        } else {
            format!("{f}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reduces() {
        let f: Fraction = "2/16".parse().unwrap();
        assert_eq!(f, Fraction::new(1, 8).unwrap());
        assert_eq!(String::from(f), "1/8");
        assert!("1/0".parse::<Fraction>().is_err());
        assert!("x".parse::<Fraction>().is_err());
    }

    #[test]
    fn exact_sum() {
        let e = Fraction::new(1, 8).unwrap();
        assert!(Fraction::sums_to_one(&[e, e, Fraction::new(3, 4).unwrap()]));
        assert!(!Fraction::sums_to_one(&[e, e, e]));
    }
}
