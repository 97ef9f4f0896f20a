//! Double-double time values.
//!
//! Transceiver timestamps are absolute (seconds since some epoch) while the
//! quantity of interest is a few nanoseconds of flight time buried in
//! millisecond intervals. A single f64 loses around 1e-19 s per operation at
//! that magnitude, which is already ~3e-11 m after multiplying by c. Storing
//! timestamps as an unevaluated sum `hi + lo` keeps ~32 significant digits.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Seconds {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Seconds {
    pub const ZERO: Seconds = Seconds { hi: 0.0, lo: 0.0 };

    pub const fn from_f64(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }
}

impl From<f64> for Seconds {
    fn from(v: f64) -> Self {
        Self::from_f64(v)
    }
}

impl Add for Seconds {
    type Output = Seconds;

    fn add(self, rhs: Seconds) -> Seconds {
        let (s, e) = two_sum(self.hi, rhs.hi);
        let (t, f) = two_sum(self.lo, rhs.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Seconds { hi, lo }
    }
}

impl Neg for Seconds {
    type Output = Seconds;

    fn neg(self) -> Seconds {
        Seconds {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Seconds {
    type Output = Seconds;

    fn sub(self, rhs: Seconds) -> Seconds {
        self + (-rhs)
    }
}

impl Mul for Seconds {
    type Output = Seconds;

    fn mul(self, rhs: Seconds) -> Seconds {
        let p = self.hi * rhs.hi;
        let e = self.hi.mul_add(rhs.hi, -p);
        let e = e + (self.hi * rhs.lo + self.lo * rhs.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Seconds { hi, lo }
    }
}

impl Mul<f64> for Seconds {
    type Output = Seconds;

    fn mul(self, rhs: f64) -> Seconds {
        self * Seconds::from_f64(rhs)
    }
}

impl Div for Seconds {
    type Output = Seconds;

    fn div(self, rhs: Seconds) -> Seconds {
        // Long division, three correction steps.
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * q1;
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * q2;
        let q3 = r.hi / rhs.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Seconds { hi, lo } + Seconds::from_f64(q3)
    }
}

impl PartialOrd for Seconds {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(std::cmp::Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}
