//! Closed real intervals with outward rounding.
//!
//! Every primitive widens its computed bounds by a few units in the last
//! place, so enclosures stay sound regardless of the platform rounding mode
//! or the accuracy of the libm transcendental functions.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of ulps each computed bound is pushed outward.
const OUTWARD_ULPS: u32 = 4;

fn down(mut x: f64, ulps: u32) -> f64 {
    for _ in 0..ulps {
        x = x.next_down();
    }
    x
}

fn up(mut x: f64, ulps: u32) -> f64 {
    for _ in 0..ulps {
        x = x.next_up();
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = String;

    fn try_from([lo, hi]: [f64; 2]) -> Result<Self, Self::Error> {
        Interval::checked(lo, hi).ok_or_else(|| format!("invalid interval [{lo}, {hi}]"))
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    /// Panics if `lo > hi` or either bound is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        Self::checked(lo, hi).unwrap_or_else(|| panic!("invalid interval [{lo}, {hi}]"))
    }

    pub fn checked(lo: f64, hi: f64) -> Option<Self> {
        (lo <= hi).then_some(Self { lo, hi })
    }

    pub fn point(x: f64) -> Self {
        Self::new(x, x)
    }

    pub fn entire() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    /// Builds an interval from computed (rounded) bounds, widening outward.
    fn rounded(lo: f64, hi: f64) -> Self {
        Self::rounded_by(lo, hi, OUTWARD_ULPS)
    }

    fn rounded_by(lo: f64, hi: f64, ulps: u32) -> Self {
        let lo = if lo.is_nan() { f64::NEG_INFINITY } else { down(lo, ulps) };
        let hi = if hi.is_nan() { f64::INFINITY } else { up(hi, ulps) };
        Self { lo, hi }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        0.5 * self.lo + 0.5 * self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Splits at the midpoint.
    pub fn bisect(&self) -> (Interval, Interval) {
        let m = self.mid();
        (Interval::new(self.lo, m), Interval::new(m, self.hi))
    }

    pub fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn add(self, rhs: Interval) -> Interval {
        Interval::rounded(self.lo + rhs.lo, self.hi + rhs.hi)
    }

    pub fn sub(self, rhs: Interval) -> Interval {
        Interval::rounded(self.lo - rhs.hi, self.hi - rhs.lo)
    }

    pub fn mul(self, rhs: Interval) -> Interval {
        if self.is_point_zero() || rhs.is_point_zero() {
            return Interval::point(0.0);
        }
        let products = [
            mul0(self.lo, rhs.lo),
            mul0(self.lo, rhs.hi),
            mul0(self.hi, rhs.lo),
            mul0(self.hi, rhs.hi),
        ];
        let lo = products.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::rounded(lo, hi)
    }

    /// `None` when the divisor contains zero.
    pub fn div(self, rhs: Interval) -> Option<Interval> {
        if rhs.contains(0.0) {
            return None;
        }
        let recip = Interval::rounded(1.0 / rhs.hi, 1.0 / rhs.lo);
        Some(self.mul(recip))
    }

    fn is_point_zero(&self) -> bool {
        self.lo == 0.0 && self.hi == 0.0
    }

    /// Integer power with the monotone / even-power rule.
    pub fn powi(self, n: u32) -> Interval {
        match n {
            0 => Interval::point(1.0),
            1 => self,
            _ => {
                let ulps = OUTWARD_ULPS + n;
                let a = self.lo.powi(n as i32);
                let b = self.hi.powi(n as i32);
                if n % 2 == 1 || self.lo >= 0.0 {
                    Interval::rounded_by(a, b, ulps)
                } else if self.hi <= 0.0 {
                    Interval::rounded_by(b, a, ulps)
                } else {
                    let r = Interval::rounded_by(0.0, a.max(b), ulps);
                    Interval { lo: 0.0, hi: r.hi }
                }
            }
        }
    }

    pub fn exp(self) -> Interval {
        let r = Interval::rounded(self.lo.exp(), self.hi.exp());
        Interval {
            lo: r.lo.max(0.0),
            hi: r.hi,
        }
    }

    /// `None` when the argument reaches zero or below.
    pub fn ln(self) -> Option<Interval> {
        if self.lo <= 0.0 {
            return None;
        }
        Some(Interval::rounded(self.lo.ln(), self.hi.ln()))
    }

    /// `None` when the argument reaches below zero.
    pub fn sqrt(self) -> Option<Interval> {
        if self.lo < 0.0 {
            return None;
        }
        let r = Interval::rounded(self.lo.sqrt(), self.hi.sqrt());
        Some(Interval {
            lo: r.lo.max(0.0),
            hi: r.hi,
        })
    }

    pub fn sin(self) -> Interval {
        // sin has maxima at pi/2 + 2k pi and minima at -pi/2 + 2k pi.
        self.periodic(f64::sin, FRAC_PI_2, -FRAC_PI_2)
    }

    pub fn cos(self) -> Interval {
        self.periodic(f64::cos, 0.0, PI)
    }

    fn periodic(self, f: fn(f64) -> f64, max_at: f64, min_at: f64) -> Interval {
        if !self.is_bounded() || self.width() >= TAU {
            return Interval::new(-1.0, 1.0);
        }
        let a = f(self.lo);
        let b = f(self.hi);
        let mut r = Interval::rounded(a.min(b), a.max(b));
        if self.hits_phase(max_at) {
            r.hi = 1.0;
        }
        if self.hits_phase(min_at) {
            r.lo = -1.0;
        }
        Interval {
            lo: r.lo.max(-1.0),
            hi: r.hi.min(1.0),
        }
    }

    /// Whether some `phase + 2k pi` may lie in the interval. Errs towards
    /// `true`, which only loosens the enclosure.
    fn hits_phase(&self, phase: f64) -> bool {
        let slack = 1e-9 * (1.0 + self.lo.abs().max(self.hi.abs()));
        let k = ((self.lo - slack - phase) / TAU).ceil();
        phase + k * TAU <= self.hi + slack
    }
}

/// Product with the interval convention 0 * inf = 0.
fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_over_straddling_box_is_tight() {
        let r = Interval::new(-2.0, 1.0).powi(2);
        assert_eq!(r.lo(), 0.0);
        assert!(r.hi() >= 4.0 && r.hi() <= 4.0 + 1e-12);
    }

    #[test]
    fn subtraction_has_dependency_effect() {
        let x = Interval::new(0.0, 1.0);
        let r = x.sub(x);
        assert!(r.lo() <= -1.0 && r.lo() > -1.0 - 1e-12);
        assert!(r.hi() >= 1.0 && r.hi() < 1.0 + 1e-12);
    }

    #[test]
    fn sine_over_half_period() {
        let r = Interval::new(0.0, PI).sin();
        assert!(r.lo() <= 0.0 && r.lo() > -1e-12);
        assert_eq!(r.hi(), 1.0);
    }

    #[test]
    fn cosine_wraps_minimum() {
        let r = Interval::new(3.0, 3.5).cos();
        assert_eq!(r.lo(), -1.0);
        assert!(r.hi() >= 3.5f64.cos().max(3.0f64.cos()));
    }

    #[test]
    fn division_through_zero_is_undefined() {
        assert!(Interval::new(1.0, 2.0).div(Interval::new(-1.0, 1.0)).is_none());
        let q = Interval::new(1.0, 2.0).div(Interval::new(2.0, 4.0)).unwrap();
        assert!(q.contains(0.25) && q.contains(1.0));
    }

    #[test]
    fn log_of_nonpositive_is_undefined() {
        assert!(Interval::new(0.0, 1.0).ln().is_none());
        assert!(Interval::new(1.0, 1.0).ln().unwrap().contains(0.0));
    }

    #[test]
    fn odd_power_is_monotone() {
        let r = Interval::new(-2.0, 3.0).powi(3);
        assert!(r.contains(-8.0) && r.contains(27.0));
        assert!(r.lo() > -8.0 - 1e-12);
    }
}
