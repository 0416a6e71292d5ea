//! Exact dyadic rationals, dyadic intervals of `[0, 1)` and dyadic slope cells.
//!
//! Every length, measure and average in the crate is a [`DyadicRational`]:
//! a value `numerator / 2^exponent` kept in canonical form (odd numerator,
//! or zero with exponent zero). Arithmetic never rounds. Overflow of the
//! 128-bit numerator is a programming error and panics.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// `numerator / 2^exponent`, canonical.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DyadicRational {
    num: i128,
    exp: u32,
}

fn shl_exact(n: i128, by: u32) -> i128 {
    if n == 0 {
        return 0;
    }
    let headroom = n.unsigned_abs().leading_zeros();
    assert!(by < headroom, "dyadic overflow: {n} << {by}");
    n << by
}

impl DyadicRational {
    pub const ZERO: DyadicRational = DyadicRational { num: 0, exp: 0 };
    pub const ONE: DyadicRational = DyadicRational { num: 1, exp: 0 };

    /// Builds `num / 2^exp` and reduces it to canonical form.
    pub fn new(num: i128, exp: u32) -> Self {
        if num == 0 {
            return Self::ZERO;
        }
        let tz = num.trailing_zeros().min(exp);
        DyadicRational {
            num: num >> tz,
            exp: exp - tz,
        }
    }

    pub fn from_int(n: i128) -> Self {
        Self::new(n, 0)
    }

    /// `2^-e`.
    pub fn pow2_neg(e: u32) -> Self {
        DyadicRational { num: 1, exp: e }
    }

    pub fn numerator(&self) -> i128 {
        self.num
    }

    pub fn exponent(&self) -> u32 {
        self.exp
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn is_negative(&self) -> bool {
        self.num < 0
    }

    /// Multiplies by `2^shift` (shift may be negative).
    pub fn mul_pow2(&self, shift: i32) -> Self {
        if self.num == 0 {
            return *self;
        }
        if shift >= 0 {
            let s = shift as u32;
            if s <= self.exp {
                Self::new(self.num, self.exp - s)
            } else {
                Self::new(shl_exact(self.num, s - self.exp), 0)
            }
        } else {
            Self::new(self.num, self.exp + shift.unsigned_abs())
        }
    }

    /// Numerator of `self` written over `2^exp`; `exp` must be at least the canonical exponent.
    pub fn numerator_at(&self, exp: u32) -> i128 {
        assert!(exp >= self.exp, "exponent {exp} too small for {self}");
        shl_exact(self.num, exp - self.exp)
    }

    /// Largest integer `n` with `n <= self * 2^level`.
    pub fn floor_at(&self, level: u32) -> i128 {
        if level >= self.exp {
            shl_exact(self.num, level - self.exp)
        } else {
            self.num >> (self.exp - level)
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 * (-(self.exp as f64)).exp2()
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    fn aligned(a: &Self, b: &Self) -> (i128, i128, u32) {
        let e = a.exp.max(b.exp);
        (shl_exact(a.num, e - a.exp), shl_exact(b.num, e - b.exp), e)
    }
}

impl fmt::Debug for DyadicRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for DyadicRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/2^{}", self.num, self.exp)
        }
    }
}

impl FromStr for DyadicRational {
    type Err = Error;

    /// Accepts `p/2^q`, `p/d` with `d` a power of two, or a plain integer.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::Parse(format!("not a dyadic rational: {s:?}"));
        let s = s.trim();
        match s.split_once('/') {
            None => s.parse::<i128>().map(Self::from_int).map_err(|_| bad()),
            Some((p, q)) => {
                let num: i128 = p.trim().parse().map_err(|_| bad())?;
                let q = q.trim();
                let exp = if let Some(e) = q.strip_prefix("2^") {
                    e.parse::<u32>().map_err(|_| bad())?
                } else {
                    let d: u128 = q.parse().map_err(|_| bad())?;
                    if d == 0 || !d.is_power_of_two() {
                        return Err(bad());
                    }
                    d.trailing_zeros()
                };
                if exp > 120 {
                    return Err(bad());
                }
                Ok(Self::new(num, exp))
            }
        }
    }
}

impl Serialize for DyadicRational {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DyadicRational {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Ord for DyadicRational {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.num.signum() != other.num.signum() {
            return self.num.signum().cmp(&other.num.signum());
        }
        let (a, b, _) = Self::aligned(self, other);
        a.cmp(&b)
    }
}

impl PartialOrd for DyadicRational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add for DyadicRational {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (a, b, e) = Self::aligned(&self, &rhs);
        Self::new(a.checked_add(b).expect("dyadic overflow"), e)
    }
}

impl AddAssign for DyadicRational {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for DyadicRational {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for DyadicRational {
    type Output = Self;
    fn neg(self) -> Self {
        DyadicRational {
            num: -self.num,
            exp: self.exp,
        }
    }
}

impl Mul for DyadicRational {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.num.checked_mul(rhs.num).expect("dyadic overflow"),
            self.exp + rhs.exp,
        )
    }
}

impl Sum for DyadicRational {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a DyadicRational> for DyadicRational {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |a, b| a + *b)
    }
}

impl From<i64> for DyadicRational {
    fn from(n: i64) -> Self {
        Self::from_int(n as i128)
    }
}

/// `[index * 2^-level, (index + 1) * 2^-level)`, a dyadic subinterval of `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub level: u32,
    pub index: u64,
}

impl DyadicInterval {
    pub const UNIT: DyadicInterval = DyadicInterval { level: 0, index: 0 };

    pub fn new(level: u32, index: u64) -> Result<Self, Error> {
        if level > 62 || index >= 1u64 << level {
            return Err(Error::InvalidArgument(format!(
                "dyadic interval index {index} out of range at level {level}"
            )));
        }
        Ok(DyadicInterval { level, index })
    }

    pub fn start(&self) -> DyadicRational {
        DyadicRational::new(self.index as i128, self.level)
    }

    pub fn end(&self) -> DyadicRational {
        DyadicRational::new(self.index as i128 + 1, self.level)
    }

    pub fn len(&self) -> DyadicRational {
        DyadicRational::pow2_neg(self.level)
    }

    /// Non-strict containment.
    pub fn contains(&self, other: &DyadicInterval) -> bool {
        other.level >= self.level && other.index >> (other.level - self.level) == self.index
    }

    pub fn strictly_contains(&self, other: &DyadicInterval) -> bool {
        self != other && self.contains(other)
    }

    pub fn intersects(&self, other: &DyadicInterval) -> bool {
        self.contains(other) || other.contains(self)
    }

    pub fn parent(&self) -> Option<DyadicInterval> {
        (self.level > 0).then(|| DyadicInterval {
            level: self.level - 1,
            index: self.index >> 1,
        })
    }

    /// The ancestor at `level` (or `self` when `level == self.level`).
    pub fn ancestor_at(&self, level: u32) -> DyadicInterval {
        assert!(level <= self.level);
        DyadicInterval {
            level,
            index: self.index >> (self.level - level),
        }
    }

    pub fn children(&self) -> [DyadicInterval; 2] {
        let l = self.level + 1;
        [
            DyadicInterval { level: l, index: 2 * self.index },
            DyadicInterval { level: l, index: 2 * self.index + 1 },
        ]
    }

    /// All dyadic subintervals down to `max_level`, coarse to fine, left to right.
    pub fn descendants(&self, max_level: u32) -> Vec<DyadicInterval> {
        let mut out = Vec::new();
        for level in self.level..=max_level {
            let span = 1u64 << (level - self.level);
            let first = self.index << (level - self.level);
            out.extend((first..first + span).map(|index| DyadicInterval { level, index }));
        }
        out
    }

    /// Concentric triple `[start - len, end + len)` clipped to `[0, 1]`.
    pub fn tripled(&self) -> Window {
        Window::new(self.start(), self.end()).scaled_about_center(3)
    }

    pub fn window(&self) -> Window {
        Window::new(self.start(), self.end())
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start(), self.end())
    }
}

/// A half-open interval `[lo, hi)` with dyadic endpoints; used for vertical windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub lo: DyadicRational,
    pub hi: DyadicRational,
    /// Unclipped half-length around the centre, kept so that repeated tripling is concentric.
    half: DyadicRational,
    center: DyadicRational,
}

impl Window {
    pub fn new(lo: DyadicRational, hi: DyadicRational) -> Self {
        let half = (hi - lo).mul_pow2(-1);
        Window { lo, hi, half, center: lo + half }
    }

    /// Concentric dilation by `factor` (of the unclipped window), clipped to `[0, 1]`.
    pub fn scaled_about_center(&self, factor: i64) -> Window {
        let half = self.half * DyadicRational::from(factor);
        let lo = (self.center - half).max(DyadicRational::ZERO);
        let hi = (self.center + half).min(DyadicRational::ONE);
        Window { lo, hi, half, center: self.center }
    }

    pub fn len(&self) -> DyadicRational {
        self.hi - self.lo
    }

    pub fn contains_window(&self, lo: DyadicRational, hi: DyadicRational) -> bool {
        self.lo <= lo && hi <= self.hi
    }
}

/// A slope cell at level `k`: slope interval `[j 2^-k, (j+1) 2^-k)` with centre `(j + 1/2) 2^-k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlopeCell {
    pub level: u32,
    pub index: u64,
}

impl SlopeCell {
    pub fn new(level: u32, index: u64) -> Result<Self, Error> {
        if level > 62 || index >= 1u64 << level {
            return Err(Error::InvalidArgument(format!(
                "slope index {index} out of range at level {level}"
            )));
        }
        Ok(SlopeCell { level, index })
    }

    pub fn center(&self) -> DyadicRational {
        DyadicRational::new(2 * self.index as i128 + 1, self.level + 1)
    }

    pub fn lo(&self) -> DyadicRational {
        DyadicRational::new(self.index as i128, self.level)
    }

    pub fn hi(&self) -> DyadicRational {
        DyadicRational::new(self.index as i128 + 1, self.level)
    }

    /// Non-strict containment of slope intervals.
    pub fn contains(&self, other: &SlopeCell) -> bool {
        other.level >= self.level && other.index >> (other.level - self.level) == self.index
    }

    pub fn ancestor_at(&self, level: u32) -> SlopeCell {
        assert!(level <= self.level);
        SlopeCell {
            level,
            index: self.index >> (self.level - level),
        }
    }
}

impl fmt::Display for SlopeCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}@{}", self.index, self.level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> DyadicRational {
        s.parse().unwrap()
    }

    #[test]
    fn canonical_form() {
        let x = DyadicRational::new(12, 5);
        assert_eq!((x.numerator(), x.exponent()), (3, 3));
        let z = DyadicRational::new(0, 9);
        assert_eq!((z.numerator(), z.exponent()), (0, 0));
        assert_eq!(DyadicRational::new(8, 2), DyadicRational::from_int(2));
    }

    #[test]
    fn arithmetic_is_exact() {
        assert_eq!(d("1/8") + d("3/16"), d("5/16"));
        assert_eq!(d("1/2") - d("3/4"), d("-1/4"));
        assert_eq!(d("3/4") * d("5/8"), d("15/32"));
        assert_eq!(d("3/2^5").mul_pow2(3), d("3/4"));
        assert!(d("1/4") < d("1/2"));
    }

    #[test]
    fn parse_forms() {
        assert_eq!(d("7"), DyadicRational::from_int(7));
        assert_eq!(d("-3/2^4"), DyadicRational::new(-3, 4));
        assert_eq!(d("1/16"), DyadicRational::pow2_neg(4));
        assert!("1/3".parse::<DyadicRational>().is_err());
        assert!("x".parse::<DyadicRational>().is_err());
    }

    #[test]
    fn floor_at_levels() {
        assert_eq!(d("5/8").floor_at(2), 2);
        assert_eq!(d("-1/8").floor_at(2), -1);
        assert_eq!(d("3").floor_at(1), 6);
    }

    #[test]
    fn interval_relations() {
        let a = DyadicInterval::new(1, 0).unwrap();
        let b = DyadicInterval::new(3, 2).unwrap();
        let c = DyadicInterval::new(2, 2).unwrap();
        assert!(a.contains(&b) && !b.contains(&a));
        assert!(!a.intersects(&c));
        assert_eq!(b.parent(), Some(DyadicInterval::new(2, 1).unwrap()));
        assert_eq!(a.children()[1], DyadicInterval::new(2, 1).unwrap());
        assert!(DyadicInterval::new(2, 4).is_err());
    }

    #[test]
    fn tripling_clips_to_unit() {
        let k = DyadicInterval::new(2, 0).unwrap();
        let t = k.tripled();
        assert_eq!((t.lo, t.hi), (d("0"), d("1/2")));
        let nine = t.scaled_about_center(3);
        assert_eq!((nine.lo, nine.hi), (d("0"), d("1")));
        let mid = DyadicInterval::new(3, 3).unwrap().tripled();
        assert_eq!((mid.lo, mid.hi), (d("1/4"), d("5/8")));
        assert_eq!(mid.scaled_about_center(3).lo, d("0"));
    }

    #[test]
    fn slope_cells() {
        let s = SlopeCell::new(2, 0).unwrap();
        assert_eq!(s.center(), d("1/8"));
        assert!(SlopeCell::new(1, 0).unwrap().contains(&s));
        assert!(!s.contains(&SlopeCell::new(1, 0).unwrap()));
    }

    fn arb_dyadic() -> impl Strategy<Value = DyadicRational> {
        (-1_000_000i128..1_000_000, 0u32..40).prop_map(|(n, e)| DyadicRational::new(n, e))
    }

    fn arb_interval() -> impl Strategy<Value = DyadicInterval> {
        (0u32..7).prop_flat_map(|l| (Just(l), 0u64..(1 << l)))
            .prop_map(|(level, index)| DyadicInterval { level, index })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(x in arb_dyadic()) {
            prop_assert_eq!(x.to_string().parse::<DyadicRational>().unwrap(), x);
        }

        #[test]
        fn add_sub_inverse(x in arb_dyadic(), y in arb_dyadic()) {
            prop_assert_eq!((x + y) - y, x);
            prop_assert_eq!(x + y, y + x);
            prop_assert_eq!(x < y, x.to_f64() < y.to_f64());
        }

        #[test]
        fn intervals_nest_or_are_disjoint(a in arb_interval(), b in arb_interval()) {
            let overlap = a.start().max(b.start()) < a.end().min(b.end());
            prop_assert_eq!(overlap, a.contains(&b) || b.contains(&a));
        }

        #[test]
        fn containment_is_a_partial_order(a in arb_interval(), b in arb_interval(), c in arb_interval()) {
            prop_assert!(a.contains(&a));
            if a.contains(&b) && b.contains(&a) { prop_assert_eq!(a, b); }
            if a.contains(&b) && b.contains(&c) { prop_assert!(a.contains(&c)); }
        }
    }
}
