//! Staircase parallelograms.
//!
//! A parallelogram `R` has a dyadic base `I` of length `2^k w`, a slope cell
//! at level `k` with centre `s`, and an offset `b`. Over every grid column `c`
//! whose centre `x_c` lies in `I` it occupies the vertical slab
//! `[s x_c + b, s x_c + b + w)`; `R` is the union of those slabs. Its measure is
//! therefore exactly `|I| w`.
//!
//! Internally heights are integers in units of `2^-(m + mw + 2)`, which is
//! fine enough to represent every slab endpoint exactly.

use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, DyadicRational, SlopeCell};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};

/// A width-`w` staircase parallelogram; field order is the canonical enumeration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Parallelogram {
    /// `|base| = 2^k w`, slope level `k`.
    pub k: u32,
    /// Index of the base interval at level `mw - k`.
    pub base: u64,
    /// Index of the slope cell at level `k`.
    pub slope: u64,
    /// Offset as a multiple of the offset step.
    pub offset: u64,
}

/// Largest admissible offset multiple for the given shape, or `None` if no offset fits.
pub fn max_offset_steps(spec: &GridSpec, _k: u32, base: u64, slope: u64) -> Option<u64> {
    // b + s sup(I) + w <= 1, everything scaled by 2^(mw + 2).
    let full = 1i128 << (spec.mw() + 2);
    let used = 2 * (2 * slope as i128 + 1) * (base as i128 + 1) + 4;
    let room = full - used;
    if room < 0 {
        return None;
    }
    Some((room >> (2 - spec.offstep().extra_bits())) as u64)
}

impl Parallelogram {
    pub fn new(
        spec: &GridSpec,
        base: DyadicInterval,
        slope: SlopeCell,
        offset: DyadicRational,
    ) -> Result<Self> {
        let k = spec
            .length_exponent(&base)
            .ok_or_else(|| Error::InvalidArgument(format!("base {base} shorter than w")))?;
        if slope.level != k {
            return Err(Error::SlopeLevelMismatch);
        }
        let step = spec.offset_step();
        let steps = offset.mul_pow2((spec.mw() + spec.offstep().extra_bits()) as i32);
        if offset.is_negative() || steps.exponent() != 0 {
            return Err(Error::InvalidArgument(format!(
                "offset {offset} is not a nonnegative multiple of {step}"
            )));
        }
        let r = Parallelogram {
            k,
            base: base.index,
            slope: slope.index,
            offset: steps.numerator() as u64,
        };
        r.validate(spec)?;
        Ok(r)
    }

    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        if self.k > spec.mw()
            || self.base >= 1u64 << (spec.mw() - self.k)
            || self.slope >= 1u64 << self.k
        {
            return Err(Error::InvalidArgument(format!("malformed parallelogram {self:?}")));
        }
        match max_offset_steps(spec, self.k, self.base, self.slope) {
            Some(max) if self.offset <= max => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "parallelogram {self:?} leaves the unit square"
            ))),
        }
    }

    pub fn base_interval(&self, spec: &GridSpec) -> DyadicInterval {
        spec.base_interval(self.k, self.base)
    }

    pub fn slope_cell(&self) -> SlopeCell {
        SlopeCell { level: self.k, index: self.slope }
    }

    pub fn offset_value(&self, spec: &GridSpec) -> DyadicRational {
        DyadicRational::from_int(self.offset as i128) * spec.offset_step()
    }

    pub fn length(&self, spec: &GridSpec) -> DyadicRational {
        spec.w().mul_pow2(self.k as i32)
    }

    pub fn columns(&self, spec: &GridSpec) -> std::ops::Range<usize> {
        spec.columns_of(&self.base_interval(spec))
    }

    /// Bottom of the slab over column `c`, in height units. The caller guarantees `c` is in range.
    #[inline]
    pub fn y_lo_units(&self, spec: &GridSpec, c: usize) -> i64 {
        ((2 * self.slope as i64 + 1) * (2 * c as i64 + 1) << (spec.mw() - self.k))
            + ((self.offset as i64) << (spec.m() + 2 - spec.offstep().extra_bits()))
    }

    /// First row whose centre lies in the slab over column `c`.
    #[inline]
    pub fn first_row(&self, spec: &GridSpec, c: usize) -> usize {
        let shift = spec.mw() + 2;
        let y = self.y_lo_units(spec, c) - (1 << (shift - 1));
        // ceil(y / cell) for y >= -cell/2
        ((y + (1 << shift) - 1) >> shift) as usize
    }

    /// Whether the centre of `(column, row)` lies in `R`.
    pub fn covers(&self, spec: &GridSpec, column: usize, row: usize) -> bool {
        self.columns(spec).contains(&column) && {
            let r0 = self.first_row(spec, column);
            (r0..r0 + spec.rows_per_slab()).contains(&row)
        }
    }

    /// The slab `[y_lo, y_hi)` over column `c`.
    pub fn column_segment(
        &self,
        spec: &GridSpec,
        c: usize,
    ) -> Result<(DyadicRational, DyadicRational)> {
        if !self.columns(spec).contains(&c) {
            return Err(Error::ColumnOutOfRange);
        }
        let lo = self.y_lo_units(spec, c);
        let e = unit_exponent(spec);
        Ok((
            DyadicRational::new(lo as i128, e),
            DyadicRational::new((lo + slab_units(spec)) as i128, e),
        ))
    }

    /// `|R| = |I| w`.
    pub fn measure(&self, spec: &GridSpec) -> DyadicRational {
        self.length(spec) * spec.w()
    }

    /// Vertical projection: from the lowest slab bottom to the highest slab top.
    pub fn vertical_extent(&self, spec: &GridSpec) -> (DyadicRational, DyadicRational) {
        let cols = self.columns(spec);
        let e = unit_exponent(spec);
        let lo = self.y_lo_units(spec, cols.start);
        let hi = self.y_lo_units(spec, cols.end - 1) + slab_units(spec);
        (DyadicRational::new(lo as i128, e), DyadicRational::new(hi as i128, e))
    }

    /// Rows meeting the slab over column `c`, with overlap lengths in height units.
    pub fn overlaps(&self, spec: &GridSpec, c: usize) -> impl Iterator<Item = (usize, i64)> {
        let cell = cell_units(spec);
        let lo = self.y_lo_units(spec, c);
        let hi = lo + slab_units(spec);
        let first = lo.div_euclid(cell);
        let last = (hi - 1).div_euclid(cell);
        (first..=last).map(move |r| {
            let a = lo.max(r * cell);
            let b = hi.min((r + 1) * cell);
            (r as usize, b - a)
        })
    }

    /// Exact `int_R f`.
    pub fn integrate(&self, spec: &GridSpec, f: &GridFunction) -> Result<DyadicRational> {
        if f.spec() != *spec {
            return Err(Error::IncompatibleGrids);
        }
        let mut total = DyadicRational::ZERO;
        for c in self.columns(spec) {
            let col = f.column(c);
            for (r, len) in self.overlaps(spec, c) {
                total += col[r] * DyadicRational::from_int(len as i128);
            }
        }
        // each unit of overlap times a column of width h
        Ok(total * DyadicRational::pow2_neg(unit_exponent(spec) + spec.m()))
    }

    /// `(1/|R|) int_R f`.
    pub fn average(&self, spec: &GridSpec, f: &GridFunction) -> Result<DyadicRational> {
        let m = self.measure(spec);
        Ok(self.integrate(spec, f)?.mul_pow2(m.exponent() as i32))
    }
}

/// `log2` of the reciprocal height unit.
pub fn unit_exponent(spec: &GridSpec) -> u32 {
    spec.m() + spec.mw() + 2
}

/// Cell side in height units.
pub fn cell_units(spec: &GridSpec) -> i64 {
    1 << (spec.mw() + 2)
}

/// Slab height `w` in height units.
pub fn slab_units(spec: &GridSpec) -> i64 {
    1 << (spec.m() + 2)
}
