//! Integer kernels behind the maximal operator, its linearization and the adjoint.
//!
//! A grid function is carried as integer numerators over one common power of two.
//! Heights are measured in units of `2^-(m + mw + 2)`, in which every slab
//! endpoint and every cell boundary is an integer.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::dyadic::DyadicRational;
use crate::error::{Error, Result};
use crate::family::RectangleFamily;
use crate::geometry::{cell_units, slab_units, Parallelogram};
use crate::grid::{CellSet, GridFunction, GridSpec};

/// Marker for cells that choose no member.
pub const NONE: u32 = u32::MAX;

/// Grid values `nums[i] / 2^exp`, column-major like [`GridFunction`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaledGrid {
    pub spec: GridSpec,
    pub exp: u32,
    pub nums: Vec<i128>,
}

impl ScaledGrid {
    pub fn from_function(f: &GridFunction) -> Self {
        let exp = f.values().iter().map(|v| v.exponent()).max().unwrap_or(0);
        let nums = f.values().iter().map(|v| v.numerator_at(exp)).collect();
        ScaledGrid { spec: f.spec(), exp, nums }
    }

    pub fn indicator(set: &CellSet) -> Self {
        let nums = set.bits().iter().map(|&b| b as i128).collect();
        ScaledGrid { spec: set.spec(), exp: 0, nums }
    }

    pub fn to_function(&self) -> GridFunction {
        let values = self.nums.iter().map(|&n| DyadicRational::new(n, self.exp)).collect();
        GridFunction::new(self.spec, values).expect("nonnegative by construction")
    }

    pub fn column(&self, c: usize) -> &[i128] {
        let n = self.spec.side();
        &self.nums[c * n..(c + 1) * n]
    }

    pub fn max(&self) -> i128 {
        self.nums.iter().copied().max().unwrap_or(0)
    }

    /// Rescales so the largest numerator has about 25 bits, flooring.
    pub fn normalized(&self) -> ScaledGrid {
        let top = self.max();
        if top == 0 {
            return self.clone();
        }
        let bits = 128 - top.leading_zeros() as i32;
        let shift = bits - 25;
        let nums = if shift > 0 {
            self.nums.iter().map(|&n| n >> shift).collect()
        } else {
            self.nums.iter().map(|&n| n << -shift).collect()
        };
        ScaledGrid { spec: self.spec, exp: 0, nums }
    }

    /// `sum nums^2` as a float, for norm ratios.
    pub fn sum_squares(&self) -> f64 {
        self.nums.iter().map(|&n| (n as f64) * (n as f64)).sum()
    }
}

/// Integral of one column over `[0, y)` in height units.
#[inline]
fn column_antiderivative(col: &[i128], prefix: &[i128], shift: u32, y: i64) -> i128 {
    let r = (y >> shift) as usize;
    let full = prefix[r] << shift;
    if r == col.len() {
        full
    } else {
        full + col[r] * (y & ((1 << shift) - 1)) as i128
    }
}

/// Columns per block in [`member_integrals`].
const BLOCK: usize = 16;

trait Acc:
    Copy
    + Default
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::AddAssign
    + std::ops::Shl<u32, Output = Self>
    + Send
    + Sync
{
    fn from_i64(x: i64) -> Self;
    fn from_i128(x: i128) -> Self;
    fn widen(self) -> i128;
}

impl Acc for i64 {
    fn from_i64(x: i64) -> Self {
        x
    }
    fn from_i128(x: i128) -> Self {
        x as i64
    }
    fn widen(self) -> i128 {
        self as i128
    }
}

impl Acc for i128 {
    fn from_i64(x: i64) -> Self {
        x as i128
    }
    fn from_i128(x: i128) -> Self {
        x
    }
    fn widen(self) -> i128 {
        self
    }
}

#[inline]
fn antiderivative<T: Acc>(col: &[T], prefix: &[T], shift: u32, y: i64) -> T {
    let r = (y >> shift) as usize;
    let full = prefix[r] << shift;
    if r == col.len() {
        full
    } else {
        full + col[r] * T::from_i64(y & ((1 << shift) - 1))
    }
}

fn integrals_blocked<T: Acc>(fam: &RectangleFamily, g: &ScaledGrid) -> Vec<i128> {
    let spec = fam.spec();
    let (n, m, mw) = (spec.side(), spec.m(), spec.mw());
    let (shift, slab) = (mw + 2, slab_units(&spec));
    let block = BLOCK.min(n);
    let vals: Vec<T> = g.nums.iter().map(|&v| T::from_i128(v)).collect();
    (0..n / block)
        .into_par_iter()
        .fold(
            || (vec![T::default(); fam.len()], vec![T::default(); block * (n + 1)]),
            |(mut acc, mut p), b| {
                let c0 = b * block;
                for (j, p) in p.chunks_mut(n + 1).enumerate() {
                    let c = c0 + j;
                    for (r, v) in vals[c * n..(c + 1) * n].iter().enumerate() {
                        p[r + 1] = p[r] + *v;
                    }
                }
                for k in 0..=mw {
                    let cw = 1usize << (m - mw + k);
                    for base in c0 / cw..=(c0 + block - 1) / cw {
                        let lo = (base * cw).max(c0);
                        let hi = ((base + 1) * cw).min(c0 + block);
                        for idx in fam.group(k, base as u64) {
                            let r = &fam.members()[idx];
                            let step = (2 * (2 * r.slope as i64 + 1)) << (mw - k);
                            let mut y = r.y_lo_units(&spec, lo);
                            let mut s = T::default();
                            for c in lo..hi {
                                let col = &vals[c * n..(c + 1) * n];
                                let pc = &p[(c - c0) * (n + 1)..(c - c0 + 1) * (n + 1)];
                                s += antiderivative(col, pc, shift, y + slab) - antiderivative(col, pc, shift, y);
                                y += step;
                            }
                            acc[idx] += s;
                        }
                    }
                }
                (acc, p)
            },
        )
        .map(|(acc, _)| acc.into_iter().map(T::widen).collect::<Vec<i128>>())
        .reduce(
            || vec![0i128; fam.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// `int_R g` for every member, as numerators at exponent `g.exp + m + (m + mw + 2)`.
pub fn member_integrals(fam: &RectangleFamily, g: &ScaledGrid) -> Vec<i128> {
    let spec = fam.spec();
    // a full column sum, scaled to height units, must fit in an i64 with room for one member's columns
    let peak = g.nums.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
    let bits = 128 - peak.leading_zeros() + 2 * spec.m() + spec.mw() + 4;
    if bits < 63 {
        integrals_blocked::<i64>(fam, g)
    } else {
        integrals_blocked::<i128>(fam, g)
    }
}

/// Exponent of the numerators returned by [`member_averages`] for input exponent `exp`.
pub fn average_exponent(spec: &GridSpec, exp: u32) -> u32 {
    exp + 2 * spec.m() + 2
}

/// `avg_R g` for every member, at exponent [`average_exponent`].
pub fn member_averages(fam: &RectangleFamily, g: &ScaledGrid) -> Vec<i128> {
    let mw = fam.spec().mw();
    member_integrals(fam, g)
        .into_iter()
        .zip(fam.members())
        .map(|(s, r)| s << (mw - r.k))
        .collect()
}

/// Per cell, the largest member value among members covering the cell centre.
///
/// Ties go to the smallest member index. Cells covered by no member get `(0, NONE)`.
pub fn sweep_max(fam: &RectangleFamily, values: &[i128]) -> (Vec<i128>, Vec<u32>) {
    let spec = fam.spec();
    let n = spec.side();
    let len = spec.rows_per_slab();
    let mut best = vec![0i128; spec.cells()];
    let mut choice = vec![NONE; spec.cells()];
    best.par_chunks_mut(n)
        .zip(choice.par_chunks_mut(n))
        .enumerate()
        .for_each(|(c, (best, choice))| {
            // start[r0] = best member whose slab over c starts at row r0
            let mut start: Vec<Option<(i128, u32)>> = vec![None; n - len + 1];
            for range in fam.groups_over_column(c) {
                for idx in range {
                    let r0 = fam.members()[idx].first_row(&spec, c);
                    let cand = (values[idx], idx as u32);
                    match start[r0] {
                        Some((v, _)) if v >= cand.0 => {}
                        _ => start[r0] = Some(cand),
                    }
                }
            }
            // sliding maximum over windows of `len` starts
            let mut dq: VecDeque<(usize, i128, u32)> = VecDeque::new();
            for r in 0..n {
                if r < start.len() {
                    if let Some((v, i)) = start[r] {
                        while let Some(&(_, bv, bi)) = dq.back() {
                            if bv < v || (bv == v && bi > i) {
                                dq.pop_back();
                            } else {
                                break;
                            }
                        }
                        dq.push_back((r, v, i));
                    }
                }
                while let Some(&(r0, _, _)) = dq.front() {
                    if r0 + len <= r {
                        dq.pop_front();
                    } else {
                        break;
                    }
                }
                if let Some(&(_, v, i)) = dq.front() {
                    best[r] = v;
                    choice[r] = i;
                }
            }
        });
    (best, choice)
}

/// Per member, the sum of `g` numerators over cells choosing it.
pub fn chooser_sums(members: usize, choice: &[u32], g: &ScaledGrid) -> Result<Vec<i128>> {
    let mut out = vec![0i128; members];
    for (&ch, &v) in choice.iter().zip(&g.nums) {
        if ch != NONE {
            *out.get_mut(ch as usize).ok_or(Error::CorruptChoiceMap)? += v;
        }
    }
    Ok(out)
}

/// Exponent of [`adjoint_sum`] output for chooser sums at exponent `exp`.
pub fn adjoint_exponent(spec: &GridSpec, exp: u32) -> u32 {
    exp + 2 * spec.m() + 2
}

/// `sum_R weights[R] 1_R / |R|` averaged over each cell, with exact fractional overlaps.
pub fn adjoint_sum(fam: &RectangleFamily, weights: &[i128]) -> Vec<i128> {
    let spec = fam.spec();
    adjoint_sum_in(fam, weights, 0..spec.side(), spec.mw())
}

/// [`adjoint_sum`] over the columns in `cols`, using only members with `k <= max_k`.
///
/// Columns outside `cols` are left at zero.
pub fn adjoint_sum_in(
    fam: &RectangleFamily,
    weights: &[i128],
    cols: std::ops::Range<usize>,
    max_k: u32,
) -> Vec<i128> {
    let spec = fam.spec();
    let n = spec.side();
    let mw = spec.mw();
    let (cell, slab) = (cell_units(&spec), slab_units(&spec));
    let shift = mw + 2;
    let mut out = vec![0i128; spec.cells()];
    out.par_chunks_mut(n)
        .enumerate()
        .filter(|(c, _)| cols.contains(c))
        .for_each(|(c, acc)| {
            let mut diff = vec![0i128; n + 1];
            for range in fam.groups_over_column(c).take(max_k as usize + 1) {
                for idx in range {
                    let w = weights[idx];
                    if w == 0 {
                        continue;
                    }
                    let r: &Parallelogram = &fam.members()[idx];
                    let w = w << (mw - r.k);
                    let lo = r.y_lo_units(&spec, c);
                    let hi = lo + slab;
                    let (r0, r1) = ((lo >> shift) as usize, (hi >> shift) as usize);
                    if r0 == r1 {
                        acc[r0] += w * slab as i128;
                        continue;
                    }
                    acc[r0] += w * ((r0 as i64 + 1) * cell - lo) as i128;
                    diff[r0 + 1] += w * cell as i128;
                    diff[r1] -= w * cell as i128;
                    if r1 < n {
                        acc[r1] += w * (hi - r1 as i64 * cell) as i128;
                    }
                }
            }
            let mut run = 0i128;
            for r in 0..n {
                run += diff[r];
                acc[r] += run;
            }
        });
    out
}

/// `int_R g` for the listed members, at the exponent of [`member_integrals`].
pub fn integrals_for(fam: &RectangleFamily, indices: &[usize], g: &ScaledGrid) -> Vec<i128> {
    let spec = fam.spec();
    let n = spec.side();
    let (shift, slab) = (spec.mw() + 2, slab_units(&spec));
    let mut prefix = vec![0i128; n + 1];
    let mut cached = usize::MAX;
    // visit (column, member) pairs column by column so each prefix is built once
    let mut sums = vec![0i128; indices.len()];
    let mut cols: Vec<(usize, usize)> = indices
        .iter()
        .enumerate()
        .flat_map(|(slot, &i)| fam.members()[i].columns(&spec).map(move |c| (c, slot)))
        .collect();
    cols.sort_unstable();
    for (c, slot) in cols {
        let col = g.column(c);
        if cached != c {
            for r in 0..n {
                prefix[r + 1] = prefix[r] + col[r];
            }
            cached = c;
        }
        let y = fam.members()[indices[slot]].y_lo_units(&spec, c);
        sums[slot] += column_antiderivative(col, &prefix, shift, y + slab)
            - column_antiderivative(col, &prefix, shift, y);
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{FamilyParams, Provenance};
    use crate::grid::OffsetStep;

    #[test]
    fn integrals_match_geometry() {
        let spec = GridSpec::new(5, 2, OffsetStep::HalfW).unwrap();
        let params = FamilyParams::new(spec, DyadicRational::ONE).unwrap();
        let members = vec![
            Parallelogram { k: 0, base: 1, slope: 0, offset: 3 },
            Parallelogram { k: 2, base: 0, slope: 1, offset: 1 },
        ];
        let fam = RectangleFamily::new(params, members, Provenance::Constructed).unwrap();
        let vals: Vec<DyadicRational> =
            (0..spec.cells()).map(|i| DyadicRational::new((i * 7 % 5) as i128, 2)).collect();
        let f = GridFunction::new(spec, vals).unwrap();
        let g = ScaledGrid::from_function(&f);
        let avgs = member_averages(&fam, &g);
        for (r, a) in fam.members().iter().zip(avgs) {
            assert_eq!(
                DyadicRational::new(a, average_exponent(&spec, g.exp)),
                r.average(&spec, &f).unwrap()
            );
        }
    }

    #[test]
    fn normalized_keeps_shape() {
        let spec = GridSpec::new(2, 0, OffsetStep::W).unwrap();
        let g = ScaledGrid { spec, exp: 0, nums: (0..16).map(|i| i as i128 * 3).collect() };
        let h = g.normalized();
        assert_eq!(128 - h.max().leading_zeros(), 25);
        assert!(h.nums.windows(2).all(|w| w[0] <= w[1]));
    }
}
