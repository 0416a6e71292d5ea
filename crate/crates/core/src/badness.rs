//! Badness of rectangles, the in/out split over vertical windows, the shrinking
//! step that produces `E'`, and its iteration with badness bands.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::dyadic::{DyadicInterval, DyadicRational, Window};
use crate::error::{Error, Result};
use crate::family::RectangleFamily;
use crate::geometry::{cell_units, slab_units, unit_exponent, Parallelogram};
use crate::grid::{CellSet, GridFunction, GridSpec};
use crate::kernel::{self, ScaledGrid, NONE};
use crate::maximal::{maximal_apply, ChoiceMap};

/// `C_key = 20 lambda0`.
pub fn c_key(lambda0: DyadicRational) -> DyadicRational {
    lambda0 * DyadicRational::from_int(20)
}

fn chooser_counts(fam: &RectangleFamily, rho: &ChoiceMap, e: &CellSet) -> Result<Vec<i128>> {
    if rho.spec() != fam.spec() || e.spec() != fam.spec() {
        return Err(Error::IncompatibleGrids);
    }
    kernel::chooser_sums(fam.len(), rho.raw(), &ScaledGrid::indicator(e))
}

fn bases(fam: &RectangleFamily) -> BTreeMap<DyadicInterval, Vec<usize>> {
    let spec = fam.spec();
    let mut out: BTreeMap<DyadicInterval, Vec<usize>> = BTreeMap::new();
    for (i, r) in fam.members().iter().enumerate() {
        out.entry(r.base_interval(&spec)).or_default().push(i);
    }
    out
}

/// `B_R` for the members in `indices`, all with base `base`, from chooser counts.
fn badness_for_base(
    fam: &RectangleFamily,
    counts: &[i128],
    base: DyadicInterval,
    indices: &[usize],
) -> Vec<DyadicRational> {
    let spec = fam.spec();
    let k = spec.length_exponent(&base).expect("member base");
    let t = kernel::adjoint_sum_in(fam, counts, spec.columns_of(&base), k);
    let exp = kernel::adjoint_exponent(&spec, 0);
    let g = ScaledGrid { spec, exp, nums: t };
    let aexp = kernel::average_exponent(&spec, exp);
    kernel::integrals_for(fam, indices, &g)
        .into_iter()
        .map(|s| DyadicRational::new(s << (spec.mw() - k), aexp))
        .collect()
}

/// `B_R^E = (1/|R|) int_R T*(1_{E_{pi_1 R}})`.
pub fn badness(index: usize, e: &CellSet, rho: &ChoiceMap, fam: &RectangleFamily) -> Result<DyadicRational> {
    let r = fam.get(index).ok_or_else(|| Error::InvalidArgument(format!("no member {index}")))?;
    let counts = chooser_counts(fam, rho, e)?;
    Ok(badness_for_base(fam, &counts, r.base_interval(&fam.spec()), &[index])[0])
}

/// `nu_R^E` and `B_R^E` for every member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BadnessTable {
    pub nu: Vec<DyadicRational>,
    pub b: Vec<DyadicRational>,
}

pub fn badness_table(e: &CellSet, rho: &ChoiceMap, fam: &RectangleFamily) -> Result<BadnessTable> {
    let counts = chooser_counts(fam, rho, e)?;
    let area = fam.spec().cell_area();
    let nu = counts.iter().map(|&c| DyadicRational::from_int(c) * area).collect();
    let groups: Vec<(DyadicInterval, Vec<usize>)> = bases(fam).into_iter().collect();
    let parts: Vec<Vec<DyadicRational>> = groups
        .par_iter()
        .map(|(base, idx)| badness_for_base(fam, &counts, *base, idx))
        .collect();
    let mut b = vec![DyadicRational::ZERO; fam.len()];
    for ((_, idx), vals) in groups.iter().zip(parts) {
        for (i, v) in idx.iter().zip(vals) {
            b[*i] = v;
        }
    }
    Ok(BadnessTable { nu, b })
}

/// `(int (T* 1_E)^2, sum_R nu_R^E B_R^E)`.
pub fn reformulate_check(e: &CellSet, rho: &ChoiceMap, fam: &RectangleFamily) -> Result<(DyadicRational, DyadicRational)> {
    let spec = fam.spec();
    let counts = chooser_counts(fam, rho, e)?;
    let t = kernel::adjoint_sum(fam, &counts);
    let exp = kernel::adjoint_exponent(&spec, 0);
    let sq: i128 = t.iter().map(|v| v * v).sum();
    let lhs = DyadicRational::new(sq, 2 * exp) * spec.cell_area();
    let table = badness_table(e, rho, fam)?;
    let rhs = table.nu.iter().zip(&table.b).map(|(n, b)| *n * *b).sum();
    Ok((lhs, rhs))
}

/// Whether the vertical projection of `R` lies in `w`.
pub fn projects_into(spec: &GridSpec, r: &Parallelogram, w: &Window) -> bool {
    let (lo, hi) = r.vertical_extent(spec);
    w.contains_window(lo, hi)
}

/// `|R ∩ (pi_1 R × w)|` in units of `2^-(m + unit_exponent)`.
fn mass_in_window(spec: &GridSpec, r: &Parallelogram, lo_u: i64, hi_u: i64) -> i64 {
    let slab = slab_units(spec);
    r.columns(spec)
        .map(|c| {
            let y = r.y_lo_units(spec, c);
            ((y + slab).min(hi_u) - y.max(lo_u)).max(0)
        })
        .sum()
}

fn window_units(spec: &GridSpec, w: &Window) -> (i64, i64) {
    let e = unit_exponent(spec);
    (w.lo.numerator_at(e) as i64, w.hi.numerator_at(e) as i64)
}

/// `int_{I × avg} T*(1_{E^in})` and the same for `E^out`, where the split is by
/// whether `pi_2(rho(x))` lies in `class`.
fn split_masses(
    fam: &RectangleFamily,
    counts: &[i128],
    i: &DyadicInterval,
    avg: &Window,
    class: &Window,
) -> (DyadicRational, DyadicRational) {
    let spec = fam.spec();
    let (lo_u, hi_u) = window_units(&spec, avg);
    let mw = spec.mw();
    let (mut inside, mut outside) = (0i128, 0i128);
    for (q, &n) in fam.members().iter().zip(counts) {
        if n == 0 || !i.contains(&q.base_interval(&spec)) {
            continue;
        }
        let mass = mass_in_window(&spec, q, lo_u, hi_u) as i128;
        // nu_Q |Q ∩ (I × avg)| / |Q|, with |Q| = 2^(k - 2 mw)
        let term = (n * mass) << (mw - q.k);
        if projects_into(&spec, q, class) {
            inside += term;
        } else {
            outside += term;
        }
    }
    // counts carry h^2 = 2^-2m, masses 2^-(U + m), 1/|Q| contributes 2^(2 mw - k) = 2^mw 2^(mw - k)
    let exp = 2 * spec.m() + unit_exponent(&spec) + spec.m() - mw;
    (DyadicRational::new(inside, exp), DyadicRational::new(outside, exp))
}

/// `(B^in_{I,K}, B^out_{I,K})`: averages over `I × K` with the split by `3K`.
pub fn in_out_split(
    i: &DyadicInterval,
    k: &DyadicInterval,
    e: &CellSet,
    rho: &ChoiceMap,
    fam: &RectangleFamily,
) -> Result<(DyadicRational, DyadicRational)> {
    let counts = chooser_counts(fam, rho, e)?;
    let (a, b) = split_masses(fam, &counts, i, &k.window(), &k.tripled());
    let norm = (i.len() * k.len()).exponent() as i32;
    Ok((a.mul_pow2(norm), b.mul_pow2(norm)))
}

/// `(1/|R|) int_R T*(1_{E^in})` and `(1/|R|) int_R T*(1_{E^out})` for the split by `3K`,
/// restricted to choosers with projection inside `pi_1 R`. The two sum to `B_R^E`.
pub fn split_over_member(
    index: usize,
    k: &DyadicInterval,
    e: &CellSet,
    rho: &ChoiceMap,
    fam: &RectangleFamily,
) -> Result<(DyadicRational, DyadicRational)> {
    let spec = fam.spec();
    let counts = chooser_counts(fam, rho, e)?;
    let r = fam.get(index).ok_or_else(|| Error::InvalidArgument(format!("no member {index}")))?;
    let tripled = k.tripled();
    let mut inside = counts.clone();
    let mut outside = counts;
    for (j, q) in fam.members().iter().enumerate() {
        if projects_into(&spec, q, &tripled) {
            outside[j] = 0;
        } else {
            inside[j] = 0;
        }
    }
    let base = r.base_interval(&spec);
    Ok((
        badness_for_base(fam, &inside, base, &[index])[0],
        badness_for_base(fam, &outside, base, &[index])[0],
    ))
}

/// Vertical dyadic windows `K` with `B^out_{I,K} >= lambda0` and `B^out_{I,3K} < lambda0`.
pub fn select_bad_windows(
    i: &DyadicInterval,
    e: &CellSet,
    rho: &ChoiceMap,
    fam: &RectangleFamily,
    lambda0: DyadicRational,
) -> Result<Vec<DyadicInterval>> {
    let counts = chooser_counts(fam, rho, e)?;
    Ok(bad_windows_from_counts(fam, &counts, i, lambda0))
}

fn bad_windows_from_counts(
    fam: &RectangleFamily,
    counts: &[i128],
    i: &DyadicInterval,
    lambda0: DyadicRational,
) -> Vec<DyadicInterval> {
    let spec = fam.spec();
    if !fam
        .members()
        .iter()
        .zip(counts)
        .any(|(q, &n)| n > 0 && i.contains(&q.base_interval(&spec)))
    {
        return Vec::new();
    }
    let windows: Vec<DyadicInterval> = (0..=spec.m())
        .flat_map(|l| (0..1u64 << l).map(move |x| DyadicInterval { level: l, index: x }))
        .collect();
    windows
        .into_par_iter()
        .filter(|k| {
            let kw = k.window();
            let (_, out) = split_masses(fam, counts, i, &kw, &k.tripled());
            if out < lambda0 * i.len() * k.len() {
                return false;
            }
            let k3 = k.tripled();
            let (_, out3) = split_masses(fam, counts, i, &k3, &kw.scaled_about_center(9));
            out3 < lambda0 * i.len() * k3.len()
        })
        .collect()
}

/// Cells meeting `R` in positive area.
pub fn touched_cells(spec: &GridSpec, r: &Parallelogram) -> CellSet {
    let cell = cell_units(spec);
    let slab = slab_units(spec);
    let mut set = CellSet::empty(*spec);
    for c in r.columns(spec) {
        let y = r.y_lo_units(spec, c);
        for row in (y / cell)..=((y + slab - 1) / cell) {
            set.insert(spec.index(c, row as usize));
        }
    }
    set
}

/// Cells of `I × w`.
pub fn window_cells(spec: &GridSpec, i: &DyadicInterval, w: &Window) -> CellSet {
    let rows = w.lo.numerator_at(spec.m()) as usize..w.hi.numerator_at(spec.m()) as usize;
    let cols = spec.columns_of(i);
    CellSet::from_fn(*spec, |c, r| cols.contains(&c) && rows.contains(&r))
}

/// Exact area of a union of members.
pub fn union_measure(spec: &GridSpec, members: &[&Parallelogram]) -> DyadicRational {
    let slab = slab_units(spec);
    let mut per_column: BTreeMap<usize, Vec<(i64, i64)>> = BTreeMap::new();
    for r in members {
        for c in r.columns(spec) {
            let y = r.y_lo_units(spec, c);
            per_column.entry(c).or_default().push((y, y + slab));
        }
    }
    let mut total = 0i128;
    for (_, mut segs) in per_column {
        segs.sort_unstable();
        let (mut lo, mut hi) = segs[0];
        for (a, b) in segs.into_iter().skip(1) {
            if a > hi {
                total += (hi - lo) as i128;
                lo = a;
            }
            hi = hi.max(b);
        }
        total += (hi - lo) as i128;
    }
    DyadicRational::new(total, unit_exponent(spec) + spec.m())
}

/// A member violating the dichotomy of the shrinking step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DichotomyFailure {
    pub member: Parallelogram,
    pub b_e: String,
    pub b_e_prime: String,
    pub inside_e_prime: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShrinkDiagnostics {
    pub e_measure: DyadicRational,
    pub e_prime_measure: DyadicRational,
    /// `calB_I` for every `I` where it is nonempty.
    pub bad_windows: Vec<(DyadicInterval, Vec<DyadicInterval>)>,
    /// `{ M T*(1_E) >= lambda0 / 2 }`.
    pub f_set: CellSet,
    /// Members with `B_R^E > C_key`.
    pub above_key: usize,
    pub failures: Vec<DichotomyFailure>,
}

impl ShrinkDiagnostics {
    pub fn halving_holds(&self) -> bool {
        self.e_prime_measure.mul_pow2(1) <= self.e_measure
    }
}

/// One shrinking step: `E' = union over I, K in calB_I of I × 3K`, plus the audit.
pub fn shrink_once(
    e: &CellSet,
    rho: &ChoiceMap,
    fam: &RectangleFamily,
    lambda0: DyadicRational,
) -> Result<(CellSet, ShrinkDiagnostics)> {
    if lambda0 < DyadicRational::ONE {
        return Err(Error::InvalidArgument("lambda0 must be at least 1".into()));
    }
    let spec = fam.spec();
    let counts = chooser_counts(fam, rho, e)?;
    let intervals: Vec<DyadicInterval> = (0..=spec.mw())
        .flat_map(|l| (0..1u64 << l).map(move |x| DyadicInterval { level: l, index: x }))
        .collect();
    let mut bad_windows = Vec::new();
    let mut e_prime = CellSet::empty(spec);
    for i in intervals {
        let ks = bad_windows_from_counts(fam, &counts, &i, lambda0);
        for k in &ks {
            e_prime = e_prime.union(&window_cells(&spec, &i, &k.tripled()));
        }
        if !ks.is_empty() {
            bad_windows.push((i, ks));
        }
    }
    let t = kernel::adjoint_sum(fam, &counts);
    let t = ScaledGrid { spec, exp: kernel::adjoint_exponent(&spec, 0), nums: t }.to_function();
    let mt = maximal_apply(&t, fam)?;
    let half = lambda0.mul_pow2(-1);
    let f_set = CellSet::from_bits(spec, mt.values().iter().map(|v| *v >= half).collect())?;

    let table = badness_table(e, rho, fam)?;
    let key = c_key(lambda0);
    let above: Vec<usize> = (0..fam.len()).filter(|&i| table.b[i] > key).collect();
    let mut failures = Vec::new();
    if !above.is_empty() {
        let prime = badness_table(&e_prime, rho, fam)?;
        for &i in &above {
            let r = fam.members()[i];
            let inside = touched_cells(&spec, &r).is_subset(&e_prime);
            if !(inside && table.b[i] <= key + prime.b[i]) {
                failures.push(DichotomyFailure {
                    member: r,
                    b_e: table.b[i].to_string(),
                    b_e_prime: prime.b[i].to_string(),
                    inside_e_prime: inside,
                });
            }
        }
    }
    let diag = ShrinkDiagnostics {
        e_measure: e.measure(),
        e_prime_measure: e_prime.measure(),
        bad_windows,
        f_set,
        above_key: above.len(),
        failures,
    };
    Ok((e_prime, diag))
}

/// One badness band `S_k = { R : B_R^{E_0} >= C_key k }`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandRecord {
    pub k: usize,
    pub members: usize,
    pub measure: String,
    /// `|union S_k| / (2^-k |E_0|)`.
    pub ratio: f64,
    /// Every member of the band lies in `E_{k-1}`; checked for `k >= 2`.
    pub contained: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShrinkTrace {
    pub lambda0: DyadicRational,
    pub sets: Vec<CellSet>,
    pub steps: Vec<ShrinkDiagnostics>,
    pub bands: Vec<BandRecord>,
    pub truncated: bool,
}

impl ShrinkTrace {
    pub fn measures(&self) -> Vec<DyadicRational> {
        self.sets.iter().map(|s| s.measure()).collect()
    }

    /// `|E_j| <= 2^-j |E_0|` for every step.
    pub fn halving_chain_holds(&self) -> bool {
        let m = self.measures();
        m.iter().enumerate().all(|(j, x)| x.mul_pow2(j as i32) <= m[0])
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("step,measure\n");
        for (j, m) in self.measures().iter().enumerate() {
            let _ = writeln!(s, "{j},{m}");
        }
        s
    }

    pub fn bands_csv(&self) -> String {
        let mut s = String::from("k,members,measure,ratio,contained\n");
        for b in &self.bands {
            let _ = writeln!(s, "{},{},{},{:.9},{}", b.k, b.members, b.measure, b.ratio, b.contained);
        }
        s
    }
}

/// Iterates [`shrink_once`] from `E_0 = e` and reports the badness bands of `E_0`.
pub fn shrink_iterate(
    e: &CellSet,
    rho: &ChoiceMap,
    fam: &RectangleFamily,
    lambda0: DyadicRational,
    max_steps: usize,
) -> Result<ShrinkTrace> {
    let spec = fam.spec();
    let mut sets = vec![e.clone()];
    let mut steps = Vec::new();
    let mut truncated = false;
    while !sets.last().expect("nonempty").is_empty() {
        if steps.len() == max_steps {
            truncated = true;
            break;
        }
        let (next, diag) = shrink_once(sets.last().expect("nonempty"), rho, fam, lambda0)?;
        steps.push(diag);
        sets.push(next);
    }
    let mut bands = Vec::new();
    if !e.is_empty() {
        let table = badness_table(e, rho, fam)?;
        let key = c_key(lambda0);
        for k in 1.. {
            let threshold = key * DyadicRational::from_int(k as i128);
            let band: Vec<&Parallelogram> = fam
                .members()
                .iter()
                .zip(&table.b)
                .filter(|(_, b)| **b >= threshold)
                .map(|(r, _)| r)
                .collect();
            if band.is_empty() {
                break;
            }
            let measure = union_measure(&spec, &band);
            let reference = e.measure().mul_pow2(-(k as i32));
            let contained = k < 2
                || sets.get(k - 1).is_some_and(|ek| {
                    band.iter().all(|r| touched_cells(&spec, r).is_subset(ek))
                });
            bands.push(BandRecord {
                k,
                members: band.len(),
                measure: measure.to_string(),
                ratio: measure.to_f64() / reference.to_f64(),
                contained,
            });
        }
    }
    Ok(ShrinkTrace { lambda0, sets, steps, bands, truncated })
}

/// `T*(1_F)` as a grid function.
pub fn adjoint_indicator(f_set: &CellSet, rho: &ChoiceMap, fam: &RectangleFamily) -> Result<GridFunction> {
    let spec = fam.spec();
    let counts = chooser_counts(fam, rho, f_set)?;
    let t = kernel::adjoint_sum(fam, &counts);
    Ok(ScaledGrid { spec, exp: kernel::adjoint_exponent(&spec, 0), nums: t }.to_function())
}

/// Cells whose choice has projection inside `i`.
pub fn restrict_to_projection(e: &CellSet, rho: &ChoiceMap, fam: &RectangleFamily, i: &DyadicInterval) -> CellSet {
    let spec = fam.spec();
    CellSet::from_bits(
        spec,
        e.bits()
            .iter()
            .zip(rho.raw())
            .map(|(&b, &ch)| b && ch != NONE && i.contains(&fam.members()[ch as usize].base_interval(&spec)))
            .collect(),
    )
    .expect("length matches")
}
