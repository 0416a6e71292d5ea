//! The maximal operator over a family, its linearization, the linear operator
//! `T_rho` with adjoint, the vertical Hardy-Littlewood maximal function, and a
//! heuristic lower estimate of the `L^2` operator norm.

use std::fmt::Write as _;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;

use crate::dyadic::DyadicRational;
use crate::error::{Error, Result};
use crate::family::RectangleFamily;
use crate::geometry::Parallelogram;
use crate::grid::{CellSet, GridFunction, GridSpec};
use crate::kernel::{self, ScaledGrid, NONE};

/// The linearization `rho`: each cell's chosen member index, or none on `X`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChoiceMap {
    spec: GridSpec,
    entries: Vec<u32>,
}

impl ChoiceMap {
    pub fn from_entries(spec: GridSpec, entries: Vec<Option<usize>>) -> Result<Self> {
        if entries.len() != spec.cells() {
            return Err(Error::CorruptChoiceMap);
        }
        let entries = entries
            .into_iter()
            .map(|e| e.map_or(NONE, |i| i as u32))
            .collect();
        Ok(ChoiceMap { spec, entries })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn get(&self, cell: usize) -> Option<usize> {
        match self.entries[cell] {
            NONE => None,
            i => Some(i as usize),
        }
    }

    pub fn raw(&self) -> &[u32] {
        &self.entries
    }

    /// The exceptional set `X`.
    pub fn uncovered(&self) -> CellSet {
        CellSet::from_bits(self.spec, self.entries.iter().map(|&e| e == NONE).collect())
            .expect("length matches")
    }

    /// Cells choosing member `index`.
    pub fn choosers(&self, index: usize) -> CellSet {
        CellSet::from_bits(self.spec, self.entries.iter().map(|&e| e as usize == index).collect())
            .expect("length matches")
    }

    /// Checks indices and that every cell lies in its chosen member.
    pub fn validate(&self, fam: &RectangleFamily) -> Result<()> {
        if self.spec != fam.spec() {
            return Err(Error::IncompatibleGrids);
        }
        for (cell, e) in self.entries.iter().enumerate() {
            if *e == NONE {
                continue;
            }
            let r = fam.get(*e as usize).ok_or(Error::CorruptChoiceMap)?;
            if !r.covers(&self.spec, self.spec.column_of(cell), self.spec.row_of(cell)) {
                return Err(Error::CorruptChoiceMap);
            }
        }
        Ok(())
    }

    fn check(&self, fam: &RectangleFamily) -> Result<()> {
        if self.spec != fam.spec() {
            return Err(Error::IncompatibleGrids);
        }
        if self.entries.iter().any(|&e| e != NONE && e as usize >= fam.len()) {
            return Err(Error::CorruptChoiceMap);
        }
        Ok(())
    }
}

fn check_spec(f: &GridFunction, fam: &RectangleFamily) -> Result<()> {
    if f.spec() != fam.spec() {
        return Err(Error::IncompatibleGrids);
    }
    Ok(())
}

fn from_scaled(spec: GridSpec, nums: &[i128], exp: u32) -> GridFunction {
    let values = nums.iter().map(|&n| DyadicRational::new(n, exp)).collect();
    GridFunction::new(spec, values).expect("nonnegative by construction")
}

/// `M f` together with the maximizing choice, from an already scaled input.
pub fn maximal_scaled(fam: &RectangleFamily, g: &ScaledGrid) -> (Vec<i128>, Vec<u32>) {
    let avgs = kernel::member_averages(fam, g);
    kernel::sweep_max(fam, &avgs)
}

/// `M f(x) = max over members whose cell-centre set contains x of avg_R f`; 0 on `X`.
pub fn maximal_apply(f: &GridFunction, fam: &RectangleFamily) -> Result<GridFunction> {
    check_spec(f, fam)?;
    let g = ScaledGrid::from_function(f);
    let (best, _) = maximal_scaled(fam, &g);
    Ok(from_scaled(f.spec(), &best, kernel::average_exponent(&f.spec(), g.exp)))
}

/// Argmax choice per cell, ties broken by canonical order.
pub fn linearize(f: &GridFunction, fam: &RectangleFamily) -> Result<ChoiceMap> {
    check_spec(f, fam)?;
    let (_, choice) = maximal_scaled(fam, &ScaledGrid::from_function(f));
    Ok(ChoiceMap { spec: f.spec(), entries: choice })
}

/// `T_rho f(x) = avg_{rho(x)} f`, and 0 on `X`.
pub fn apply_t(rho: &ChoiceMap, fam: &RectangleFamily, f: &GridFunction) -> Result<GridFunction> {
    rho.check(fam)?;
    check_spec(f, fam)?;
    let g = ScaledGrid::from_function(f);
    let nums = apply_t_scaled(rho.raw(), fam, &g);
    Ok(from_scaled(f.spec(), &nums, kernel::average_exponent(&f.spec(), g.exp)))
}

pub fn apply_t_scaled(choice: &[u32], fam: &RectangleFamily, g: &ScaledGrid) -> Vec<i128> {
    let avgs = kernel::member_averages(fam, g);
    choice.par_iter().map(|&e| if e == NONE { 0 } else { avgs[e as usize] }).collect()
}

/// `T*_rho g = sum_R (1_R / |R|) int_{rho = R} g`, with `1_R` the exact area fraction per cell.
pub fn apply_t_adjoint(rho: &ChoiceMap, fam: &RectangleFamily, g: &GridFunction) -> Result<GridFunction> {
    rho.check(fam)?;
    check_spec(g, fam)?;
    let s = ScaledGrid::from_function(g);
    let nums = apply_t_adjoint_scaled(rho.raw(), fam, &s)?;
    Ok(from_scaled(g.spec(), &nums, kernel::adjoint_exponent(&g.spec(), s.exp)))
}

pub fn apply_t_adjoint_scaled(choice: &[u32], fam: &RectangleFamily, g: &ScaledGrid) -> Result<Vec<i128>> {
    let weights = kernel::chooser_sums(fam.len(), choice, g)?;
    Ok(kernel::adjoint_sum(fam, &weights))
}

/// `nu_R^F`: measure of the cells of `F` choosing `R`.
pub fn nu(rho: &ChoiceMap, f_set: &CellSet, index: usize) -> DyadicRational {
    let n = f_set
        .iter()
        .filter(|&c| rho.entries[c] as usize == index)
        .count();
    DyadicRational::from_int(n as i128) * rho.spec.cell_area()
}

/// `nu_R^F` for every member at once.
pub fn nu_all(rho: &ChoiceMap, fam: &RectangleFamily, f_set: &CellSet) -> Result<Vec<DyadicRational>> {
    rho.check(fam)?;
    let counts = kernel::chooser_sums(fam.len(), rho.raw(), &ScaledGrid::indicator(f_set))?;
    let area = rho.spec.cell_area();
    Ok(counts.into_iter().map(|c| DyadicRational::from_int(c) * area).collect())
}

/// Vertical maximal function: the best average over cell-aligned segments of the
/// cell's own column that contain the cell. Values are exact rationals.
pub fn m2_vertical(g: &GridFunction) -> Vec<Ratio<i128>> {
    let spec = g.spec();
    let n = spec.side();
    let s = ScaledGrid::from_function(g);
    let denom_scale = 1i128 << s.exp;
    let mut out = vec![Ratio::from_integer(0); spec.cells()];
    out.par_chunks_mut(n).enumerate().for_each(|(c, out)| {
        let col = s.column(c);
        let mut prefix = vec![0i128; n + 1];
        for r in 0..n {
            prefix[r + 1] = prefix[r] + col[r];
        }
        // best[x] as (sum, len); compared by cross multiplication
        let mut best = vec![(0i128, 1i128); n];
        let better = |a: (i128, i128), b: (i128, i128)| a.0 * b.1 > b.0 * a.1;
        for a in 0..n {
            // suffix maxima over segment ends b >= x for segments starting at a
            let mut suf = (prefix[n] - prefix[a], (n - a) as i128);
            for x in (a..n).rev() {
                let cand = (prefix[x + 1] - prefix[a], (x + 1 - a) as i128);
                if better(cand, suf) {
                    suf = cand;
                }
                if better(suf, best[x]) {
                    best[x] = suf;
                }
            }
        }
        for (o, (sum, len)) in out.iter_mut().zip(best) {
            *o = Ratio::new(sum, len * denom_scale);
        }
    });
    out
}

/// Exact `DyadicRational` to rational conversion.
pub fn to_ratio(x: DyadicRational) -> Ratio<i128> {
    Ratio::new(x.numerator(), 1i128 << x.exponent())
}

/// `||M f||_p / ||f||_p` in floating point.
pub fn lp_ratio(f: &GridFunction, fam: &RectangleFamily, p: f64) -> Result<f64> {
    let norm = f.lp_norm(p);
    if norm == 0.0 {
        return Err(Error::DegenerateSeed);
    }
    Ok(maximal_apply(f, fam)?.lp_norm(p) / norm)
}

/// `sup_t t |{M f >= t}| / ||f||_1`, the empirical weak (1,1) ratio of `f`.
pub fn weak_type_ratio(f: &GridFunction, fam: &RectangleFamily) -> Result<f64> {
    let l1 = f.integral().to_f64();
    if l1 == 0.0 {
        return Err(Error::DegenerateSeed);
    }
    let mut vals: Vec<DyadicRational> = maximal_apply(f, fam)?.values().to_vec();
    vals.sort_unstable_by(|a, b| b.cmp(a));
    let area = f.spec().cell_area().to_f64();
    let best = vals
        .iter()
        .enumerate()
        .map(|(i, t)| t.to_f64() * (i + 1) as f64 * area)
        .fold(0.0, f64::max);
    Ok(best / l1)
}

/// One row of the ascent trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioSample {
    pub seed_id: usize,
    pub iteration: usize,
    pub ratio: f64,
}

/// Heuristic lower estimate of `||M||_{2 -> 2}` over a family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormReport {
    pub family_size: usize,
    pub seeds: usize,
    pub ascent_iters: usize,
    pub samples: Vec<RatioSample>,
    pub best_ratio: f64,
    pub best_seed: usize,
    pub best_iteration: usize,
}

impl NormReport {
    /// Flat `key = value` block.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "family_size = {}", self.family_size);
        let _ = writeln!(s, "seeds = {}", self.seeds);
        let _ = writeln!(s, "ascent_iters = {}", self.ascent_iters);
        let _ = writeln!(s, "best_ratio = {:.9}", self.best_ratio);
        let _ = writeln!(s, "best_seed = {}", self.best_seed);
        let _ = writeln!(s, "best_iteration = {}", self.best_iteration);
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("seed_id,iteration,ratio\n");
        for r in &self.samples {
            let _ = writeln!(s, "{},{},{:.9}", r.seed_id, r.iteration, r.ratio);
        }
        s
    }
}

/// `||M f||_2 / ||f||_2` with `M f` already computed at exponent `mexp`.
fn l2_ratio(g: &ScaledGrid, mf: &[i128], mexp: u32) -> f64 {
    let num: f64 = mf.iter().map(|&n| (n as f64) * (n as f64)).sum();
    let den = g.sum_squares();
    (num / den).sqrt() * 2f64.powi(g.exp as i32 - mexp as i32)
}

/// Ratios `||M f||_2 / ||f||_2` for each seed, then for each ascent iterate
/// `f <- T*_rho T_rho f` with `rho` refreshed from the current `f`.
pub fn estimate_norm(fam: &RectangleFamily, seeds: &[GridFunction], ascent_iters: usize) -> Result<NormReport> {
    let spec = fam.spec();
    let mut samples = Vec::new();
    for (seed_id, seed) in seeds.iter().enumerate() {
        check_spec(seed, fam)?;
        if seed.is_zero() {
            return Err(Error::DegenerateSeed);
        }
        let mut g = ScaledGrid::from_function(seed);
        for iteration in 0..=ascent_iters {
            let (mf, choice) = maximal_scaled(fam, &g);
            let mexp = kernel::average_exponent(&spec, g.exp);
            let ratio = l2_ratio(&g, &mf, mexp);
            samples.push(RatioSample { seed_id, iteration, ratio });
            if iteration == ascent_iters || mf.iter().all(|&v| v == 0) {
                break;
            }
            let t = ScaledGrid { spec, exp: mexp, nums: mf };
            let next = apply_t_adjoint_scaled(&choice, fam, &t)?;
            g = ScaledGrid { spec, exp: 0, nums: next }.normalized();
            if g.max() == 0 {
                break;
            }
        }
    }
    let (best_ratio, best_seed, best_iteration) = samples
        .iter()
        .fold((0.0, 0, 0), |acc, s| if s.ratio > acc.0 { (s.ratio, s.seed_id, s.iteration) } else { acc });
    Ok(NormReport {
        family_size: fam.len(),
        seeds: seeds.len(),
        ascent_iters,
        samples,
        best_ratio,
        best_seed,
        best_iteration,
    })
}

/// Indicator of the cell-centre set of `R`.
pub fn member_cells(spec: &GridSpec, r: &Parallelogram) -> CellSet {
    let mut set = CellSet::empty(*spec);
    for c in r.columns(spec) {
        let r0 = r.first_row(spec, c);
        for row in r0..r0 + spec.rows_per_slab() {
            set.insert(spec.index(c, row));
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{FamilyParams, Provenance};
    use crate::grid::OffsetStep;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec::new(4, 2, OffsetStep::W).unwrap()
    }

    fn family(members: Vec<Parallelogram>) -> RectangleFamily {
        let params = FamilyParams::new(spec(), DyadicRational::ONE).unwrap();
        RectangleFamily::new(params, members, Provenance::Constructed).unwrap()
    }

    fn random_fn(seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..spec().cells()).map(|_| DyadicRational::new(rng.gen_range(0..8), 2)).collect();
        GridFunction::new(spec(), vals).unwrap()
    }

    fn some_members() -> Vec<Parallelogram> {
        vec![
            Parallelogram { k: 0, base: 0, slope: 0, offset: 0 },
            Parallelogram { k: 0, base: 2, slope: 0, offset: 1 },
            Parallelogram { k: 1, base: 0, slope: 0, offset: 2 },
            Parallelogram { k: 1, base: 1, slope: 0, offset: 0 },
            Parallelogram { k: 2, base: 0, slope: 1, offset: 0 },
        ]
    }

    #[test]
    fn constant_one() {
        let fam = family(some_members());
        let one = GridFunction::constant(spec(), DyadicRational::ONE);
        let mf = maximal_apply(&one, &fam).unwrap();
        let rho = linearize(&one, &fam).unwrap();
        for cell in 0..spec().cells() {
            let expect = if rho.get(cell).is_some() { DyadicRational::ONE } else { DyadicRational::ZERO };
            assert_eq!(mf.values()[cell], expect);
            if let Some(i) = rho.get(cell) {
                // first member in canonical order covering the cell
                let first = fam
                    .members()
                    .iter()
                    .position(|r| r.covers(&spec(), spec().column_of(cell), spec().row_of(cell)))
                    .unwrap();
                assert_eq!(i, first);
            }
        }
    }

    #[test]
    fn single_member() {
        let r = Parallelogram { k: 1, base: 1, slope: 1, offset: 0 };
        let fam = family(vec![r]);
        let f = random_fn(3);
        let avg = r.average(&spec(), &f).unwrap();
        let mf = maximal_apply(&f, &fam).unwrap();
        let cells = member_cells(&spec(), &r);
        for cell in 0..spec().cells() {
            let expect = if cells.contains(cell) { avg } else { DyadicRational::ZERO };
            assert_eq!(mf.values()[cell], expect);
        }
        let report = estimate_norm(&fam, &[GridFunction::indicator(&cells)], 0).unwrap();
        assert!(report.best_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn brute_force_maximal_and_linearization() {
        let fam = family(some_members());
        for seed in 0..5 {
            let f = random_fn(seed);
            let mf = maximal_apply(&f, &fam).unwrap();
            let rho = linearize(&f, &fam).unwrap();
            rho.validate(&fam).unwrap();
            let tf = apply_t(&rho, &fam, &f).unwrap();
            assert_eq!(tf, mf);
            for cell in 0..spec().cells() {
                let (c, r) = (spec().column_of(cell), spec().row_of(cell));
                let mut best: Option<(DyadicRational, usize)> = None;
                for (i, m) in fam.members().iter().enumerate() {
                    if m.covers(&spec(), c, r) {
                        let a = m.average(&spec(), &f).unwrap();
                        if best.map_or(true, |(b, _)| a > b) {
                            best = Some((a, i));
                        }
                    }
                }
                assert_eq!(mf.values()[cell], best.map_or(DyadicRational::ZERO, |b| b.0));
                assert_eq!(rho.get(cell), best.map(|b| b.1));
            }
        }
    }

    #[test]
    fn adjointness_and_weighted_count() {
        let fam = family(some_members());
        let rho = linearize(&random_fn(11), &fam).unwrap();
        let f = random_fn(12);
        let g = random_fn(13);
        let lhs = apply_t(&rho, &fam, &f).unwrap().inner(&g).unwrap();
        let rhs = f.inner(&apply_t_adjoint(&rho, &fam, &g).unwrap()).unwrap();
        assert_eq!(lhs, rhs);

        let set = CellSet::from_fn(spec(), |c, r| (c + 2 * r) % 3 == 0);
        let t = apply_t_adjoint(&rho, &fam, &GridFunction::indicator(&set)).unwrap();
        let nus = nu_all(&rho, &fam, &set).unwrap();
        let total: DyadicRational = nus.iter().copied().sum();
        assert!(total <= set.measure());
        assert_eq!(t.integral(), total);
        for (i, n) in nus.iter().enumerate() {
            assert_eq!(*n, nu(&rho, &set, i));
        }
    }

    #[test]
    fn corrupt_choice() {
        let fam = family(some_members());
        let mut entries = vec![None; spec().cells()];
        entries[0] = Some(99);
        let rho = ChoiceMap::from_entries(spec(), entries).unwrap();
        assert!(matches!(apply_t(&rho, &fam, &random_fn(1)), Err(Error::CorruptChoiceMap)));
    }

    #[test]
    fn m2_examples() {
        let c = DyadicRational::new(3, 2);
        assert!(m2_vertical(&GridFunction::constant(spec(), c)).iter().all(|v| *v == to_ratio(c)));
        let mut set = CellSet::empty(spec());
        set.insert(spec().index(2, 5));
        let m = m2_vertical(&GridFunction::indicator(&set));
        assert_eq!(m[spec().index(2, 5)], Ratio::from_integer(1));
        for row in 0..16usize {
            let d = row.abs_diff(5) as i128;
            assert!(m[spec().index(2, row)] >= Ratio::new(1, d + 1));
        }
        assert_eq!(m[spec().index(3, 5)], Ratio::from_integer(0));
    }

    #[test]
    fn m2_brute_force() {
        let f = random_fn(5);
        let m = m2_vertical(&f);
        let n = spec().side();
        for c in 0..n {
            for x in 0..n {
                let mut best = Ratio::from_integer(0);
                for a in 0..=x {
                    for b in x..n {
                        let s: DyadicRational = (a..=b).map(|r| f.get(c, r)).sum();
                        best = best.max(to_ratio(s) / Ratio::from_integer((b - a + 1) as i128));
                    }
                }
                assert_eq!(m[spec().index(c, x)], best);
            }
        }
    }

    #[test]
    fn seed_on_x_has_zero_ratio() {
        let fam = family(vec![Parallelogram { k: 0, base: 0, slope: 0, offset: 0 }]);
        let rho = linearize(&GridFunction::zeros(spec()), &fam).unwrap();
        let x = rho.uncovered();
        // the seed lives far from the only member
        let seed = GridFunction::indicator(&CellSet::from_fn(spec(), |c, r| x.contains(spec().index(c, r)) && c > 8));
        let rep = estimate_norm(&fam, &[seed], 3).unwrap();
        assert_eq!(rep.best_ratio, 0.0);
        assert!(matches!(
            estimate_norm(&fam, &[GridFunction::zeros(spec())], 1),
            Err(Error::DegenerateSeed)
        ));
    }

    #[test]
    fn report_formats() {
        let fam = family(some_members());
        let rep = estimate_norm(&fam, &[random_fn(1), random_fn(2)], 3).unwrap();
        assert!(rep.summary().contains("best_ratio = "));
        assert_eq!(rep.csv().lines().count(), 1 + rep.samples.len());
        let max = rep.samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
        assert_eq!(rep.best_ratio, max);
    }
}
