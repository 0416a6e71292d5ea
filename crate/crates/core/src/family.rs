//! Rectangle families: the density-filtered family of a one-variable field,
//! the popularity measures `|G_{J,s}|`, allowable slopes, and the goodness
//! predicate with its directional-organisation witness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, DyadicRational, SlopeCell};
use crate::error::{Error, Result};
use crate::geometry::{max_offset_steps, Parallelogram};
use crate::grid::{GridSpec, OneVarField};

/// Largest grid exponent for which [`enumerate_family`] runs.
pub const DEFAULT_FAMILY_CAP_M: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub spec: GridSpec,
    pub delta: DyadicRational,
}

impl FamilyParams {
    pub fn new(spec: GridSpec, delta: DyadicRational) -> Result<Self> {
        if delta <= DyadicRational::ZERO || delta > DyadicRational::ONE {
            return Err(Error::InvalidArgument(format!("delta {delta} not in (0, 1]")));
        }
        Ok(FamilyParams { spec, delta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Enumerated,
    Constructed,
    Subfamily,
}

impl Provenance {
    fn as_str(&self) -> &'static str {
        match self {
            Provenance::Enumerated => "enumerated",
            Provenance::Constructed => "constructed",
            Provenance::Subfamily => "subfamily",
        }
    }
}

/// A finite set of parallelograms kept in canonical order (k, base, slope, offset).
///
/// Member indices are positions in that order, so "smallest index" and
/// "first in canonical order" coincide.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RectangleFamily {
    params: FamilyParams,
    members: Vec<Parallelogram>,
    provenance: Provenance,
    /// `groups[k][base]` is the member range with that length exponent and base.
    groups: Vec<Vec<(u32, u32)>>,
}

impl RectangleFamily {
    /// Sorts, deduplicates and validates `members`.
    pub fn new(
        params: FamilyParams,
        mut members: Vec<Parallelogram>,
        provenance: Provenance,
    ) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        for r in &members {
            r.validate(&params.spec)?;
        }
        Ok(Self::from_sorted(params, members, provenance))
    }

    fn from_sorted(params: FamilyParams, members: Vec<Parallelogram>, provenance: Provenance) -> Self {
        let mw = params.spec.mw();
        let mut groups: Vec<Vec<(u32, u32)>> =
            (0..=mw).map(|k| vec![(0, 0); 1 << (mw - k)]).collect();
        let mut i = 0;
        while i < members.len() {
            let (k, b) = (members[i].k, members[i].base);
            let mut j = i;
            while j < members.len() && members[j].k == k && members[j].base == b {
                j += 1;
            }
            groups[k as usize][b as usize] = (i as u32, j as u32);
            i = j;
        }
        RectangleFamily { params, members, provenance, groups }
    }

    pub fn empty(params: FamilyParams) -> Self {
        Self::from_sorted(params, Vec::new(), Provenance::Constructed)
    }

    pub fn params(&self) -> FamilyParams {
        self.params
    }

    pub fn spec(&self) -> GridSpec {
        self.params.spec
    }

    pub fn members(&self) -> &[Parallelogram] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn get(&self, index: usize) -> Option<&Parallelogram> {
        self.members.get(index)
    }

    pub fn index_of(&self, r: &Parallelogram) -> Option<usize> {
        self.members.binary_search(r).ok()
    }

    /// Member index range with length exponent `k` and base index `base`.
    pub fn group(&self, k: u32, base: u64) -> std::ops::Range<usize> {
        let (a, b) = self.groups[k as usize][base as usize];
        a as usize..b as usize
    }

    /// Members whose base contains `column`, grouped by `k`.
    pub fn groups_over_column(&self, column: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let spec = self.params.spec;
        (0..=spec.mw()).map(move |k| {
            let base = (column >> (spec.m() - spec.mw() + k)) as u64;
            self.group(k, base)
        })
    }

    pub fn subfamily(&self, members: Vec<Parallelogram>) -> Result<RectangleFamily> {
        RectangleFamily::new(self.params, members, Provenance::Subfamily)
    }

    pub fn union(&self, other: &RectangleFamily) -> Result<RectangleFamily> {
        if self.spec() != other.spec() {
            return Err(Error::IncompatibleGrids);
        }
        let mut all = self.members.clone();
        all.extend_from_slice(&other.members);
        RectangleFamily::new(self.params, all, Provenance::Constructed)
    }

    pub fn is_subset_of(&self, other: &RectangleFamily) -> bool {
        self.members.iter().all(|r| other.index_of(r).is_some())
    }

    /// Text export: two header lines, then one member per line in canonical order.
    pub fn export(&self) -> String {
        let spec = self.spec();
        let mut out = String::new();
        let _ = writeln!(out, "family 1 {}", self.provenance.as_str());
        let _ = writeln!(
            out,
            "m {} mw {} offstep {} delta {}",
            spec.m(),
            spec.mw(),
            spec.offstep(),
            self.params.delta
        );
        for r in &self.members {
            let _ = writeln!(
                out,
                "k {} base {} slope {} off {}",
                r.k,
                r.base,
                r.slope,
                r.offset_value(&spec)
            );
        }
        out
    }

    pub fn import(text: &str) -> Result<RectangleFamily> {
        let bad = |what: &str| Error::Parse(format!("family file: {what}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let magic: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if magic.len() != 3 || magic[0] != "family" || magic[1] != "1" {
            return Err(bad("bad magic line"));
        }
        let provenance = match magic[2] {
            "enumerated" => Provenance::Enumerated,
            "constructed" => Provenance::Constructed,
            "subfamily" => Provenance::Subfamily,
            _ => return Err(bad("unknown provenance")),
        };
        let h: Vec<&str> = lines.next().ok_or_else(|| bad("missing params"))?.split_whitespace().collect();
        if h.len() != 8 || h[0] != "m" || h[2] != "mw" || h[4] != "offstep" || h[6] != "delta" {
            return Err(bad("bad params line"));
        }
        let spec = GridSpec::new(
            h[1].parse().map_err(|_| bad("m"))?,
            h[3].parse().map_err(|_| bad("mw"))?,
            h[5].parse()?,
        )?;
        let params = FamilyParams::new(spec, h[7].parse()?)?;
        let mut members = Vec::new();
        for line in lines {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 8 || t[0] != "k" || t[2] != "base" || t[4] != "slope" || t[6] != "off" {
                return Err(bad(&format!("bad record {line:?}")));
            }
            let k: u32 = t[1].parse().map_err(|_| bad("k"))?;
            if k > spec.mw() {
                return Err(bad("k exceeds mw"));
            }
            let base = DyadicInterval::new(spec.mw() - k, t[3].parse().map_err(|_| bad("base"))?)?;
            let slope = SlopeCell::new(k, t[5].parse().map_err(|_| bad("slope"))?)?;
            members.push(Parallelogram::new(&spec, base, slope, t[7].parse()?)?);
        }
        let canonical = members.windows(2).all(|w| w[0] < w[1]);
        if !canonical {
            return Err(bad("records not in canonical order"));
        }
        RectangleFamily::new(params, members, provenance)
    }
}

/// Slope window `[s - 2^-(k+1), s + 2^-(k+1))`, which is the slope cell's own interval.
pub fn theta(r: &Parallelogram) -> (DyadicRational, DyadicRational) {
    let cell = r.slope_cell();
    let half = DyadicRational::pow2_neg(r.k + 1);
    (cell.center() - half, cell.center() + half)
}

fn check_spec(spec: &GridSpec, v: &OneVarField) -> Result<()> {
    if v.spec() != *spec {
        return Err(Error::IncompatibleGrids);
    }
    Ok(())
}

/// `|V_R|`: width times the total width of columns of `R` whose field value lies in `theta(R)`.
pub fn v_measure(spec: &GridSpec, r: &Parallelogram, v: &OneVarField) -> Result<DyadicRational> {
    check_spec(spec, v)?;
    let (lo, hi) = theta(r);
    let n = r.columns(spec).filter(|&c| lo <= v.at(c) && v.at(c) < hi).count();
    Ok(DyadicRational::from_int(n as i128) * spec.h() * spec.w())
}

pub fn is_dense(spec: &GridSpec, r: &Parallelogram, v: &OneVarField, delta: DyadicRational) -> Result<bool> {
    Ok(v_measure(spec, r, v)? >= delta * r.measure(spec))
}

/// All dense parallelograms, in canonical order.
pub fn enumerate_family(params: &FamilyParams, v: &OneVarField) -> Result<RectangleFamily> {
    enumerate_family_capped(params, v, DEFAULT_FAMILY_CAP_M)
}

pub fn enumerate_family_capped(
    params: &FamilyParams,
    v: &OneVarField,
    cap_m: u32,
) -> Result<RectangleFamily> {
    let spec = params.spec;
    check_spec(&spec, v)?;
    if spec.m() > cap_m {
        return Err(Error::FamilyTooLarge(format!("m = {} exceeds cap {cap_m}", spec.m())));
    }
    let mw = spec.mw();
    let shapes: Vec<(u32, u64)> = (0..=mw)
        .flat_map(|k| (0..1u64 << (mw - k)).map(move |b| (k, b)))
        .collect();
    let chunks: Vec<Vec<Parallelogram>> = shapes
        .par_iter()
        .map(|&(k, base)| {
            let cols = spec.columns_of(&spec.base_interval(k, base));
            let ncols = cols.len() as i128;
            // theta(R) is the slope cell, so count columns per cell at level k.
            let mut hist = vec![0i128; 1 << k];
            for c in cols {
                let j = v.at(c).floor_at(k);
                if (0..1i128 << k).contains(&j) {
                    hist[j as usize] += 1;
                }
            }
            let mut out = Vec::new();
            for (slope, &count) in hist.iter().enumerate() {
                // count h w >= delta |I| w  <=>  count >= delta * ncols
                if DyadicRational::from_int(count) < params.delta * DyadicRational::from_int(ncols) {
                    continue;
                }
                if let Some(max) = max_offset_steps(&spec, k, base, slope as u64) {
                    out.extend((0..=max).map(|offset| Parallelogram { k, base, slope: slope as u64, offset }));
                }
            }
            out
        })
        .collect();
    let members = chunks.into_iter().flatten().collect();
    Ok(RectangleFamily::from_sorted(*params, members, Provenance::Enumerated))
}

fn check_level(spec: &GridSpec, j: &DyadicInterval, s: &SlopeCell) -> Result<u32> {
    let k = spec.length_exponent(j).ok_or(Error::IntervalWidthMismatch)?;
    if s.level != k {
        return Err(Error::SlopeLevelMismatch);
    }
    Ok(k)
}

/// Whether `value` lies in the popularity window `[s - 2^-k, s + 2^-k)` of `s` (level `k`).
pub fn in_g_window(s: &SlopeCell, value: DyadicRational) -> bool {
    let half = DyadicRational::pow2_neg(s.level);
    let c = s.center();
    c - half <= value && value < c + half
}

/// `|G_{J,s}|`, the measure of columns of `J` whose field value is within `2^-k` of `s`.
pub fn g_measure(spec: &GridSpec, j: &DyadicInterval, s: &SlopeCell, v: &OneVarField) -> Result<DyadicRational> {
    check_spec(spec, v)?;
    check_level(spec, j, s)?;
    let n = spec.columns_of(j).filter(|&c| in_g_window(s, v.at(c))).count();
    Ok(DyadicRational::from_int(n as i128) * spec.h())
}

/// Per-cell popularity counts at the level of `J`; each column lands in at most two windows.
pub fn g_counts(spec: &GridSpec, j: &DyadicInterval, v: &OneVarField) -> Result<BTreeMap<SlopeCell, usize>> {
    check_spec(spec, v)?;
    let k = spec.length_exponent(j).ok_or(Error::IntervalWidthMismatch)?;
    let mut counts = BTreeMap::new();
    for c in spec.columns_of(j) {
        // window of index i is [(2i - 1) 2^-(k+1), (2i + 3) 2^-(k+1)); candidates are
        // i = floor(v 2^k + 1/2) and i - 1
        let x = v.at(c);
        let top = (x + DyadicRational::pow2_neg(k + 1)).floor_at(k);
        for i in [top - 1, top] {
            if (0..1i128 << k).contains(&i) {
                let cell = SlopeCell { level: k, index: i as u64 };
                if in_g_window(&cell, x) {
                    *counts.entry(cell).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// `S(J) = { s : |G_{J,s}| >= delta |J| }`, sorted by index.
pub fn allowable_slopes(
    spec: &GridSpec,
    j: &DyadicInterval,
    v: &OneVarField,
    delta: DyadicRational,
) -> Result<Vec<SlopeCell>> {
    Ok(popular_slopes(spec, j, v, delta, WindowRule::Literal)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// Which slope window decides popularity in the stopping-time construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WindowRule {
    /// The slope cell itself, `[j 2^-k, (j + 1) 2^-k)`.
    #[default]
    Cell,
    /// The doubled window `[s - 2^-k, s + 2^-k)` of [`g_measure`].
    Literal,
}

impl std::fmt::Display for WindowRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WindowRule::Cell => "cell",
            WindowRule::Literal => "literal",
        })
    }
}

impl std::str::FromStr for WindowRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell" => Ok(WindowRule::Cell),
            "literal" => Ok(WindowRule::Literal),
            _ => Err(Error::Parse(format!("unknown window rule {s:?}"))),
        }
    }
}

/// Column counts per slope cell at the level of `J` under `rule`.
pub fn slope_counts(
    spec: &GridSpec,
    j: &DyadicInterval,
    v: &OneVarField,
    rule: WindowRule,
) -> Result<BTreeMap<SlopeCell, usize>> {
    match rule {
        WindowRule::Literal => g_counts(spec, j, v),
        WindowRule::Cell => {
            check_spec(spec, v)?;
            let k = spec.length_exponent(j).ok_or(Error::IntervalWidthMismatch)?;
            let mut counts = BTreeMap::new();
            for c in spec.columns_of(j) {
                let i = v.at(c).floor_at(k);
                if (0..1i128 << k).contains(&i) {
                    *counts.entry(SlopeCell { level: k, index: i as u64 }).or_insert(0) += 1;
                }
            }
            Ok(counts)
        }
    }
}

/// Popular slopes at `J` with their measures `|G_{J,s}|` under `rule`, sorted by index.
pub fn popular_slopes(
    spec: &GridSpec,
    j: &DyadicInterval,
    v: &OneVarField,
    delta: DyadicRational,
    rule: WindowRule,
) -> Result<Vec<(SlopeCell, DyadicRational)>> {
    let threshold = delta * j.len();
    Ok(slope_counts(spec, j, v, rule)?
        .into_iter()
        .map(|(s, n)| (s, DyadicRational::from_int(n as i128) * spec.h()))
        .filter(|(_, mu)| *mu >= threshold)
        .collect())
}

/// Outcome of [`is_good_collection`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GoodnessWitness {
    /// Equal horizontal projections imply equal slopes.
    pub good: bool,
    /// Two members with the same base and different slopes, when not good.
    pub conflict: Option<(Parallelogram, Parallelogram)>,
    /// Disjoint intervals with one slope cell each such that every member has
    /// its base inside some `J` and its slope cell containing `s_J`.
    pub organized: Option<Vec<(DyadicInterval, SlopeCell)>>,
}

impl GoodnessWitness {
    pub fn is_organized(&self) -> bool {
        self.organized.is_some()
    }
}

/// Goodness check plus the directional-organisation witness.
///
/// The witness intervals are chosen as coarse as possible, top-down from `[0, 1)`.
pub fn is_good_collection(fam: &RectangleFamily) -> GoodnessWitness {
    let spec = fam.spec();
    let mut by_base: BTreeMap<DyadicInterval, Vec<&Parallelogram>> = BTreeMap::new();
    for r in fam.members() {
        by_base.entry(r.base_interval(&spec)).or_default().push(r);
    }
    let mut conflict = None;
    for rs in by_base.values() {
        if let Some(other) = rs.iter().find(|r| r.slope != rs[0].slope) {
            conflict = Some((*rs[0], **other));
            break;
        }
    }
    if conflict.is_some() {
        return GoodnessWitness { good: false, conflict, organized: None };
    }
    let pairs: Vec<(DyadicInterval, SlopeCell)> =
        by_base.iter().map(|(b, rs)| (*b, rs[0].slope_cell())).collect();
    let mut out = Vec::new();
    let organized = organize(DyadicInterval::UNIT, &pairs, &mut out);
    GoodnessWitness { good: true, conflict: None, organized: organized.then_some(out) }
}

fn organize(
    j: DyadicInterval,
    pairs: &[(DyadicInterval, SlopeCell)],
    out: &mut Vec<(DyadicInterval, SlopeCell)>,
) -> bool {
    let inside: Vec<_> = pairs.iter().copied().filter(|(b, _)| j.contains(b)).collect();
    let Some(finest) = inside.iter().map(|(_, s)| *s).max_by_key(|s| s.level) else {
        return true;
    };
    if inside.iter().all(|(_, s)| s.contains(&finest)) {
        out.push((j, finest));
        return true;
    }
    if inside.iter().any(|(b, _)| *b == j) {
        return false;
    }
    j.children().iter().all(|c| organize(*c, &inside, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::OffsetStep;

    fn d(s: &str) -> DyadicRational {
        s.parse().unwrap()
    }

    #[test]
    fn theta_examples() {
        let r = Parallelogram { k: 0, base: 0, slope: 0, offset: 0 };
        assert_eq!(theta(&r), (d("0"), d("1")));
        let r = Parallelogram { k: 2, base: 0, slope: 0, offset: 0 };
        assert_eq!(theta(&r), (d("0"), d("1/4")));
        for k in 0..6 {
            let r = Parallelogram { k, base: 0, slope: 0, offset: 0 };
            let (lo, hi) = theta(&r);
            assert_eq!(hi - lo, DyadicRational::pow2_neg(k));
        }
    }

    #[test]
    fn v_measure_examples() {
        let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
        let r = Parallelogram { k: 1, base: 1, slope: 1, offset: 0 };
        let s = r.slope_cell().center();
        let v = OneVarField::constant(spec, s).unwrap();
        assert_eq!(v_measure(&spec, &r, &v).unwrap(), r.measure(&spec));
        assert!(is_dense(&spec, &r, &v, DyadicRational::ONE).unwrap());
        let v = OneVarField::constant(spec, (s + d("1/2")).min(DyadicRational::ONE)).unwrap();
        assert_eq!(v_measure(&spec, &r, &v).unwrap(), DyadicRational::ZERO);
        assert!(!is_dense(&spec, &r, &v, DyadicRational::ONE).unwrap());
    }

    #[test]
    fn v_measure_identity_field() {
        // m = 5, v(x) = x, base [0, 1/2) (k = 2 with w = 1/8), window [1/4, 1/2) is slope (2, 1)
        let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
        let v = OneVarField::identity(spec);
        let r = Parallelogram { k: 2, base: 0, slope: 1, offset: 0 };
        assert_eq!(theta(&r), (d("1/4"), d("1/2")));
        // oracle: column scan
        let count = (0..16).filter(|&c| {
            let x = (2.0 * c as f64 + 1.0) / 64.0;
            (0.25..0.5).contains(&x)
        }).count();
        assert_eq!(count, 8);
        assert_eq!(v_measure(&spec, &r, &v).unwrap(), spec.w() * d("1/4"));
    }

    #[test]
    fn dense_at_half_matches_column_scan() {
        let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
        let v = OneVarField::identity(spec);
        // base [0, 1/4), k = 1, window [1/2 j, 1/2 (j+1))
        for slope in 0..2 {
            let r = Parallelogram { k: 1, base: 0, slope, offset: 0 };
            let (lo, hi) = (slope as f64 / 2.0, (slope + 1) as f64 / 2.0);
            let inside = (0..8).filter(|&c| {
                let x = (2.0 * c as f64 + 1.0) / 64.0;
                lo <= x && x < hi
            }).count();
            assert_eq!(is_dense(&spec, &r, &v, d("1/2")).unwrap(), 2 * inside >= 8);
        }
    }

    #[test]
    fn g_measure_examples() {
        let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
        let j = DyadicInterval::new(1, 0).unwrap(); // [0, 1/2), k = 2
        let s = SlopeCell::new(2, 1).unwrap(); // centre 3/8
        let v = OneVarField::constant(spec, s.center()).unwrap();
        assert_eq!(g_measure(&spec, &j, &s, &v).unwrap(), j.len());
        let v = OneVarField::constant(spec, s.center() + d("1/2")).unwrap();
        assert_eq!(g_measure(&spec, &j, &s, &v).unwrap(), DyadicRational::ZERO);
        assert!(matches!(
            g_measure(&spec, &j, &SlopeCell::new(1, 0).unwrap(), &v),
            Err(Error::SlopeLevelMismatch)
        ));
        // v(x) = x on [0, 1/2): window of (2, 0) is [-1/8, 3/8); column scan oracle
        let v = OneVarField::identity(spec);
        let s = SlopeCell::new(2, 0).unwrap();
        let n = (0..16).filter(|&c| {
            let x = (2.0 * c as f64 + 1.0) / 64.0;
            (-0.125..0.375).contains(&x)
        }).count();
        assert_eq!(g_measure(&spec, &j, &s, &v).unwrap(), DyadicRational::from_int(n as i128) * spec.h());
    }

    #[test]
    fn allowable_for_constant_field() {
        let spec = GridSpec::new(6, 4, OffsetStep::W).unwrap();
        let v = OneVarField::constant(spec, d("5/16")).unwrap();
        for level in 0..=4 {
            let j = DyadicInterval::new(level, 0).unwrap();
            let s = allowable_slopes(&spec, &j, &v, d("1/8")).unwrap();
            assert!(!s.is_empty() && s.len() <= 2);
            for cell in &s {
                assert!(in_g_window(cell, d("5/16")));
            }
        }
    }

    #[test]
    fn goodness_examples() {
        let spec = GridSpec::new(4, 2, OffsetStep::W).unwrap();
        let params = FamilyParams::new(spec, DyadicRational::ONE).unwrap();
        let same = RectangleFamily::new(
            params,
            vec![
                Parallelogram { k: 1, base: 0, slope: 0, offset: 0 },
                Parallelogram { k: 1, base: 1, slope: 0, offset: 1 },
                Parallelogram { k: 1, base: 0, slope: 0, offset: 2 },
            ],
            Provenance::Constructed,
        )
        .unwrap();
        let w = is_good_collection(&same);
        assert!(w.good);
        assert_eq!(w.organized, Some(vec![(DyadicInterval::UNIT, SlopeCell::new(1, 0).unwrap())]));

        let clash = RectangleFamily::new(
            params,
            vec![
                Parallelogram { k: 1, base: 0, slope: 0, offset: 0 },
                Parallelogram { k: 1, base: 0, slope: 1, offset: 0 },
            ],
            Provenance::Constructed,
        )
        .unwrap();
        let w = is_good_collection(&clash);
        assert!(!w.good && w.conflict.is_some() && !w.is_organized());

        // good but not organised: nested bases whose slopes are not nested
        let tangled = RectangleFamily::new(
            params,
            vec![
                Parallelogram { k: 2, base: 0, slope: 0, offset: 0 },
                Parallelogram { k: 1, base: 0, slope: 1, offset: 0 },
            ],
            Provenance::Constructed,
        )
        .unwrap();
        let w = is_good_collection(&tangled);
        assert!(w.good && !w.is_organized());
    }

    #[test]
    fn export_import_round_trip() {
        let spec = GridSpec::new(4, 2, OffsetStep::HalfW).unwrap();
        let params = FamilyParams::new(spec, d("1/2")).unwrap();
        let fam = enumerate_family(&params, &OneVarField::identity(spec)).unwrap();
        let text = fam.export();
        assert!(text.lines().nth(2).unwrap().starts_with("k 0 base 0"));
        assert_eq!(RectangleFamily::import(&text).unwrap(), fam);
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(2, 3);
        assert!(RectangleFamily::import(&lines.join("\n")).is_err());
    }

    #[test]
    fn enumeration_cap() {
        let spec = GridSpec::new(6, 2, OffsetStep::W).unwrap();
        let params = FamilyParams::new(spec, DyadicRational::ONE).unwrap();
        let v = OneVarField::identity(spec);
        assert!(matches!(
            enumerate_family_capped(&params, &v, 5),
            Err(Error::FamilyTooLarge(_))
        ));
    }

    #[test]
    fn constant_zero_field_keeps_only_windows_containing_zero() {
        let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
        let params = FamilyParams::new(spec, DyadicRational::ONE).unwrap();
        let v = OneVarField::constant(spec, DyadicRational::ZERO).unwrap();
        let fam = enumerate_family(&params, &v).unwrap();
        assert!(!fam.is_empty());
        assert!(fam.members().iter().all(|r| r.slope == 0));
    }

    #[test]
    fn dense_members_have_cell_popular_slopes() {
        let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
        let vals = (0..32).map(|c| DyadicRational::new((c * 13 % 32) as i128, 5)).collect();
        let v = OneVarField::new(spec, vals).unwrap();
        let delta = d("1/4");
        let fam = enumerate_family(&FamilyParams::new(spec, delta).unwrap(), &v).unwrap();
        assert!(!fam.is_empty());
        for r in fam.members() {
            let base = r.base_interval(&spec);
            let cell = popular_slopes(&spec, &base, &v, delta, WindowRule::Cell).unwrap();
            assert!(cell.iter().any(|(s, _)| *s == r.slope_cell()));
            let lit = allowable_slopes(&spec, &base, &v, delta).unwrap();
            assert!(lit.contains(&r.slope_cell()));
        }
    }
}
