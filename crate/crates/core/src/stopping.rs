//! Slope assignments `T(J)`, Carleson packing, stopping intervals, the
//! `(J, s)` order with its `Omega` levels, point classification, and the
//! generation recursion that produces the sets `A_j`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::dyadic::{DyadicInterval, DyadicRational, SlopeCell};
use crate::error::{Error, Result};
use crate::family::{popular_slopes, RectangleFamily, WindowRule};
use crate::grid::{CellSet, GridSpec, OneVarField};
use crate::maximal::ChoiceMap;

/// Default generation cap for [`run_generations`].
pub const DEFAULT_MAX_GENERATIONS: usize = 64;

/// `ceil(3 / delta)`.
pub fn collection_count(delta: DyadicRational) -> usize {
    let three = DyadicRational::from_int(3);
    let mut n = 1usize;
    while DyadicRational::from_int(n as i128) * delta < three {
        n += 1;
    }
    n
}

/// A pair `(J, s)` with `s` in `T(J)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ThetaPair {
    pub j: DyadicInterval,
    pub s: SlopeCell,
}

impl ThetaPair {
    /// `self <= other`: same interval and lower-or-equal centre, or a strictly smaller interval.
    pub fn le(&self, other: &ThetaPair) -> bool {
        (self.j == other.j && self.s.index <= other.s.index) || other.j.strictly_contains(&self.j)
    }

    pub fn lt(&self, other: &ThetaPair) -> bool {
        self != other && self.le(other)
    }
}

/// `T(J)` with the measures `mu_J^s`, for every `J` under a root interval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlopeAssignment {
    root: DyadicInterval,
    rule: WindowRule,
    /// Only intervals with nonempty `T(J)`; slopes sorted by index.
    entries: BTreeMap<DyadicInterval, Vec<(SlopeCell, DyadicRational)>>,
}

impl SlopeAssignment {
    pub fn root(&self) -> DyadicInterval {
        self.root
    }

    pub fn rule(&self) -> WindowRule {
        self.rule
    }

    pub fn entries(&self) -> &BTreeMap<DyadicInterval, Vec<(SlopeCell, DyadicRational)>> {
        &self.entries
    }

    pub fn t(&self, j: &DyadicInterval) -> &[(SlopeCell, DyadicRational)] {
        self.entries.get(j).map_or(&[], |v| v.as_slice())
    }

    pub fn mu(&self, j: &DyadicInterval) -> DyadicRational {
        self.t(j).iter().map(|(_, m)| *m).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All of `Theta`, ordered by interval then slope index.
    pub fn pairs(&self) -> Vec<ThetaPair> {
        self.entries
            .iter()
            .flat_map(|(j, ts)| ts.iter().map(move |(s, _)| ThetaPair { j: *j, s: *s }))
            .collect()
    }

    /// `sum over root ⊇ K ⊇ J of mu_K / |K|`.
    pub fn partial_sum(&self, j: &DyadicInterval) -> DyadicRational {
        (self.root.level..=j.level)
            .map(|l| {
                let k = j.ancestor_at(l);
                self.mu(&k).mul_pow2(l as i32)
            })
            .sum()
    }

    /// The immediate successor of `p` in the order on `Theta`.
    pub fn parent(&self, p: &ThetaPair) -> Option<ThetaPair> {
        if let Some((s, _)) = self.t(&p.j).iter().find(|(s, _)| s.index > p.s.index) {
            return Some(ThetaPair { j: p.j, s: *s });
        }
        let mut k = p.j;
        while k.level > self.root.level {
            k = k.parent().expect("below root");
            if let Some((s, _)) = self.t(&k).first() {
                return Some(ThetaPair { j: k, s: *s });
            }
        }
        None
    }
}

/// Top-down construction of `T(J)` over the dyadic tree under `root`.
pub fn compute_assignments(
    spec: &GridSpec,
    root: DyadicInterval,
    v: &OneVarField,
    delta: DyadicRational,
    rule: WindowRule,
) -> Result<SlopeAssignment> {
    if v.spec() != *spec {
        return Err(Error::IncompatibleGrids);
    }
    if root.level > spec.mw() {
        return Err(Error::IntervalWidthMismatch);
    }
    let mut entries = BTreeMap::new();
    let mut used: Vec<SlopeCell> = Vec::new();
    assign(spec, root, v, delta, rule, &mut used, &mut entries)?;
    Ok(SlopeAssignment { root, rule, entries })
}

fn assign(
    spec: &GridSpec,
    j: DyadicInterval,
    v: &OneVarField,
    delta: DyadicRational,
    rule: WindowRule,
    used: &mut Vec<SlopeCell>,
    entries: &mut BTreeMap<DyadicInterval, Vec<(SlopeCell, DyadicRational)>>,
) -> Result<()> {
    let t: Vec<_> = popular_slopes(spec, &j, v, delta, rule)?
        .into_iter()
        .filter(|(s, _)| !used.iter().any(|u| s.contains(u)))
        .collect();
    let mark = used.len();
    used.extend(t.iter().map(|(s, _)| *s));
    if !t.is_empty() {
        entries.insert(j, t);
    }
    if j.level < spec.mw() {
        for c in j.children() {
            assign(spec, c, v, delta, rule, used, entries)?;
        }
    }
    used.truncate(mark);
    Ok(())
}

/// `sum_{J ⊆ I} mu_J`.
pub fn carleson_sum(assign: &SlopeAssignment) -> DyadicRational {
    assign.entries.keys().map(|j| assign.mu(j)).sum()
}

/// Maximal `I' ⊆ I` whose partial sum reaches 2, in left-to-right order.
pub fn stopping_intervals(spec: &GridSpec, assign: &SlopeAssignment) -> Vec<DyadicInterval> {
    let two = DyadicRational::from_int(2);
    let mut out = Vec::new();
    let mut stack = vec![(assign.root, DyadicRational::ZERO)];
    while let Some((j, above)) = stack.pop() {
        let sum = above + assign.mu(&j).mul_pow2(j.level as i32);
        if sum >= two {
            out.push(j);
        } else if j.level < spec.mw() {
            let [a, b] = j.children();
            stack.push((b, sum));
            stack.push((a, sum));
        }
    }
    out
}

/// Total length of a family of disjoint intervals.
pub fn shadow_measure(intervals: &[DyadicInterval]) -> DyadicRational {
    intervals.iter().map(|i| i.len()).sum()
}

/// `(Theta_good, Theta_bad)`.
pub fn partition_theta(
    assign: &SlopeAssignment,
    stopping: &[DyadicInterval],
) -> (Vec<ThetaPair>, Vec<ThetaPair>) {
    assign
        .pairs()
        .into_iter()
        .partition(|p| !stopping.iter().any(|i| i.contains(&p.j)))
}

/// `Omega_0, Omega_1, ...` until the first empty level.
pub fn omega_levels(assign: &SlopeAssignment, good: &[ThetaPair]) -> Vec<Vec<ThetaPair>> {
    let in_good = |p: &ThetaPair| good.binary_search(p).is_ok();
    debug_assert!(good.windows(2).all(|w| w[0] < w[1]));
    let parents: Vec<Option<ThetaPair>> = good.iter().map(|p| assign.parent(p)).collect();
    let mut levels = Vec::new();
    // maximal elements: nothing good strictly above, i.e. the successor is absent or not good
    let mut current: Vec<ThetaPair> = good
        .iter()
        .zip(&parents)
        .filter(|(_, par)| par.map_or(true, |q| !in_good(&q)))
        .map(|(p, _)| *p)
        .collect();
    while !current.is_empty() {
        let next: Vec<ThetaPair> = good
            .iter()
            .zip(&parents)
            .filter(|(_, par)| par.map_or(false, |q| current.binary_search(&q).is_ok()))
            .map(|(p, _)| *p)
            .collect();
        levels.push(current);
        current = next;
    }
    levels
}

/// Output of [`classify_points`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointClasses {
    /// `F_n` for each `Omega_n`.
    pub f_sets: Vec<CellSet>,
    pub good: CellSet,
    pub bad: CellSet,
    /// `R_n = { rho(x) : x in F_n }` as sorted member indices.
    pub collections: Vec<Vec<usize>>,
}

/// Splits `E` by the `Omega` levels.
pub fn classify_points(
    fam: &RectangleFamily,
    e: &CellSet,
    rho: &ChoiceMap,
    root: DyadicInterval,
    omega: &[Vec<ThetaPair>],
) -> Result<PointClasses> {
    let spec = fam.spec();
    if rho.spec() != spec || e.spec() != spec {
        return Err(Error::IncompatibleGrids);
    }
    let mut by_interval: BTreeMap<DyadicInterval, Vec<(usize, SlopeCell)>> = BTreeMap::new();
    for (n, level) in omega.iter().enumerate() {
        for p in level {
            by_interval.entry(p.j).or_default().push((n, p.s));
        }
    }
    let mut f_sets = vec![CellSet::empty(spec); omega.len()];
    let mut collections = vec![Vec::new(); omega.len()];
    let mut good = CellSet::empty(spec);
    let mut bad = CellSet::empty(spec);
    for x in e.iter() {
        let idx = rho.get(x).ok_or(Error::ChoiceEscapesInterval)?;
        let r = fam.get(idx).ok_or(Error::CorruptChoiceMap)?;
        let base = r.base_interval(&spec);
        if !root.contains(&base) {
            return Err(Error::ChoiceEscapesInterval);
        }
        let slope = r.slope_cell();
        let mut hit = false;
        for l in root.level..=base.level {
            if let Some(list) = by_interval.get(&base.ancestor_at(l)) {
                for (n, s) in list {
                    if slope.contains(s) {
                        f_sets[*n].insert(x);
                        collections[*n].push(idx);
                        hit = true;
                    }
                }
            }
        }
        if hit {
            good.insert(x);
        } else {
            bad.insert(x);
        }
    }
    for c in &mut collections {
        c.sort_unstable();
        c.dedup();
    }
    Ok(PointClasses { f_sets, good, bad, collections })
}

/// One interval of one generation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntervalRecord {
    pub interval: DyadicInterval,
    pub assignment: SlopeAssignment,
    pub stopping: Vec<DyadicInterval>,
    pub omega: Vec<Vec<ThetaPair>>,
    pub classes: PointClasses,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub intervals: Vec<IntervalRecord>,
    /// `E_j`, the input set of this generation.
    pub e: CellSet,
    /// `A_j`.
    pub a: CellSet,
}

/// The full generation recursion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decomposition {
    pub spec: GridSpec,
    pub delta: DyadicRational,
    pub rule: WindowRule,
    pub generations: Vec<GenerationRecord>,
    /// `I_0, I_1, ...`, one more than the number of generations.
    pub interval_collections: Vec<Vec<DyadicInterval>>,
    /// Cells in no member.
    pub x: CellSet,
    /// What is left of `E` when the recursion stops.
    pub remaining: CellSet,
    pub truncated: bool,
}

/// Iterates the stopping-time lemma from `I_0 = {[0,1)}` and `E_0` = all covered cells.
pub fn run_generations(
    fam: &RectangleFamily,
    v: &OneVarField,
    rho: &ChoiceMap,
    max_gen: usize,
    rule: WindowRule,
) -> Result<Decomposition> {
    let spec = fam.spec();
    let delta = fam.params().delta;
    let x = rho.uncovered();
    let mut e = CellSet::full(spec).difference(&x);
    let mut intervals = vec![DyadicInterval::UNIT];
    let mut generations = Vec::new();
    let mut collections = vec![intervals.clone()];
    let mut truncated = false;
    while !e.is_empty() && !intervals.is_empty() {
        if generations.len() == max_gen {
            truncated = true;
            break;
        }
        let records: Vec<IntervalRecord> = intervals
            .par_iter()
            .map(|&i| {
                let strip = CellSet::vertical_strip(spec, &i);
                let e_i = e.intersection(&strip);
                let assignment = compute_assignments(&spec, i, v, delta, rule)?;
                let stopping = stopping_intervals(&spec, &assignment);
                let (good, _) = partition_theta(&assignment, &stopping);
                let omega = omega_levels(&assignment, &good);
                let classes = classify_points(fam, &e_i, rho, i, &omega)?;
                Ok(IntervalRecord { interval: i, assignment, stopping, omega, classes })
            })
            .collect::<Result<_>>()?;
        let mut a = CellSet::empty(spec);
        let mut next_e = CellSet::empty(spec);
        let mut next_i = Vec::new();
        for r in &records {
            a = a.union(&r.classes.good);
            next_e = next_e.union(&r.classes.bad);
            next_i.extend_from_slice(&r.stopping);
        }
        generations.push(GenerationRecord { generation: generations.len(), intervals: records, e, a });
        e = next_e;
        intervals = next_i;
        collections.push(intervals.clone());
    }
    Ok(Decomposition {
        spec,
        delta,
        rule,
        generations,
        interval_collections: collections,
        x,
        remaining: e,
        truncated,
    })
}

fn pair_json(p: &ThetaPair) -> Value {
    json!({ "J": [p.j.level, p.j.index], "s": [p.s.level, p.s.index] })
}

fn cells_json(c: &CellSet) -> Value {
    json!(c.run_lengths())
}

impl Decomposition {
    /// Structured export with run-length cell sets (first run counts absent cells).
    pub fn to_json(&self) -> Value {
        let gens: Vec<Value> = self
            .generations
            .iter()
            .map(|g| {
                let ivs: Vec<Value> = g
                    .intervals
                    .iter()
                    .map(|r| {
                        let t: Vec<Value> = r
                            .assignment
                            .entries()
                            .iter()
                            .map(|(j, ts)| {
                                json!({
                                    "J": [j.level, j.index],
                                    "T": ts.iter().map(|(s, mu)| json!({
                                        "s": [s.level, s.index],
                                        "mu": mu.to_string(),
                                    })).collect::<Vec<_>>(),
                                })
                            })
                            .collect();
                        json!({
                            "interval": [r.interval.level, r.interval.index],
                            "assignment": t,
                            "stopping": r.stopping.iter().map(|i| json!([i.level, i.index])).collect::<Vec<_>>(),
                            "omega": r.omega.iter().map(|l| l.iter().map(pair_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
                            "f_sets": r.classes.f_sets.iter().map(cells_json).collect::<Vec<_>>(),
                            "good": cells_json(&r.classes.good),
                            "bad": cells_json(&r.classes.bad),
                            "collections": r.classes.collections,
                        })
                    })
                    .collect();
                json!({
                    "generation": g.generation,
                    "intervals": ivs,
                    "E": cells_json(&g.e),
                    "A": cells_json(&g.a),
                })
            })
            .collect();
        json!({
            "m": self.spec.m(),
            "mw": self.spec.mw(),
            "offstep": self.spec.offstep().to_string(),
            "delta": self.delta.to_string(),
            "window_rule": self.rule.to_string(),
            "generations": gens,
            "X": cells_json(&self.x),
            "remaining": cells_json(&self.remaining),
            "truncated": self.truncated,
        })
    }

    /// `A_j` for each generation.
    pub fn a_sets(&self) -> Vec<&CellSet> {
        self.generations.iter().map(|g| &g.a).collect()
    }
}

/// One failed exact check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub check: &'static str,
    pub detail: String,
}

/// Exact checks of the stopping-time statements on one decomposition.
///
/// Covers Carleson packing, halving, level emptiness, antichain disjointness,
/// chain comparability, the counting bound, generation decay, goodness of every
/// `R_n`, the point-class partition, and the exit property of bad points.
pub fn check_decomposition(fam: &RectangleFamily, rho: &ChoiceMap, d: &Decomposition) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut fail = |check: &'static str, detail: String| out.push(Violation { check, detail });
    let spec = d.spec;
    let cap = collection_count(d.delta);
    for g in &d.generations {
        for r in &g.intervals {
            let i = r.interval;
            let a = &r.assignment;
            let carleson = carleson_sum(a);
            if carleson > i.len() {
                fail("carleson", format!("gen {} I {:?}: {} > {}", g.generation, i, carleson, i.len()));
            }
            let shadow = shadow_measure(&r.stopping);
            if shadow.mul_pow2(1) > i.len() {
                fail("halving", format!("gen {} I {:?}: shadow {}", g.generation, i, shadow));
            }
            if r.omega.len() > cap {
                fail("omega_empty", format!("gen {} I {:?}: {} levels > {}", g.generation, i, r.omega.len(), cap));
            }
            for level in &r.omega {
                for (x, p) in level.iter().enumerate() {
                    for q in &level[x + 1..] {
                        if p.j.intersects(&q.j) {
                            fail("antichain", format!("{p:?} and {q:?}"));
                        }
                    }
                }
            }
            let pairs = a.pairs();
            for (x, p) in pairs.iter().enumerate() {
                for q in &pairs[x + 1..] {
                    if p.j.intersects(&q.j) && !p.le(q) && !q.le(p) {
                        fail("comparable", format!("{p:?} and {q:?}"));
                    }
                }
            }
            // #Theta_K <= (1/delta) sum_{K ⊆ J ⊆ I} mu_J / |J| for K at every level
            for k in i.descendants(spec.mw()) {
                let count: usize = (i.level..=k.level).map(|l| a.t(&k.ancestor_at(l)).len()).sum();
                if DyadicRational::from_int(count as i128) * d.delta > a.partial_sum(&k) {
                    fail("counting", format!("K {k:?}: count {count}"));
                }
            }
            for (n, coll) in r.classes.collections.iter().enumerate() {
                let sub = fam.subfamily(coll.iter().map(|&x| fam.members()[x]).collect());
                match sub.map(|s| crate::family::is_good_collection(&s)) {
                    Ok(w) if w.good && w.is_organized() => {}
                    _ => fail("goodn", format!("gen {} I {:?} n {n}", g.generation, i)),
                }
            }
            let strip = CellSet::vertical_strip(spec, &i);
            let e_i = g.e.intersection(&strip);
            if r.classes.good.union(&r.classes.bad) != e_i || !r.classes.good.is_disjoint(&r.classes.bad) {
                fail("partition", format!("gen {} I {:?}", g.generation, i));
            }
            for x in r.classes.bad.iter() {
                let base = fam.members()[rho.get(x).expect("covered")].base_interval(&spec);
                if !r.stopping.iter().any(|s| s.contains(&base)) {
                    fail("exit", format!("gen {} cell {x}", g.generation));
                }
            }
        }
    }
    // |I ∩ shad(I_k)| <= 2^-(k-j) |I|
    for (j, ij) in d.interval_collections.iter().enumerate() {
        for i in ij {
            for (k, ik) in d.interval_collections.iter().enumerate().skip(j) {
                let inside: DyadicRational = ik.iter().filter(|x| i.contains(x)).map(|x| x.len()).sum();
                if inside > i.len().mul_pow2(-((k - j) as i32)) {
                    fail("decay", format!("I {i:?} in I_{j} against I_{k}"));
                }
            }
        }
    }
    let mut union = d.x.union(&d.remaining);
    for (x, a) in d.a_sets().iter().enumerate() {
        if !union.is_disjoint(a) {
            fail("a_disjoint", format!("A_{x}"));
        }
        union = union.union(a);
    }
    if union != CellSet::full(spec) {
        fail("a_cover", "A_j, E_final and X do not cover the square".into());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{enumerate_family, FamilyParams};
    use crate::grid::{GridFunction, OffsetStep};
    use crate::maximal::linearize;

    fn d(s: &str) -> DyadicRational {
        s.parse().unwrap()
    }

    #[test]
    fn ceil_three_over_delta() {
        assert_eq!(collection_count(d("1")), 3);
        assert_eq!(collection_count(d("1/2")), 6);
        assert_eq!(collection_count(d("3/4")), 4);
        assert_eq!(collection_count(d("1/8")), 24);
    }

    #[test]
    fn constant_field_assignment() {
        // m = 3 is too small for mw = 2, use m = 4 with a two-level tree
        let spec = GridSpec::new(4, 1, OffsetStep::W).unwrap();
        let v = OneVarField::constant(spec, d("5/16")).unwrap();
        let a = compute_assignments(&spec, DyadicInterval::UNIT, &v, d("1/2"), WindowRule::Cell).unwrap();
        // root: k = 1, 5/16 lies in cell (1, 0); children: k = 0, cell (0, 0) contains (1, 0)
        assert_eq!(a.t(&DyadicInterval::UNIT), &[(SlopeCell::new(1, 0).unwrap(), d("1"))]);
        for c in DyadicInterval::UNIT.children() {
            assert!(a.t(&c).is_empty());
        }
        assert_eq!(carleson_sum(&a), d("1"));

        let lit = compute_assignments(&spec, DyadicInterval::UNIT, &v, d("1/2"), WindowRule::Literal).unwrap();
        // 5/16 is in the doubled windows of both (1, 0) and (1, 1)? (1, 1) window is [1/4, 5/4)
        assert_eq!(lit.t(&DyadicInterval::UNIT).len(), 2);
        assert_eq!(carleson_sum(&lit), d("2"));
        assert!(compute_assignments(&spec, DyadicInterval::new(2, 0).unwrap(), &v, d("1"), WindowRule::Cell).is_err());
    }

    #[test]
    fn stopping_and_omega_on_identity_field() {
        let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
        let v = OneVarField::identity(spec);
        let a = compute_assignments(&spec, DyadicInterval::UNIT, &v, d("1/4"), WindowRule::Cell).unwrap();
        assert!(carleson_sum(&a) <= d("1"));
        let stops = stopping_intervals(&spec, &a);
        assert!(shadow_measure(&stops).mul_pow2(1) <= d("1"));
        let (good, bad) = partition_theta(&a, &stops);
        assert_eq!(good.len() + bad.len(), a.pairs().len());
        let omega = omega_levels(&a, &good);
        let total: usize = omega.iter().map(|l| l.len()).sum();
        assert_eq!(total, good.len());
    }

    #[test]
    fn single_pair_omega() {
        let mut entries = BTreeMap::new();
        let j = DyadicInterval::new(1, 1).unwrap();
        let s = SlopeCell::new(1, 0).unwrap();
        entries.insert(j, vec![(s, d("1/2"))]);
        let a = SlopeAssignment { root: DyadicInterval::UNIT, rule: WindowRule::Cell, entries };
        let omega = omega_levels(&a, &a.pairs());
        assert_eq!(omega, vec![vec![ThetaPair { j, s }]]);
    }

    #[test]
    fn generations_satisfy_checks() {
        for (field, delta) in [("id", "1/4"), ("const", "1/2"), ("id", "1/8")] {
            let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
            let v = match field {
                "id" => OneVarField::identity(spec),
                _ => OneVarField::constant(spec, d("3/8")).unwrap(),
            };
            let fam = enumerate_family(&FamilyParams::new(spec, d(delta)).unwrap(), &v).unwrap();
            let f = GridFunction::constant(spec, DyadicRational::ONE);
            let rho = linearize(&f, &fam).unwrap();
            let dec = run_generations(&fam, &v, &rho, DEFAULT_MAX_GENERATIONS, WindowRule::Cell).unwrap();
            assert!(!dec.truncated);
            let bad = check_decomposition(&fam, &rho, &dec);
            assert!(bad.is_empty(), "{field} {delta}: {bad:?}");
            let js = dec.to_json().to_string();
            assert!(js.contains("\"generations\""));
        }
    }
}
