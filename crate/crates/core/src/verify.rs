//! The shipped instance corpus and the full check suite: oracle agreement,
//! exact identities, stopping-time statements, the shrinking dichotomy and the
//! vertical domination test.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::badness::{badness_table, shrink_iterate, shrink_once, split_over_member};
use crate::dyadic::{DyadicInterval, DyadicRational};
use crate::error::Result;
use crate::family::{enumerate_family, FamilyParams, RectangleFamily, WindowRule};
use crate::grid::{CellSet, GridFunction, GridSpec, OffsetStep, OneVarField};
use crate::instances::{cascade_field, random_field, random_function};
use crate::maximal::{apply_t, apply_t_adjoint, linearize, maximal_apply, nu_all, ChoiceMap};
use crate::offdiag::domination_check;
use crate::oracle::{self, OracleGrid};
use crate::stopping::{
    carleson_sum, check_decomposition, compute_assignments, omega_levels, partition_theta, run_generations,
    stopping_intervals, Decomposition, DEFAULT_MAX_GENERATIONS,
};

/// Calibrated `lambda0` of the shrinking step.
pub const LAMBDA0: i128 = 2;

/// Steps allowed in a shrink trace.
pub const SHRINK_STEPS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FieldKind {
    Constant,
    Identity,
    Random,
    Cascade,
}

/// One corpus entry: a field, a function and a density.
#[derive(Clone, Debug)]
pub struct CorpusInstance {
    pub id: String,
    pub kind: FieldKind,
    pub seed: u64,
    pub delta: DyadicRational,
    pub v: OneVarField,
    pub f: GridFunction,
}

impl CorpusInstance {
    pub fn spec(&self) -> GridSpec {
        self.v.spec()
    }

    /// Plain-text description that rebuilds the instance.
    pub fn reproducer(&self) -> String {
        let spec = self.spec();
        format!(
            "id = {}\nkind = {:?}\nseed = {}\nm = {}\nmw = {}\noffstep = {}\ndelta = {}\n# field\n{}# function\n{}",
            self.id,
            self.kind,
            self.seed,
            spec.m(),
            spec.mw(),
            spec.offstep(),
            self.delta,
            self.v.to_maxgrid(),
            self.f.to_maxgrid()
        )
    }
}

fn build(kind: FieldKind, spec: GridSpec, delta: DyadicRational, seed: u64) -> CorpusInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = match kind {
        FieldKind::Constant => {
            let m = spec.m();
            OneVarField::constant(spec, DyadicRational::new(rng.gen_range(0..1i128 << m), m)).expect("in range")
        }
        FieldKind::Identity => OneVarField::identity(spec),
        FieldKind::Random => random_field(spec, &mut rng),
        FieldKind::Cascade => cascade_field(spec, spec.m() - 1),
    };
    let f = random_function(spec, &mut rng);
    let id = format!(
        "{:?}-m{}-mw{}-{}-d{}-s{}",
        kind,
        spec.m(),
        spec.mw(),
        spec.offstep(),
        delta.exponent(),
        seed
    )
    .to_lowercase();
    CorpusInstance { id, kind, seed, delta, v, f }
}

/// Fifty instances at `m <= 4` and ten at `m = 5`, cycling through field kinds,
/// densities `1, 1/2, 1/8` and both offset steps.
pub fn oracle_corpus() -> Vec<CorpusInstance> {
    let kinds = [FieldKind::Constant, FieldKind::Identity, FieldKind::Random, FieldKind::Random];
    let deltas = [DyadicRational::ONE, DyadicRational::new(1, 1), DyadicRational::new(1, 3)];
    let steps = [OffsetStep::W, OffsetStep::HalfW];
    let mut out = Vec::new();
    for i in 0..60u64 {
        let (m, mw) = match i {
            0..=9 => (3, i as u32 % 2),
            10..=49 => (4, i as u32 % 3),
            _ => (5, 1 + i as u32 % 3),
        };
        let spec = GridSpec::new(m, mw, steps[(i / 3) as usize % 2]).expect("valid grid");
        out.push(build(kinds[i as usize % 4], spec, deltas[i as usize % 3], i));
    }
    out
}

/// Cascading fields at `m = 7` whose decompositions have several generations.
pub fn decomposition_corpus() -> Vec<CorpusInstance> {
    let spec = GridSpec::new(7, 5, OffsetStep::W).expect("valid grid");
    (0..2).map(|s| build(FieldKind::Cascade, spec, DyadicRational::new(1, 1), 100 + s)).collect()
}

/// Both corpora.
pub fn standard_corpus() -> Vec<CorpusInstance> {
    let mut c = oracle_corpus();
    c.extend(decomposition_corpus());
    c
}

/// One check on one instance. `criterion` is `None` for diagnostics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckOutcome {
    pub instance: String,
    pub check: String,
    pub criterion: Option<u8>,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl VerifyReport {
    /// Whether every check attached to `criterion` passed; vacuously true when none ran.
    pub fn criterion(&self, criterion: u8) -> bool {
        self.outcomes.iter().filter(|o| o.criterion == Some(criterion)).all(|o| o.passed)
    }

    pub fn checks_for(&self, criterion: u8) -> usize {
        self.outcomes.iter().filter(|o| o.criterion == Some(criterion)).count()
    }

    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed || o.criterion.is_none())
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed && o.criterion.is_some())
    }

    /// Instances with at least one failed check.
    pub fn failing_instances(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.failures().map(|o| o.instance.as_str()).collect();
        ids.dedup();
        ids
    }

    /// One line per check, then per-criterion totals.
    pub fn text(&self) -> String {
        let mut s = String::new();
        for o in &self.outcomes {
            let status = match (o.passed, o.criterion) {
                (true, _) => "ok",
                (false, Some(_)) => "FAIL",
                (false, None) => "note",
            };
            let _ = writeln!(s, "{status} {} {} {}", o.instance, o.check, o.detail);
        }
        let mut totals: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
        for o in &self.outcomes {
            if let Some(c) = o.criterion {
                let t = totals.entry(c).or_default();
                t.0 += usize::from(o.passed);
                t.1 += 1;
            }
        }
        for (c, (ok, n)) in totals {
            let _ = writeln!(s, "criterion {c}: {ok}/{n} checks pass");
        }
        s
    }
}

struct Recorder<'a> {
    id: &'a str,
    out: Vec<CheckOutcome>,
}

impl Recorder<'_> {
    fn push(&mut self, check: &str, criterion: Option<u8>, passed: bool, detail: String) {
        self.out.push(CheckOutcome { instance: self.id.to_string(), check: check.to_string(), criterion, passed, detail });
    }
}

fn first_mismatch<T: PartialEq>(a: &[T], b: &[T]) -> String {
    if a.len() != b.len() {
        return format!("lengths {} vs {}", a.len(), b.len());
    }
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => format!("first difference at {i}"),
        None => String::new(),
    }
}

fn node(i: &DyadicInterval) -> oracle::Node {
    (i.level, i.index)
}

fn oracle_grid(spec: &GridSpec) -> OracleGrid {
    OracleGrid { m: spec.m(), mw: spec.mw(), step_exp: spec.mw() + spec.offstep().extra_bits() }
}

fn random_subset(spec: GridSpec, seed: u64) -> CellSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits: Vec<bool> = (0..spec.cells()).map(|_| rng.gen_bool(0.5)).collect();
    CellSet::from_bits(spec, bits).expect("length matches")
}

fn oracle_checks(
    rec: &mut Recorder,
    inst: &CorpusInstance,
    fam: &RectangleFamily,
    rho: &ChoiceMap,
    d: &Decomposition,
    e: &CellSet,
    lambda0: DyadicRational,
) -> Result<()> {
    let spec = inst.spec();
    let g = oracle_grid(&spec);
    let v = inst.v.values();

    let shapes = oracle::enumerate(&g, v, inst.delta);
    let ours: Vec<oracle::Shape> = fam.members().iter().map(|r| (r.k, r.base, r.slope, r.offset)).collect();
    rec.push("oracle.enumerate", Some(1), ours == shapes, first_mismatch(&ours, &shapes));

    let (mf, choice) = oracle::maximal(&g, &shapes, inst.f.values());
    let ours_mf = maximal_apply(&inst.f, fam)?;
    let ours_choice: Vec<Option<usize>> = (0..spec.cells()).map(|x| rho.get(x)).collect();
    let ok = ours_mf.values() == mf.as_slice() && ours_choice == choice;
    rec.push("oracle.maximal", Some(1), ok, first_mismatch(ours_mf.values(), &mf) + &first_mismatch(&ours_choice, &choice));

    // every interval the recursion starts from, under both window rules
    let mut roots: Vec<DyadicInterval> = d.interval_collections.iter().flatten().copied().collect();
    roots.sort();
    roots.dedup();
    let (mut stop_ok, mut omega_ok) = (true, true);
    for root in roots.iter().filter(|r| r.level <= spec.mw()) {
        for (rule, literal) in [(WindowRule::Cell, false), (WindowRule::Literal, true)] {
            let a = compute_assignments(&spec, *root, &inst.v, inst.delta, rule)?;
            let oa = oracle::assignments(&g, v, inst.delta, node(root), literal);
            let conv: BTreeMap<oracle::Node, Vec<(oracle::Node, DyadicRational)>> = a
                .entries()
                .iter()
                .map(|(j, ts)| (node(j), ts.iter().map(|(s, mu)| ((s.level, s.index), *mu)).collect()))
                .collect();
            let stop = stopping_intervals(&spec, &a);
            let ostop = oracle::stopping(&g, &oa, node(root));
            stop_ok &= conv == oa && stop.iter().map(node).collect::<Vec<_>>() == ostop;
            let (good, _) = partition_theta(&a, &stop);
            let om: Vec<Vec<oracle::Pair>> = omega_levels(&a, &good)
                .iter()
                .map(|l| l.iter().map(|p| (node(&p.j), (p.s.level, p.s.index))).collect())
                .collect();
            omega_ok &= om == oracle::omega(&oa, &ostop);
        }
    }
    rec.push("oracle.stopping_intervals", Some(1), stop_ok, format!("{} roots", roots.len()));
    rec.push("oracle.omega_levels", Some(1), omega_ok, format!("{} roots", roots.len()));

    let table = badness_table(e, rho, fam)?;
    let ob = oracle::badness(&g, &shapes, &choice, e.bits());
    rec.push("oracle.badness", Some(1), table.b == ob, first_mismatch(&table.b, &ob));

    let covered = CellSet::full(spec).difference(&rho.uncovered());
    let (e_prime, diag) = shrink_once(&covered, rho, fam, lambda0)?;
    let os = oracle::shrink(&g, &shapes, &choice, covered.bits(), lambda0);
    let windows: Vec<(oracle::Node, Vec<oracle::Node>)> =
        diag.bad_windows.iter().map(|(i, ks)| (node(i), ks.iter().map(node).collect())).collect();
    let failures: Vec<oracle::Shape> = diag.failures.iter().map(|f| (f.member.k, f.member.base, f.member.slope, f.member.offset)).collect();
    let ok = e_prime.bits() == os.e_prime.as_slice()
        && windows == os.windows
        && diag.f_set.bits() == os.f_set.as_slice()
        && diag.above_key == os.above_key
        && failures == os.failures;
    rec.push("oracle.shrink_once", Some(1), ok, format!("{} window groups", windows.len()));
    Ok(())
}

/// `sum_R nu_R |R ∩ cell| / (|R| |cell|)` from the member slabs.
fn weighted_count(fam: &RectangleFamily, nu: &[DyadicRational]) -> GridFunction {
    let spec = fam.spec();
    let mut vals = vec![DyadicRational::ZERO; spec.cells()];
    for (r, n) in fam.members().iter().zip(nu) {
        if n.is_zero() {
            continue;
        }
        let scale = n.mul_pow2(r.measure(&spec).exponent() as i32);
        for c in r.columns(&spec) {
            for (row, len) in r.overlaps(&spec, c) {
                // overlap length over the cell side, in units of 2^-(mw + 2) cells
                vals[spec.index(c, row)] += scale * DyadicRational::new(len as i128, spec.mw() + 2);
            }
        }
    }
    GridFunction::new(spec, vals).expect("nonnegative")
}

fn identity_checks(rec: &mut Recorder, inst: &CorpusInstance, fam: &RectangleFamily, rho: &ChoiceMap) -> Result<()> {
    let spec = inst.spec();
    let g = random_function(spec, &mut ChaCha8Rng::seed_from_u64(inst.seed ^ 0x5eed));
    let lhs = apply_t(rho, fam, &inst.f)?.inner(&g)?;
    let rhs = inst.f.inner(&apply_t_adjoint(rho, fam, &g)?)?;
    rec.push("identity.adjoint", Some(2), lhs == rhs, format!("{lhs} vs {rhs}"));

    let f_set = random_subset(spec, inst.seed ^ 0xf5e7);
    let nu = nu_all(rho, fam, &f_set)?;
    let direct = weighted_count(fam, &nu);
    let t = apply_t_adjoint(rho, fam, &GridFunction::indicator(&f_set))?;
    rec.push("identity.weighted_count", Some(2), t == direct, first_mismatch(t.values(), direct.values()));
    let total: DyadicRational = nu.iter().copied().sum();
    rec.push("identity.nu_bound", Some(2), total <= f_set.measure(), format!("{total} <= {}", f_set.measure()));

    let table = badness_table(&f_set, rho, fam)?;
    let mut split_ok = true;
    let mut tested = 0;
    for idx in (0..fam.len()).step_by((fam.len() / 8).max(1)) {
        for level in 0..=spec.m().min(3) {
            let k = DyadicInterval { level, index: (idx as u64) % (1 << level) };
            let (a, b) = split_over_member(idx, &k, &f_set, rho, fam)?;
            split_ok &= a + b == table.b[idx];
            tested += 1;
        }
    }
    rec.push("identity.split", Some(2), split_ok, format!("{tested} splits"));
    Ok(())
}

fn stopping_checks(
    rec: &mut Recorder,
    inst: &CorpusInstance,
    fam: &RectangleFamily,
    rho: &ChoiceMap,
    d: &Decomposition,
) -> Result<()> {
    let violations = check_decomposition(fam, rho, d);
    let names = [
        "carleson", "halving", "omega_empty", "antichain", "comparable", "counting", "goodn", "partition", "exit", "decay",
        "a_disjoint", "a_cover",
    ];
    for name in names {
        let bad: Vec<&str> = violations.iter().filter(|v| v.check == name).map(|v| v.detail.as_str()).collect();
        rec.push(&format!("stopping.{name}"), Some(3), bad.is_empty(), bad.first().map_or(String::new(), |s| s.to_string()));
    }
    rec.push(
        "stopping.generations",
        None,
        !d.truncated,
        format!("{} generations", d.generations.len()),
    );
    // the doubled popularity window, reported for comparison only
    let lit = compute_assignments(&inst.spec(), DyadicInterval::UNIT, &inst.v, inst.delta, WindowRule::Literal)?;
    let sum = carleson_sum(&lit);
    rec.push("diagnostic.literal_carleson", None, sum <= DyadicRational::ONE, format!("sum {sum}"));
    Ok(())
}

fn key_checks(rec: &mut Recorder, fam: &RectangleFamily, rho: &ChoiceMap, lambda0: DyadicRational) -> Result<()> {
    let spec = fam.spec();
    let covered = CellSet::full(spec).difference(&rho.uncovered());
    let trace = shrink_iterate(&covered, rho, fam, lambda0, SHRINK_STEPS)?;
    let halving = trace.steps.iter().all(|s| s.halving_holds());
    let failures: usize = trace.steps.iter().map(|s| s.failures.len()).sum();
    let ms: Vec<String> = trace.measures().iter().map(|m| m.to_string()).collect();
    rec.push("key.halving", Some(4), halving, ms.join(" "));
    rec.push("key.dichotomy", Some(4), failures == 0, format!("{failures} failures"));
    rec.push("key.chain", Some(4), trace.halving_chain_holds() && !trace.truncated, format!("{} steps", trace.steps.len()));
    Ok(())
}

/// Runs every check on one instance; oracle agreement only for `m <= 5`.
pub fn verify_instance(inst: &CorpusInstance, lambda0: DyadicRational) -> Result<Vec<CheckOutcome>> {
    let spec = inst.spec();
    let mut rec = Recorder { id: &inst.id, out: Vec::new() };
    let fam = enumerate_family(&FamilyParams::new(spec, inst.delta)?, &inst.v)?;
    let rho = linearize(&inst.f, &fam)?;
    let d = run_generations(&fam, &inst.v, &rho, DEFAULT_MAX_GENERATIONS, WindowRule::Cell)?;
    if spec.m() <= 5 {
        let e = random_subset(spec, inst.seed ^ 0xe5e7);
        oracle_checks(&mut rec, inst, &fam, &rho, &d, &e, lambda0)?;
    }
    identity_checks(&mut rec, inst, &fam, &rho)?;
    stopping_checks(&mut rec, inst, &fam, &rho, &d)?;
    key_checks(&mut rec, &fam, &rho, lambda0)?;
    let dom = domination_check(&rho, &fam, &d, &inst.f)?;
    rec.push(
        "domination",
        Some(9),
        dom.holds(),
        format!("{} of {} cells fail, worst ratio {:.6}", dom.failures.len(), dom.checked, dom.worst_ratio),
    );
    rec.push(
        "diagnostic.domination_same_generation",
        None,
        dom.same_generation_failures == 0,
        format!("{} of {} cells fail", dom.same_generation_failures, dom.same_generation_checked),
    );
    Ok(rec.out)
}

/// Runs the suite on every instance with `m <= max_m`, in corpus order.
pub fn verify(corpus: &[CorpusInstance], max_m: Option<u32>, lambda0: DyadicRational) -> Result<VerifyReport> {
    let chosen: Vec<&CorpusInstance> = corpus.iter().filter(|c| max_m.map_or(true, |m| c.spec().m() <= m)).collect();
    let parts: Vec<Vec<CheckOutcome>> = chosen.par_iter().map(|c| verify_instance(c, lambda0)).collect::<Result<_>>()?;
    Ok(VerifyReport { outcomes: parts.into_iter().flatten().collect() })
}

/// Smallest power of two, at least one, for which every shrinking step of every
/// instance halves `E` with no dichotomy failure.
pub fn calibrate_lambda0(corpus: &[CorpusInstance], max_exp: u32) -> Result<Option<DyadicRational>> {
    let prepared: Vec<(RectangleFamily, ChoiceMap)> = corpus
        .par_iter()
        .map(|c| {
            let fam = enumerate_family(&FamilyParams::new(c.spec(), c.delta)?, &c.v)?;
            let rho = linearize(&c.f, &fam)?;
            Ok((fam, rho))
        })
        .collect::<Result<_>>()?;
    for e in 0..=max_exp {
        let lambda0 = DyadicRational::from_int(1 << e);
        let ok = prepared
            .par_iter()
            .map(|(fam, rho)| {
                let covered = CellSet::full(fam.spec()).difference(&rho.uncovered());
                let t = shrink_iterate(&covered, rho, fam, lambda0, SHRINK_STEPS)?;
                Ok(t.steps.iter().all(|s| s.halving_holds() && s.failures.is_empty()) && !t.truncated)
            })
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .all(|b| b);
        if ok {
            return Ok(Some(lambda0));
        }
    }
    Ok(None)
}
