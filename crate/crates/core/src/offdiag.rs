//! Pieces `T_{j,J,n}` of a decomposed linearized operator, the vertical
//! domination test, and power-iteration estimates of piece norms.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dyadic::{DyadicInterval, DyadicRational};
use crate::error::Result;
use crate::family::RectangleFamily;
use crate::grid::{CellSet, GridFunction};
use crate::kernel::{self, ScaledGrid};
use crate::maximal::{apply_t_adjoint, m2_vertical, to_ratio, ChoiceMap};
use crate::stopping::Decomposition;

/// `T*_{j,J,n} f = T*(1_{A_{j,J,n}} f)`.
pub fn piece_adjoint(rho: &ChoiceMap, fam: &RectangleFamily, a_jjn: &CellSet, f: &GridFunction) -> Result<GridFunction> {
    apply_t_adjoint(rho, fam, &f.restrict(a_jjn))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DominationFailure {
    pub j: usize,
    pub k: usize,
    pub interval: DyadicInterval,
    pub n: usize,
    pub cell: usize,
    pub average: String,
    pub m2: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DominationReport {
    /// Cells tested with `k > j`.
    pub checked: usize,
    pub failures: Vec<DominationFailure>,
    /// Largest `average / M_2` over the cells tested with `k > j`.
    pub worst_ratio: f64,
    /// Cells tested with `k = j`, reported separately.
    pub same_generation_checked: usize,
    pub same_generation_failures: usize,
}

impl DominationReport {
    pub fn holds(&self) -> bool {
        self.failures.is_empty()
    }
}

/// For every piece `(j, J, n)` and every `x in A_k ∩ (J × [0,1])` with `k >= j`, compares
/// the average of `T*_{j,J,n} f` over `rho(x)` with `M_2 T*_{j,J,n} f (x)`.
pub fn domination_check(
    rho: &ChoiceMap,
    fam: &RectangleFamily,
    d: &Decomposition,
    f: &GridFunction,
) -> Result<DominationReport> {
    let spec = fam.spec();
    let mut report = DominationReport::default();
    for (j, gen) in d.generations.iter().enumerate() {
        for rec in &gen.intervals {
            let strip = CellSet::vertical_strip(spec, &rec.interval);
            for (n, a_jjn) in rec.classes.f_sets.iter().enumerate() {
                if a_jjn.is_empty() {
                    continue;
                }
                let g = piece_adjoint(rho, fam, a_jjn, f)?;
                let m2 = m2_vertical(&g);
                let scaled = ScaledGrid::from_function(&g);
                let avgs = kernel::member_averages(fam, &scaled);
                let aexp = kernel::average_exponent(&spec, scaled.exp);
                for (k, later) in d.generations.iter().enumerate().skip(j) {
                    for x in later.a.intersection(&strip).iter() {
                        let Some(idx) = rho.get(x) else { continue };
                        let avg = DyadicRational::new(avgs[idx], aexp);
                        let ok = to_ratio(avg) <= m2[x];
                        if k == j {
                            report.same_generation_checked += 1;
                            report.same_generation_failures += usize::from(!ok);
                            continue;
                        }
                        report.checked += 1;
                        let m2f = *m2[x].numer() as f64 / *m2[x].denom() as f64;
                        if m2f > 0.0 {
                            report.worst_ratio = report.worst_ratio.max(avg.to_f64() / m2f);
                        } else if !avg.is_zero() {
                            report.worst_ratio = f64::INFINITY;
                        }
                        if !ok {
                            report.failures.push(DominationFailure {
                                j,
                                k,
                                interval: rec.interval,
                                n,
                                cell: x,
                                average: avg.to_string(),
                                m2: ratio_string(m2[x]),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

fn ratio_string(r: Ratio<i128>) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn t_restricted(rho: &ChoiceMap, fam: &RectangleFamily, a: &CellSet, f: &GridFunction) -> Result<GridFunction> {
    Ok(crate::maximal::apply_t(rho, fam, f)?.restrict(a))
}

fn l2(f: &[f64]) -> f64 {
    f.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn to_f64s(f: &GridFunction) -> Vec<f64> {
    f.values().iter().map(|v| v.to_f64()).collect()
}

fn from_f64s(f: &GridFunction, v: &[f64]) -> Result<GridFunction> {
    let peak = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let scale = if peak > 0.0 { f64::from(1u32 << 24) / peak } else { 0.0 };
    GridFunction::new(
        f.spec(),
        v.iter().map(|x| DyadicRational::new((x * scale).round() as i128, 24)).collect(),
    )
}

/// `||T_j T_k*||` on `L^2`, estimated by power iteration from a seeded random start.
pub fn piece_norm(
    rho: &ChoiceMap,
    fam: &RectangleFamily,
    a_j: &CellSet,
    a_k: &CellSet,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    let spec = fam.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = GridFunction::new(
        spec,
        (0..spec.cells()).map(|_| DyadicRational::new(rng.gen_range(1..=1 << 12), 12)).collect(),
    )?;
    let mut best = 0.0f64;
    for _ in 0..iters {
        let nf = l2(&to_f64s(&f));
        if nf == 0.0 {
            break;
        }
        let tkf = apply_t_adjoint(rho, fam, &f.restrict(a_k))?;
        let u = t_restricted(rho, fam, a_j, &tkf)?;
        best = best.max(l2(&to_f64s(&u)) / nf);
        let back = apply_t_adjoint(rho, fam, &u.restrict(a_j))?;
        let next = t_restricted(rho, fam, a_k, &back)?;
        f = from_f64s(&next, &to_f64s(&next))?;
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PieceNorm {
    pub j: usize,
    pub k: usize,
    pub norm: f64,
}

/// `||T_j T_k*||` for all generation pairs; the diagonal gives `||T_j||^2`.
pub fn piece_norms(rho: &ChoiceMap, fam: &RectangleFamily, d: &Decomposition, iters: usize, seed: u64) -> Result<Vec<PieceNorm>> {
    let a = d.a_sets();
    let mut out = Vec::new();
    for j in 0..a.len() {
        for k in 0..a.len() {
            let norm = piece_norm(rho, fam, a[j], a[k], iters, seed)?;
            out.push(PieceNorm { j, k, norm });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{enumerate_family, FamilyParams, WindowRule};
    use crate::grid::{GridSpec, OffsetStep, OneVarField};
    use crate::maximal::linearize;
    use crate::stopping::run_generations;

    #[test]
    fn identity_field_pieces() {
        let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
        let v = OneVarField::identity(spec);
        let fam = enumerate_family(&FamilyParams::new(spec, "1/2".parse().unwrap()).unwrap(), &v).unwrap();
        let f = GridFunction::new(
            spec,
            (0..spec.cells()).map(|i| DyadicRational::from_int((i * 7 % 5) as i128)).collect(),
        )
        .unwrap();
        let rho = linearize(&f, &fam).unwrap();
        let d = run_generations(&fam, &v, &rho, 64, WindowRule::Cell).unwrap();
        let report = domination_check(&rho, &fam, &d, &f).unwrap();
        assert!(report.same_generation_checked > 0);
        let norms = piece_norms(&rho, &fam, &d, 6, 1).unwrap();
        assert_eq!(norms.len(), d.generations.len().pow(2));
        for p in &norms {
            assert!(p.norm.is_finite() && p.norm >= 0.0);
        }
    }

    #[test]
    fn pieces_sum_to_generation_adjoint() {
        let spec = GridSpec::new(4, 2, OffsetStep::W).unwrap();
        let v = OneVarField::identity(spec);
        let fam = enumerate_family(&FamilyParams::new(spec, "1/2".parse().unwrap()).unwrap(), &v).unwrap();
        let f = GridFunction::constant(spec, DyadicRational::ONE);
        let rho = linearize(&f, &fam).unwrap();
        let d = run_generations(&fam, &v, &rho, 64, WindowRule::Cell).unwrap();
        for gen in &d.generations {
            let mut total = GridFunction::zeros(spec);
            let mut union = CellSet::empty(spec);
            for rec in &gen.intervals {
                for a in &rec.classes.f_sets {
                    // levels may overlap; only count each cell once
                    let fresh = a.difference(&union);
                    total = total.add(&piece_adjoint(&rho, &fam, &fresh, &f).unwrap()).unwrap();
                    union = union.union(a);
                }
            }
            assert_eq!(union, gen.a);
            assert_eq!(total, apply_t_adjoint(&rho, &fam, &f.restrict(&gen.a)).unwrap());
        }
    }
}
