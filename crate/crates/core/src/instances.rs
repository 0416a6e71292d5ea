//! Test-instance generators: Kakeya-type sets for `v(x) = x`, the small-square
//! instance, random and cascading fields.

use rand::Rng;
use serde::Serialize;

use crate::dyadic::DyadicRational;
use crate::error::{Error, Result};
use crate::family::{FamilyParams, Provenance, RectangleFamily};
use crate::geometry::{max_offset_steps, Parallelogram};
use crate::grid::{CellSet, GridFunction, GridSpec, OffsetStep, OneVarField};
use crate::badness::touched_cells;

/// `log2(1/delta)` for `delta = 2^-n`.
pub fn delta_depth(delta: DyadicRational) -> Result<u32> {
    if delta.numerator() != 1 || delta > DyadicRational::ONE {
        return Err(Error::DyadicDeltaRequired);
    }
    Ok(delta.exponent())
}

/// Per-column values drawn uniformly from `{0, 2^-m, ..., 1 - 2^-m}`.
pub fn random_field<R: Rng>(spec: GridSpec, rng: &mut R) -> OneVarField {
    let m = spec.m();
    let vals = (0..spec.side()).map(|_| DyadicRational::new(rng.gen_range(0..1i128 << m), m)).collect();
    OneVarField::new(spec, vals).expect("values in [0,1)")
}

/// Values in `{0, ..., 3}` on every cell.
pub fn random_function<R: Rng>(spec: GridSpec, rng: &mut R) -> GridFunction {
    GridFunction::new(spec, (0..spec.cells()).map(|_| DyadicRational::from_int(rng.gen_range(0..4))).collect())
        .expect("length matches")
}

/// `v = (2 (l mod 4) + 1) / 8` on `[2^-(l+1), 2^-l)` for `l < depth`, and the
/// level-`depth` value on `[0, 2^-depth)`.
///
/// With `delta = 1/2` each of the first four levels of the chain `[0, 2^-l)`
/// carries one new popular slope of density one half, so the chain reaches the
/// stopping threshold once `mw >= 5`.
pub fn cascade_field(spec: GridSpec, depth: u32) -> OneVarField {
    let n = spec.side();
    let vals = (0..n)
        .map(|c| {
            // level l such that c lies in [n 2^-(l+1), n 2^-l)
            let l = if c == 0 { depth } else { (n / (c + 1)).ilog2().min(depth) };
            DyadicRational::new(2 * (l as i128 % 4) + 1, 3)
        })
        .collect();
    OneVarField::new(spec, vals).expect("values in [0,1)")
}

/// Metadata recorded with a Kakeya instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KakeyaMeta {
    pub depth: u32,
    pub tubes: usize,
    /// `|supp f|`.
    pub support: String,
    /// Cells meeting some tube.
    pub union: String,
}

/// A Kakeya instance: the field, the input function and the tubes.
#[derive(Clone, Debug)]
pub struct KakeyaInstance {
    pub field: OneVarField,
    pub f: GridFunction,
    pub tubes: RectangleFamily,
    pub meta: KakeyaMeta,
}

/// Keich offsets for `v(x) = x`, `w = delta`, compressed on `[0, 1/2)`.
///
/// The tube with slope cell `j` has `b_j = c - sum_{i <= depth} (i-1)/(2 depth) e_i(j) 2^-i`,
/// where `e_i(j)` are the binary digits of `j / 2^n`, rounded to the offset grid and
/// clipped into the square; `f` is the indicator of the part of the union over `x < 1/2`.
pub fn make_kakeya_instance_with_depth(m: u32, delta: DyadicRational, depth: u32) -> Result<KakeyaInstance> {
    let n = delta_depth(delta)?;
    if depth > n {
        return Err(Error::InvalidArgument(format!("depth {depth} exceeds log2(1/delta) = {n}")));
    }
    let spec = GridSpec::new(m, n, OffsetStep::HalfW)?;
    let field = OneVarField::identity(spec);
    let step = spec.offset_step().to_f64();
    let shift = |j: u64| -> f64 {
        (1..=depth)
            .filter(|&i| (j >> (n - i)) & 1 == 1)
            .map(|i| f64::from(i - 1) / f64::from(2 * depth) * 0.5f64.powi(i as i32))
            .sum()
    };
    let top = (0..1u64 << n).map(shift).fold(0.0, f64::max);
    let mut tubes = Vec::new();
    for j in 0..1u64 << n {
        let Some(max) = max_offset_steps(&spec, n, 0, j) else { continue };
        let b = ((top - shift(j)) / step).round() as u64;
        tubes.push(Parallelogram { k: n, base: 0, slope: j, offset: b.min(max) });
    }
    let tubes = RectangleFamily::new(FamilyParams::new(spec, delta)?, tubes, Provenance::Constructed)?;
    let mut union = CellSet::empty(spec);
    for r in tubes.members() {
        union = union.union(&touched_cells(&spec, r));
    }
    let half = spec.side() / 2;
    let support = CellSet::from_fn(spec, |c, r| c < half && union.contains(spec.index(c, r)));
    let meta = KakeyaMeta {
        depth,
        tubes: tubes.len(),
        support: support.measure().to_string(),
        union: union.measure().to_string(),
    };
    Ok(KakeyaInstance { field, f: GridFunction::indicator(&support), tubes, meta })
}

/// [`make_kakeya_instance_with_depth`] at full depth `log2(1/delta)`.
pub fn make_kakeya_instance(m: u32, delta: DyadicRational) -> Result<(OneVarField, GridFunction)> {
    let inst = make_kakeya_instance_with_depth(m, delta, delta_depth(delta)?)?;
    Ok((inst.field, inst.f))
}

/// `v(x) = x` with `w = delta` and `f = 1_{[0, delta)^2}`.
pub fn make_square_instance(m: u32, delta: DyadicRational) -> Result<(OneVarField, GridFunction)> {
    let n = delta_depth(delta)?;
    let spec = GridSpec::new(m, n, OffsetStep::W)?;
    let side = spec.side() >> n;
    let set = CellSet::from_fn(spec, |c, r| c < side && r < side);
    Ok((OneVarField::identity(spec), GridFunction::indicator(&set)))
}

/// `N` single-slope families of full-length tubes at evenly spaced slope cells among
/// those that fit in the square, each with every admissible offset.
pub fn distinct_slope_collections(spec: GridSpec, count: usize) -> Result<Vec<RectangleFamily>> {
    let mw = spec.mw();
    let fitting: Vec<(u64, u64)> =
        (0..1u64 << mw).filter_map(|j| max_offset_steps(&spec, mw, 0, j).map(|max| (j, max))).collect();
    if count == 0 || count > fitting.len() {
        return Err(Error::InvalidArgument(format!("need 1 <= N <= {}", fitting.len())));
    }
    let params = FamilyParams::new(spec, DyadicRational::ONE)?;
    (0..count)
        .map(|i| {
            let (j, max) = fitting[i * fitting.len() / count];
            let members = (0..=max).map(|o| Parallelogram { k: mw, base: 0, slope: j, offset: o }).collect();
            RectangleFamily::new(params, members, Provenance::Constructed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{enumerate_family, is_good_collection, WindowRule};
    use crate::maximal::{linearize, maximal_apply, member_cells};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::stopping::run_generations;

    fn d(s: &str) -> DyadicRational {
        s.parse().unwrap()
    }

    #[test]
    fn non_dyadic_delta() {
        assert!(matches!(make_kakeya_instance(6, d("3/8")), Err(Error::DyadicDeltaRequired)));
        assert!(matches!(make_square_instance(6, d("3/8")), Err(Error::DyadicDeltaRequired)));
    }

    #[test]
    fn kakeya_half() {
        let inst = make_kakeya_instance_with_depth(4, d("1/2"), 1).unwrap();
        // the slope cell [1/2, 1) does not fit at width 1/2
        assert_eq!(inst.meta.tubes, 1);
        let fam = enumerate_family(&FamilyParams::new(inst.field.spec(), d("1/2")).unwrap(), &inst.field).unwrap();
        assert!(inst.tubes.is_subset_of(&fam));
    }

    #[test]
    fn kakeya_tubes_are_dense_and_compress() {
        let delta = d("1/16");
        let mut supports = Vec::new();
        for depth in 0..=4 {
            let inst = make_kakeya_instance_with_depth(7, delta, depth).unwrap();
            let fam = enumerate_family(&FamilyParams::new(inst.field.spec(), delta).unwrap(), &inst.field).unwrap();
            assert!(inst.tubes.is_subset_of(&fam));
            // every tube meets the support in at least half its area
            let mf = maximal_apply(&inst.f, &fam).unwrap();
            for r in inst.tubes.members() {
                for x in member_cells(&inst.field.spec(), r).iter() {
                    assert!(mf.values()[x] >= d("1/2"));
                }
            }
            supports.push(inst.f.integral());
        }
        // the first digit carries weight zero, and full depth beats the bush at the origin
        assert_eq!(supports[0], supports[1]);
        assert!(supports[4] < supports[0], "{supports:?}");
    }

    #[test]
    fn square_norms() {
        let (v, f) = make_square_instance(7, d("1/8")).unwrap();
        assert_eq!(v.spec().mw(), 3);
        assert_eq!(f.integral(), d("1/64"));
        assert!((f.lp_norm(1.5) - (1.0f64 / 64.0).powf(1.0 / 1.5)).abs() < 1e-12);
    }

    #[test]
    fn cascade_stops() {
        let spec = GridSpec::new(7, 5, OffsetStep::W).unwrap();
        let v = cascade_field(spec, 6);
        assert_eq!(v.at(127), d("1/8"));
        assert_eq!(v.at(63), d("3/8"));
        let fam = enumerate_family(&FamilyParams::new(spec, d("1/2")).unwrap(), &v).unwrap();
        let f = random_function(spec, &mut ChaCha8Rng::seed_from_u64(0));
        let rho = linearize(&f, &fam).unwrap();
        let dec = run_generations(&fam, &v, &rho, 64, WindowRule::Cell).unwrap();
        assert!(dec.generations.len() >= 2);
    }

    #[test]
    fn single_slope_collections_are_good() {
        let spec = GridSpec::new(6, 3, OffsetStep::W).unwrap();
        let cols = distinct_slope_collections(spec, 4).unwrap();
        assert_eq!(cols.len(), 4);
        for c in &cols {
            assert!(is_good_collection(c).is_organized());
        }
        assert!(distinct_slope_collections(spec, 9).is_err());
    }
}
