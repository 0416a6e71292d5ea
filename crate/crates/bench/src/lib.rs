//! Fixed inputs for the kernel benchmarks.

use vfmax_core::family::enumerate_family;
use vfmax_core::instances::{cascade_field, make_kakeya_instance};
use vfmax_core::maximal::{linearize, ChoiceMap};
use vfmax_core::{CellSet, DyadicRational, FamilyParams, GridFunction, GridSpec, OffsetStep, OneVarField, RectangleFamily, Result};

/// A field, a test function and the dense family they generate.
pub struct Fixture {
    pub v: OneVarField,
    pub f: GridFunction,
    pub params: FamilyParams,
    pub fam: RectangleFamily,
}

impl Fixture {
    pub fn choice(&self) -> Result<ChoiceMap> {
        linearize(&self.f, &self.fam)
    }
}

/// Kakeya instance at `delta = 2^-n` on the `m = n + 3` grid.
pub fn kakeya(n: u32) -> Result<Fixture> {
    let delta = DyadicRational::new(1, n);
    let (v, f) = make_kakeya_instance(n + 3, delta)?;
    let params = FamilyParams::new(v.spec(), delta)?;
    let fam = enumerate_family(&params, &v)?;
    Ok(Fixture { v, f, params, fam })
}

/// Cascading field at `delta = 1/2` with `f` the indicator of the left half.
pub fn cascade(m: u32, mw: u32) -> Result<Fixture> {
    let spec = GridSpec::new(m, mw, OffsetStep::W)?;
    let v = cascade_field(spec, m - 1);
    let half = spec.side() / 2;
    let f = GridFunction::indicator(&CellSet::from_fn(spec, |c, _| c < half));
    let params = FamilyParams::new(spec, DyadicRational::new(1, 1))?;
    let fam = enumerate_family(&params, &v)?;
    Ok(Fixture { v, f, params, fam })
}
