//! The `2^m x 2^m` cell grid on the unit square, grid functions, one-variable
//! fields, cell sets, and the `MAXGRID v1` text format.
//!
//! Cells are stored column-major: the flat index of cell `(column, row)` is
//! `column * 2^m + row`, so rows vary fastest and every column is contiguous.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, DyadicRational};
use crate::error::{Error, Result};

/// Largest grid exponent accepted anywhere (`2^13 x 2^13` cells).
pub const MAX_GRID_EXPONENT: u32 = 13;

/// Vertical quantisation of parallelogram offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OffsetStep {
    /// Offsets are multiples of `w`.
    W,
    /// Offsets are multiples of `w / 2`.
    HalfW,
}

impl OffsetStep {
    /// `log2(w / step)`.
    pub fn extra_bits(self) -> u32 {
        match self {
            OffsetStep::W => 0,
            OffsetStep::HalfW => 1,
        }
    }
}

impl FromStr for OffsetStep {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(OffsetStep::W),
            "w2" => Ok(OffsetStep::HalfW),
            _ => Err(Error::Parse(format!("offset step must be `w` or `w2`, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for OffsetStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OffsetStep::W => "w",
            OffsetStep::HalfW => "w2",
        })
    }
}

/// Grid of `2^m x 2^m` cells with parallelogram width `w = 2^-mw`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    m: u32,
    mw: u32,
    offstep: OffsetStep,
}

impl GridSpec {
    /// Requires `mw + 2 <= m`, so that every slab spans at least four cells.
    pub fn new(m: u32, mw: u32, offstep: OffsetStep) -> Result<Self> {
        if m > MAX_GRID_EXPONENT {
            return Err(Error::InvalidArgument(format!(
                "grid exponent {m} exceeds cap {MAX_GRID_EXPONENT}"
            )));
        }
        if mw + 2 > m {
            return Err(Error::InvalidArgument(format!(
                "width exponent {mw} must satisfy mw <= m - 2 (m = {m})"
            )));
        }
        Ok(GridSpec { m, mw, offstep })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn mw(&self) -> u32 {
        self.mw
    }

    pub fn offstep(&self) -> OffsetStep {
        self.offstep
    }

    pub fn side(&self) -> usize {
        1 << self.m
    }

    pub fn cells(&self) -> usize {
        1 << (2 * self.m)
    }

    pub fn w(&self) -> DyadicRational {
        DyadicRational::pow2_neg(self.mw)
    }

    /// Side length of one cell.
    pub fn h(&self) -> DyadicRational {
        DyadicRational::pow2_neg(self.m)
    }

    pub fn cell_area(&self) -> DyadicRational {
        DyadicRational::pow2_neg(2 * self.m)
    }

    pub fn offset_step(&self) -> DyadicRational {
        DyadicRational::pow2_neg(self.mw + self.offstep.extra_bits())
    }

    /// Rows of one column covered by a slab of height `w`.
    pub fn rows_per_slab(&self) -> usize {
        1 << (self.m - self.mw)
    }

    pub fn index(&self, column: usize, row: usize) -> usize {
        (column << self.m) | row
    }

    pub fn column_of(&self, index: usize) -> usize {
        index >> self.m
    }

    pub fn row_of(&self, index: usize) -> usize {
        index & (self.side() - 1)
    }

    pub fn column_center(&self, column: usize) -> DyadicRational {
        DyadicRational::new(2 * column as i128 + 1, self.m + 1)
    }

    /// Columns whose centres lie in the horizontal interval `iv`.
    pub fn columns_of(&self, iv: &DyadicInterval) -> std::ops::Range<usize> {
        assert!(iv.level <= self.m, "interval finer than the grid");
        let shift = self.m - iv.level;
        (iv.index as usize) << shift..((iv.index as usize) + 1) << shift
    }

    /// The dyadic interval of length `2^k w`, level `mw - k`, with index `i`.
    pub fn base_interval(&self, k: u32, index: u64) -> DyadicInterval {
        DyadicInterval { level: self.mw - k, index }
    }

    /// `k` with `|iv| = 2^k w`, if any.
    pub fn length_exponent(&self, iv: &DyadicInterval) -> Option<u32> {
        (iv.level <= self.mw).then(|| self.mw - iv.level)
    }
}

/// A nonnegative piecewise-constant function on the grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridFunction {
    spec: GridSpec,
    values: Vec<DyadicRational>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Vec<DyadicRational>) -> Result<Self> {
        if values.len() != spec.cells() {
            return Err(Error::InvalidArgument(format!(
                "grid function needs {} values, got {}",
                spec.cells(),
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_negative()) {
            return Err(Error::InvalidArgument("grid function values must be nonnegative".into()));
        }
        Ok(GridFunction { spec, values })
    }

    pub fn constant(spec: GridSpec, c: DyadicRational) -> Self {
        assert!(!c.is_negative());
        GridFunction { spec, values: vec![c; spec.cells()] }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::constant(spec, DyadicRational::ZERO)
    }

    pub fn indicator(set: &CellSet) -> Self {
        let values = set
            .bits()
            .iter()
            .map(|&b| if b { DyadicRational::ONE } else { DyadicRational::ZERO })
            .collect();
        GridFunction { spec: set.spec(), values }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn values(&self) -> &[DyadicRational] {
        &self.values
    }

    pub fn get(&self, column: usize, row: usize) -> DyadicRational {
        self.values[self.spec.index(column, row)]
    }

    pub fn column(&self, column: usize) -> &[DyadicRational] {
        let n = self.spec.side();
        &self.values[column * n..(column + 1) * n]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(DyadicRational::is_zero)
    }

    /// `<f, g> = sum f g h^2`, exact.
    pub fn inner(&self, other: &GridFunction) -> Result<DyadicRational> {
        if self.spec != other.spec {
            return Err(Error::IncompatibleGrids);
        }
        let s: DyadicRational = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a * *b)
            .sum();
        Ok(s * self.spec.cell_area())
    }

    /// `int f`, exact.
    pub fn integral(&self) -> DyadicRational {
        self.values.iter().sum::<DyadicRational>() * self.spec.cell_area()
    }

    /// `||f||_p` in floating point (reporting only).
    pub fn lp_norm(&self, p: f64) -> f64 {
        let area = self.spec.cell_area().to_f64();
        let s: f64 = self.values.iter().map(|v| v.to_f64().abs().powf(p)).sum();
        (s * area).powf(1.0 / p)
    }

    /// Pointwise `f <= g`.
    pub fn le(&self, other: &GridFunction) -> bool {
        self.spec == other.spec && self.values.iter().zip(&other.values).all(|(a, b)| a <= b)
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.spec != other.spec {
            return Err(Error::IncompatibleGrids);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a + *b).collect();
        Ok(GridFunction { spec: self.spec, values })
    }

    pub fn scale(&self, c: DyadicRational) -> GridFunction {
        assert!(!c.is_negative());
        GridFunction { spec: self.spec, values: self.values.iter().map(|v| *v * c).collect() }
    }

    /// `f * 1_S`.
    pub fn restrict(&self, set: &CellSet) -> GridFunction {
        let values = self
            .values
            .iter()
            .zip(set.bits())
            .map(|(v, &b)| if b { *v } else { DyadicRational::ZERO })
            .collect();
        GridFunction { spec: self.spec, values }
    }

    /// Shifts whole columns right by `by` (cyclically).
    pub fn shift_columns(&self, by: usize) -> GridFunction {
        let n = self.spec.side();
        let mut values = vec![DyadicRational::ZERO; self.spec.cells()];
        for c in 0..n {
            let dst = (c + by) % n;
            values[dst * n..(dst + 1) * n].copy_from_slice(self.column(c));
        }
        GridFunction { spec: self.spec, values }
    }

    pub fn to_maxgrid(&self) -> String {
        render_maxgrid(&self.spec, &self.values)
    }

    pub fn from_maxgrid(text: &str) -> Result<Self> {
        let (spec, values) = parse_maxgrid(text, |s| s.cells())?;
        Self::new(spec, values)
    }
}

/// A slope field depending on the horizontal variable only: one value per column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OneVarField {
    spec: GridSpec,
    column_values: Vec<DyadicRational>,
}

impl OneVarField {
    pub fn new(spec: GridSpec, column_values: Vec<DyadicRational>) -> Result<Self> {
        if column_values.len() != spec.side() {
            return Err(Error::InvalidArgument(format!(
                "field needs {} column values, got {}",
                spec.side(),
                column_values.len()
            )));
        }
        if column_values
            .iter()
            .any(|v| v.is_negative() || *v > DyadicRational::ONE)
        {
            return Err(Error::InvalidArgument("field values must lie in [0, 1]".into()));
        }
        Ok(OneVarField { spec, column_values })
    }

    pub fn constant(spec: GridSpec, c: DyadicRational) -> Result<Self> {
        Self::new(spec, vec![c; spec.side()])
    }

    /// `v(x) = x` sampled at column centres.
    pub fn identity(spec: GridSpec) -> Self {
        let column_values = (0..spec.side()).map(|c| spec.column_center(c)).collect();
        OneVarField { spec, column_values }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn values(&self) -> &[DyadicRational] {
        &self.column_values
    }

    pub fn at(&self, column: usize) -> DyadicRational {
        self.column_values[column]
    }

    pub fn to_maxgrid(&self) -> String {
        render_maxgrid(&self.spec, &self.column_values)
    }

    pub fn from_maxgrid(text: &str) -> Result<Self> {
        let (spec, values) = parse_maxgrid(text, |s| s.side())?;
        Self::new(spec, values)
    }
}

/// A set of grid cells; its measure is `count * h^2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellSet {
    spec: GridSpec,
    bits: Vec<bool>,
}

impl CellSet {
    pub fn empty(spec: GridSpec) -> Self {
        CellSet { spec, bits: vec![false; spec.cells()] }
    }

    pub fn full(spec: GridSpec) -> Self {
        CellSet { spec, bits: vec![true; spec.cells()] }
    }

    pub fn from_bits(spec: GridSpec, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != spec.cells() {
            return Err(Error::InvalidArgument("cell set has the wrong size".into()));
        }
        Ok(CellSet { spec, bits })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(usize, usize) -> bool) -> Self {
        let n = spec.side();
        let bits = (0..spec.cells()).map(|i| f(i / n, i % n)).collect();
        CellSet { spec, bits }
    }

    /// `I x [0, 1]` for a horizontal dyadic interval.
    pub fn vertical_strip(spec: GridSpec, iv: &DyadicInterval) -> Self {
        let cols = spec.columns_of(iv);
        Self::from_fn(spec, |c, _| cols.contains(&c))
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn insert(&mut self, index: usize) {
        self.bits[index] = true;
    }

    pub fn remove(&mut self, index: usize) {
        self.bits[index] = false;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn measure(&self) -> DyadicRational {
        DyadicRational::from_int(self.count() as i128) * self.spec.cell_area()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn union(&self, other: &CellSet) -> CellSet {
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        CellSet { spec: self.spec, bits }
    }

    pub fn intersection(&self, other: &CellSet) -> CellSet {
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        CellSet { spec: self.spec, bits }
    }

    pub fn difference(&self, other: &CellSet) -> CellSet {
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && !*b).collect();
        CellSet { spec: self.spec, bits }
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn is_disjoint(&self, other: &CellSet) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !(*a && *b))
    }

    /// Run-length encoding as alternating run lengths, starting with a run of absent cells.
    pub fn run_lengths(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_run_lengths(spec: GridSpec, runs: &[usize]) -> Result<Self> {
        let mut bits = Vec::with_capacity(spec.cells());
        for (i, &r) in runs.iter().enumerate() {
            bits.extend(std::iter::repeat(i % 2 == 1).take(r));
        }
        Self::from_bits(spec, bits)
    }
}

fn render_maxgrid(spec: &GridSpec, values: &[DyadicRational]) -> String {
    let mut out = String::new();
    out.push_str("maxgrid 1\n");
    let _ = writeln!(out, "m {} mw {} offstep {}", spec.m(), spec.mw(), spec.offstep());
    let n = spec.side();
    for chunk in values.chunks(n) {
        let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn parse_maxgrid(
    text: &str,
    expected: impl Fn(&GridSpec) -> usize,
) -> Result<(GridSpec, Vec<DyadicRational>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let magic = lines.next().ok_or_else(|| Error::Parse("empty MAXGRID file".into()))?;
    if magic.split_whitespace().collect::<Vec<_>>() != ["maxgrid", "1"] {
        return Err(Error::Parse(format!("bad MAXGRID magic line {magic:?}")));
    }
    let header = lines.next().ok_or_else(|| Error::Parse("missing MAXGRID header".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != "m" || toks[2] != "mw" || toks[4] != "offstep" {
        return Err(Error::Parse(format!("bad MAXGRID header {header:?}")));
    }
    let m = toks[1].parse().map_err(|_| Error::Parse("bad m".into()))?;
    let mw = toks[3].parse().map_err(|_| Error::Parse("bad mw".into()))?;
    let spec = GridSpec::new(m, mw, toks[5].parse()?)?;
    let values = lines
        .flat_map(str::split_whitespace)
        .map(str::parse)
        .collect::<Result<Vec<DyadicRational>>>()?;
    if values.len() != expected(&spec) {
        return Err(Error::Parse(format!(
            "MAXGRID body has {} values, expected {}",
            values.len(),
            expected(&spec)
        )));
    }
    Ok((spec, values))
}
