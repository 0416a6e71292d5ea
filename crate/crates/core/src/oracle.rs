//! Brute-force reference implementations.
//!
//! Everything here is computed straight from the definitions with
//! [`DyadicRational`] arithmetic: slabs are intersected with cells one pair at a
//! time, windows are scanned exhaustively, and orders are evaluated by counting.
//! Nothing is shared with the optimized code besides the number type, so
//! agreement between the two is meaningful. Intended for `m <= 5`.

use std::collections::BTreeMap;

use crate::dyadic::DyadicRational;

/// `(k, base, slope, offset)` in the same canonical order as the optimized family.
pub type Shape = (u32, u64, u64, u64);
/// `(level, index)` of a dyadic interval or slope cell.
pub type Node = (u32, u64);
/// `(J, s)`.
pub type Pair = (Node, Node);

type Q = DyadicRational;

fn q(n: i128, e: u32) -> Q {
    DyadicRational::new(n, e)
}

fn int(n: i128) -> Q {
    DyadicRational::from_int(n)
}

/// Grid exponent, width exponent and offset-step exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleGrid {
    pub m: u32,
    pub mw: u32,
    pub step_exp: u32,
}

impl OracleGrid {
    pub fn side(&self) -> usize {
        1 << self.m
    }

    fn h(&self) -> Q {
        q(1, self.m)
    }

    fn w(&self) -> Q {
        q(1, self.mw)
    }

    fn cell(&self, c: usize, r: usize) -> usize {
        c * self.side() + r
    }

    fn x(&self, c: usize) -> Q {
        q(2 * c as i128 + 1, self.m + 1)
    }

    fn base(&self, k: u32, base: u64) -> (Q, Q) {
        let l = self.mw - k;
        (q(base as i128, l), q(base as i128 + 1, l))
    }

    fn slope(&self, k: u32, j: u64) -> Q {
        q(2 * j as i128 + 1, k + 1)
    }

    #[cfg(test)]
    fn area(&self, s: &Shape) -> Q {
        q(1, 2 * self.mw - s.0)
    }

    /// The slab over column `c`, if the column centre lies in the base.
    fn slab(&self, s: &Shape, c: usize) -> Option<(Q, Q)> {
        let (a, b) = self.base(s.0, s.1);
        let x = self.x(c);
        if x < a || x >= b {
            return None;
        }
        let lo = self.slope(s.0, s.2) * x + int(s.3 as i128) * q(1, self.step_exp);
        Some((lo, lo + self.w()))
    }

    fn covers(&self, s: &Shape, c: usize, r: usize) -> bool {
        let y = q(2 * r as i128 + 1, self.m + 1);
        self.slab(s, c).is_some_and(|(lo, hi)| lo <= y && y < hi)
    }

    /// `|R ∩ cell|`.
    fn overlap(&self, s: &Shape, c: usize, r: usize) -> Q {
        let Some((lo, hi)) = self.slab(s, c) else { return Q::ZERO };
        let (a, b) = (q(r as i128, self.m), q(r as i128 + 1, self.m));
        let len = hi.min(b) - lo.max(a);
        if len.is_negative() {
            Q::ZERO
        } else {
            len * self.h()
        }
    }

    /// Nonzero `(cell, |R ∩ cell|)` pairs.
    fn overlaps(&self, s: &Shape) -> Vec<(usize, Q)> {
        let n = self.side();
        let mut out = Vec::new();
        for c in 0..n {
            for r in 0..n {
                let a = self.overlap(s, c, r);
                if !a.is_zero() {
                    out.push((self.cell(c, r), a));
                }
            }
        }
        out
    }

    /// Lowest slab bottom and highest slab top.
    fn extent(&self, s: &Shape) -> (Q, Q) {
        let slabs: Vec<(Q, Q)> = (0..self.side()).filter_map(|c| self.slab(s, c)).collect();
        let lo = slabs.iter().map(|p| p.0).min().expect("nonempty base");
        let hi = slabs.iter().map(|p| p.1).max().expect("nonempty base");
        (lo, hi)
    }

    fn base_inside(&self, s: &Shape, i: Node) -> bool {
        let (a, b) = self.base(s.0, s.1);
        let (c, d) = interval(i);
        c <= a && b <= d
    }
}

fn interval(n: Node) -> (Q, Q) {
    (q(n.1 as i128, n.0), q(n.1 as i128 + 1, n.0))
}

/// Every `(k, base, slope, offset)` that fits in the square and is `delta`-dense.
pub fn enumerate(g: &OracleGrid, v: &[Q], delta: Q) -> Vec<Shape> {
    let mut out = Vec::new();
    for k in 0..=g.mw {
        for base in 0..1u64 << (g.mw - k) {
            let (a, b) = g.base(k, base);
            let cols: Vec<usize> = (0..g.side()).filter(|&c| a <= g.x(c) && g.x(c) < b).collect();
            for slope in 0..1u64 << k {
                let (lo, hi) = (q(slope as i128, k), q(slope as i128 + 1, k));
                let n = cols.iter().filter(|&&c| lo <= v[c] && v[c] < hi).count();
                if int(n as i128) * g.h() * g.w() < delta * (b - a) * g.w() {
                    continue;
                }
                let mut offset = 0u64;
                loop {
                    let top = int(offset as i128) * q(1, g.step_exp) + g.slope(k, slope) * b + g.w();
                    if top > Q::ONE {
                        break;
                    }
                    out.push((k, base, slope, offset));
                    offset += 1;
                }
            }
        }
    }
    out
}

/// Averages of `f` over every member.
pub fn averages(g: &OracleGrid, members: &[Shape], f: &[Q]) -> Vec<Q> {
    members
        .iter()
        .map(|s| {
            let total: Q = g.overlaps(s).into_iter().map(|(x, a)| a * f[x]).sum();
            total.mul_pow2((2 * g.mw - s.0) as i32)
        })
        .collect()
}

/// `M f` and the argmax choice, lowest index on ties.
pub fn maximal(g: &OracleGrid, members: &[Shape], f: &[Q]) -> (Vec<Q>, Vec<Option<usize>>) {
    let avg = averages(g, members, f);
    let n = g.side();
    let mut best = vec![Q::ZERO; n * n];
    let mut choice = vec![None; n * n];
    for c in 0..n {
        for r in 0..n {
            let x = g.cell(c, r);
            for (i, s) in members.iter().enumerate() {
                if g.covers(s, c, r) && choice[x].map_or(true, |_| avg[i] > best[x]) {
                    best[x] = avg[i];
                    choice[x] = Some(i);
                }
            }
        }
    }
    (best, choice)
}

/// `sum over chosen x of weight(x) |Q ∩ cell| / (|Q| |cell|)`, for `x` passing `keep`.
pub fn adjoint(
    g: &OracleGrid,
    members: &[Shape],
    choice: &[Option<usize>],
    weight: &[Q],
    keep: impl Fn(&Shape) -> bool,
) -> Vec<Q> {
    let mut nu = vec![Q::ZERO; members.len()];
    for (x, c) in choice.iter().enumerate() {
        if let Some(i) = c {
            nu[*i] += weight[x] * g.h() * g.h();
        }
    }
    let mut out = vec![Q::ZERO; g.side() * g.side()];
    for (i, s) in members.iter().enumerate() {
        if nu[i].is_zero() || !keep(s) {
            continue;
        }
        let scale = nu[i].mul_pow2((2 * g.mw - s.0 + 2 * g.m) as i32);
        for (x, a) in g.overlaps(s) {
            out[x] += scale * a;
        }
    }
    out
}

fn indicator(set: &[bool]) -> Vec<Q> {
    set.iter().map(|&b| if b { Q::ONE } else { Q::ZERO }).collect()
}

/// `B_R^E` for every member: the average over `R` of `T*` of the cells of `E` whose
/// choice has base inside the base of `R`.
pub fn badness(g: &OracleGrid, members: &[Shape], choice: &[Option<usize>], e: &[bool]) -> Vec<Q> {
    let w = indicator(e);
    let mut cache: BTreeMap<(u32, u64), Vec<Q>> = BTreeMap::new();
    members
        .iter()
        .map(|s| {
            let node = (g.mw - s.0, s.1);
            let t = cache
                .entry(node)
                .or_insert_with(|| adjoint(g, members, choice, &w, |p| g.base_inside(p, node)));
            let total: Q = g.overlaps(s).into_iter().map(|(x, a)| a * t[x]).sum();
            total.mul_pow2((2 * g.mw - s.0) as i32)
        })
        .collect()
}

/// `[c - f len / 2, c + f len / 2]` clipped to `[0, 1]`, for the interval `k`.
fn dilate(k: Node, factor: i128) -> (Q, Q) {
    let (a, b) = interval(k);
    let c = (a + b).mul_pow2(-1);
    let half = (b - a) * int(factor).mul_pow2(-1);
    ((c - half).max(Q::ZERO), (c + half).min(Q::ONE))
}

/// Result of [`shrink`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleShrink {
    pub e_prime: Vec<bool>,
    pub windows: Vec<(Node, Vec<Node>)>,
    pub f_set: Vec<bool>,
    pub above_key: usize,
    pub failures: Vec<Shape>,
}

/// One shrinking step by exhaustive scan of `(I, K)`.
pub fn shrink(g: &OracleGrid, members: &[Shape], choice: &[Option<usize>], e: &[bool], lambda0: Q) -> OracleShrink {
    let n = g.side();
    let mut nu = vec![Q::ZERO; members.len()];
    for (x, c) in choice.iter().enumerate() {
        if let (Some(i), true) = (c, e[x]) {
            nu[*i] += g.h() * g.h();
        }
    }
    let chosen: Vec<usize> = (0..members.len()).filter(|&i| !nu[i].is_zero()).collect();
    let overlaps: BTreeMap<usize, Vec<(usize, Q)>> = chosen.iter().map(|&i| (i, g.overlaps(&members[i]))).collect();
    let extents: BTreeMap<usize, (Q, Q)> = chosen.iter().map(|&i| (i, g.extent(&members[i]))).collect();

    // int over I x [lo, hi) of T* restricted to choices with base in I and projection outside `class`
    let out_mass = |i: Node, (lo, hi): (Q, Q), (clo, chi): (Q, Q)| -> Q {
        let (a, b) = interval(i);
        let mut total = Q::ZERO;
        for &idx in &chosen {
            let s = &members[idx];
            if !g.base_inside(s, i) {
                continue;
            }
            let (elo, ehi) = extents[&idx];
            if clo <= elo && ehi <= chi {
                continue;
            }
            let mass: Q = overlaps[&idx]
                .iter()
                .filter(|(x, _)| {
                    let (c, r) = (x / n, x % n);
                    let (xc, y0, y1) = (g.x(c), q(r as i128, g.m), q(r as i128 + 1, g.m));
                    a <= xc && xc < b && lo <= y0 && y1 <= hi
                })
                .map(|(_, a)| *a)
                .sum();
            total += nu[idx] * mass.mul_pow2((2 * g.mw - s.0) as i32);
        }
        total
    };

    let mut windows = Vec::new();
    let mut e_prime = vec![false; n * n];
    for il in 0..=g.mw {
        for ii in 0..1u64 << il {
            let i = (il, ii);
            let ilen = q(1, il);
            let mut ks = Vec::new();
            for kl in 0..=g.m {
                for ki in 0..1u64 << kl {
                    let k = (kl, ki);
                    let kw = interval(k);
                    if out_mass(i, kw, dilate(k, 3)) < lambda0 * ilen * q(1, kl) {
                        continue;
                    }
                    let k3 = dilate(k, 3);
                    if out_mass(i, k3, dilate(k, 9)) < lambda0 * ilen * (k3.1 - k3.0) {
                        ks.push(k);
                    }
                }
            }
            for &k in &ks {
                let (lo, hi) = dilate(k, 3);
                let (a, b) = interval(i);
                for c in 0..n {
                    for r in 0..n {
                        let (y0, y1) = (q(r as i128, g.m), q(r as i128 + 1, g.m));
                        if a <= g.x(c) && g.x(c) < b && lo <= y0 && y1 <= hi {
                            e_prime[g.cell(c, r)] = true;
                        }
                    }
                }
            }
            if !ks.is_empty() {
                windows.push((i, ks));
            }
        }
    }

    let t = adjoint(g, members, choice, &indicator(e), |_| true);
    let (mt, _) = maximal(g, members, &t);
    let half = lambda0.mul_pow2(-1);
    let f_set = mt.iter().map(|v| *v >= half).collect();

    let key = lambda0 * int(20);
    let b = badness(g, members, choice, e);
    let above: Vec<usize> = (0..members.len()).filter(|&i| b[i] > key).collect();
    let mut failures = Vec::new();
    if !above.is_empty() {
        let bp = badness(g, members, choice, &e_prime);
        for &i in &above {
            let inside = g.overlaps(&members[i]).iter().all(|(x, _)| e_prime[*x]);
            if !(inside && b[i] <= key + bp[i]) {
                failures.push(members[i]);
            }
        }
    }
    OracleShrink { e_prime, windows, f_set, above_key: above.len(), failures }
}

/// Slope cells popular on `J` with their column measures.
fn popular(g: &OracleGrid, v: &[Q], delta: Q, j: Node, literal: bool) -> Vec<(Node, Q)> {
    let k = g.mw - j.0;
    let (a, b) = interval(j);
    let cols: Vec<usize> = (0..g.side()).filter(|&c| a <= g.x(c) && g.x(c) < b).collect();
    (0..1u64 << k)
        .filter_map(|i| {
            let (lo, hi) = if literal {
                let c = g.slope(k, i);
                (c - q(1, k), c + q(1, k))
            } else {
                (q(i as i128, k), q(i as i128 + 1, k))
            };
            let mu = int(cols.iter().filter(|&&c| lo <= v[c] && v[c] < hi).count() as i128) * g.h();
            (mu >= delta * (b - a)).then_some(((k, i), mu))
        })
        .collect()
}

fn node_contains(outer: Node, inner: Node) -> bool {
    inner.0 >= outer.0 && inner.1 >> (inner.0 - outer.0) == outer.1
}

/// `T(J)` for every `J` under `root` with nonempty assignment.
pub fn assignments(g: &OracleGrid, v: &[Q], delta: Q, root: Node, literal: bool) -> BTreeMap<Node, Vec<(Node, Q)>> {
    let mut out: BTreeMap<Node, Vec<(Node, Q)>> = BTreeMap::new();
    for l in root.0..=g.mw {
        for idx in 0..1u64 << l {
            let j = (l, idx);
            if !node_contains(root, j) {
                continue;
            }
            let taken: Vec<Node> = out
                .iter()
                .filter(|(k, _)| node_contains(**k, j) && **k != j)
                .flat_map(|(_, ts)| ts.iter().map(|(s, _)| *s))
                .collect();
            let t: Vec<(Node, Q)> = popular(g, v, delta, j, literal)
                .into_iter()
                .filter(|(s, _)| !taken.iter().any(|u| node_contains(*s, *u)))
                .collect();
            if !t.is_empty() {
                out.insert(j, t);
            }
        }
    }
    out
}

fn mu(assign: &BTreeMap<Node, Vec<(Node, Q)>>, j: Node) -> Q {
    assign.get(&j).map_or(Q::ZERO, |t| t.iter().map(|(_, m)| *m).sum())
}

/// Maximal `J` under `root` whose accumulated `sum mu_K / |K|` reaches 2, left to right.
pub fn stopping(g: &OracleGrid, assign: &BTreeMap<Node, Vec<(Node, Q)>>, root: Node) -> Vec<Node> {
    let sum = |j: Node| -> Q { (root.0..=j.0).map(|l| mu(assign, (l, j.1 >> (j.0 - l))).mul_pow2(l as i32)).sum() };
    let two = int(2);
    let mut out = Vec::new();
    for l in root.0..=g.mw {
        for idx in 0..1u64 << l {
            let j = (l, idx);
            if !node_contains(root, j) || sum(j) < two {
                continue;
            }
            if (root.0..l).any(|a| sum((a, idx >> (l - a))) >= two) {
                continue;
            }
            out.push(j);
        }
    }
    out.sort_by_key(|j| interval(*j).0);
    out
}

/// `Omega` levels: a good pair sits at level `n` when exactly `n` good pairs lie above it.
pub fn omega(assign: &BTreeMap<Node, Vec<(Node, Q)>>, stop: &[Node]) -> Vec<Vec<Pair>> {
    let good: Vec<Pair> = assign
        .iter()
        .flat_map(|(j, ts)| ts.iter().map(move |(s, _)| (*j, *s)))
        .filter(|(j, _)| !stop.iter().any(|s| node_contains(*s, *j)))
        .collect();
    let below = |p: &Pair, r: &Pair| (p.0 == r.0 && p.1 .1 < r.1 .1) || (p.0 != r.0 && node_contains(r.0, p.0));
    let mut levels: Vec<Vec<Pair>> = Vec::new();
    for p in &good {
        let n = good.iter().filter(|r| below(p, r)).count();
        if levels.len() <= n {
            levels.resize(n + 1, Vec::new());
        }
        levels[n].push(*p);
    }
    for l in &mut levels {
        l.sort();
    }
    levels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> OracleGrid {
        OracleGrid { m: 3, mw: 1, step_exp: 1 }
    }

    #[test]
    fn overlaps_sum_to_area() {
        let g = grid();
        for s in enumerate(&g, &vec![Q::ZERO; 8], Q::ONE) {
            let total: Q = g.overlaps(&s).iter().map(|(_, a)| *a).sum();
            assert_eq!(total, g.area(&s));
            let covered = (0..8).flat_map(|c| (0..8).map(move |r| (c, r))).filter(|&(c, r)| g.covers(&s, c, r)).count();
            assert_eq!(int(covered as i128) * g.h() * g.h(), g.area(&s));
        }
    }

    #[test]
    fn constant_field_keeps_only_slope_zero() {
        let g = grid();
        let fam = enumerate(&g, &vec![Q::ZERO; 8], Q::ONE);
        assert!(!fam.is_empty() && fam.iter().all(|s| s.2 == 0));
    }

    #[test]
    fn empty_family_is_uncovered() {
        let g = grid();
        let (best, choice) = maximal(&g, &[], &vec![Q::ONE; 64]);
        assert!(best.iter().all(|v| v.is_zero()) && choice.iter().all(Option::is_none));
    }

    #[test]
    fn omega_counts_chain() {
        let mut assign = BTreeMap::new();
        assign.insert((0, 0), vec![((1, 0), Q::ONE), ((1, 1), Q::ONE)]);
        assign.insert((1, 0), vec![((2, 0), Q::ONE)]);
        let lv = omega(&assign, &[]);
        assert_eq!(lv, vec![vec![((0, 0), (1, 1))], vec![((0, 0), (1, 0))], vec![((1, 0), (2, 0))]]);
    }
}
