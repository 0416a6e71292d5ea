//! Parameter sweeps, log-log fits and experiment configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dyadic::DyadicRational;
use crate::error::{Error, Result};
use crate::family::{enumerate_family, is_good_collection, FamilyParams, RectangleFamily};
use crate::grid::{GridFunction, GridSpec, OffsetStep};
use crate::instances::{
    delta_depth, distinct_slope_collections, make_kakeya_instance, make_square_instance, random_field,
    random_function,
};
use crate::maximal::{estimate_norm, lp_ratio};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SweepKind {
    Delta,
    LogN,
    Lp,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(SweepKind::Delta),
            "logN" | "logn" => Ok(SweepKind::LogN),
            "lp" => Ok(SweepKind::Lp),
            _ => Err(Error::Parse(format!("unknown sweep {s:?}"))),
        }
    }
}

/// Settings shared by the sweeps and the command line.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Grid exponent; when absent each sweep uses its own rule.
    pub m: Option<u32>,
    pub mw: Option<u32>,
    pub offstep: OffsetStep,
    pub deltas: Vec<DyadicRational>,
    pub ps: Vec<f64>,
    pub ns: Vec<usize>,
    pub seed: u64,
    /// Random instances per sweep point.
    pub seeds: usize,
    pub ascent_iters: usize,
    pub lambda0: Option<DyadicRational>,
    pub sweep: Option<SweepKind>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            m: None,
            mw: None,
            offstep: OffsetStep::W,
            deltas: (3..=8).map(|n| DyadicRational::new(1, n)).collect(),
            ps: vec![1.5],
            ns: (1..=6).map(|k| 1 << k).collect(),
            seed: 0,
            seeds: 1,
            ascent_iters: 6,
            lambda0: None,
            sweep: None,
            out: None,
        }
    }
}

fn list<T: FromStr>(value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("bad list entry {s:?}"))))
        .collect()
}

fn one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse(format!("bad value for {key}: {value:?}")))
}

pub fn parse_offstep(s: &str) -> Result<OffsetStep> {
    match s {
        "w" => Ok(OffsetStep::W),
        "w2" => Ok(OffsetStep::HalfW),
        _ => Err(Error::Parse(format!("offstep must be w or w2, got {s:?}"))),
    }
}

impl ExperimentConfig {
    /// Sets one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "m" => self.m = Some(one(key, value)?),
            "mw" => self.mw = Some(one(key, value)?),
            "offstep" => self.offstep = parse_offstep(value.trim())?,
            "delta" | "deltas" => {
                let ds: Vec<DyadicRational> = list(value)?;
                if ds.iter().any(|d| d.is_negative() || d.is_zero() || *d > DyadicRational::ONE) {
                    return Err(Error::Parse("delta must lie in (0, 1]".into()));
                }
                self.deltas = ds;
            }
            "p" | "ps" => self.ps = list(value)?,
            "n" | "ns" => self.ns = list(value)?,
            "seed" => self.seed = one(key, value)?,
            "seeds" => self.seeds = one(key, value)?,
            "ascent_iters" => self.ascent_iters = one(key, value)?,
            "lambda0" => self.lambda0 = Some(one(key, value)?),
            "sweep" => self.sweep = Some(value.trim().parse()?),
            "out" => self.out = Some(PathBuf::from(value.trim())),
            _ => return Err(Error::Parse(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Plain-text `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

/// Least-squares fit of `y = a x^b` on log-log data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerFit {
    pub a: f64,
    pub b: f64,
    /// `log y - log(a x^b)` per point.
    pub residuals: Vec<f64>,
    /// Fewer than two distinct abscissae.
    pub degenerate: bool,
}

pub fn fit_power(xs: &[f64], ys: &[f64]) -> PowerFit {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (a, b, degenerate) = linear_fit(&lx, &ly);
    let residuals = lx.iter().zip(&ly).map(|(x, y)| y - (a + b * x)).collect();
    PowerFit { a: a.exp(), b, residuals, degenerate }
}

/// `y = a + b x` by least squares; `(mean y, 0, true)` when degenerate.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, bool) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0, true);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= f64::EPSILON * n {
        return (my, 0.0, true);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    (my - b * mx, b, false)
}

/// One CSV row of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub experiment: String,
    pub delta: Option<DyadicRational>,
    pub n: Option<usize>,
    pub p: Option<f64>,
    /// Best ratio at this point.
    pub ratio: f64,
    /// Kakeya and random-field ratios of a delta sweep.
    pub kakeya: Option<f64>,
    pub random: Option<f64>,
    pub reference: f64,
    pub fitted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
    pub fit: PowerFit,
}

impl SweepReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("experiment,delta,n,p,ratio,kakeya,random,reference,fitted\n");
        let opt = |x: Option<f64>| x.map(|x| format!("{x:.9}")).unwrap_or_default();
        for r in &self.rows {
            let delta = r.delta.map(|d| d.to_string()).unwrap_or_default();
            let n = r.n.map(|n| n.to_string()).unwrap_or_default();
            let p = r.p.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{:.9},{},{},{:.9},{:.9}",
                r.experiment,
                delta,
                n,
                p,
                r.ratio,
                opt(r.kakeya),
                opt(r.random),
                r.reference,
                r.fitted
            );
        }
        s
    }

    /// `key = value` summary of the fit.
    pub fn summary(&self) -> String {
        let res: Vec<String> = self.fit.residuals.iter().map(|r| format!("{r:.6}")).collect();
        format!(
            "fit_a = {:.6}\nfit_b = {:.6}\nfit_degenerate = {}\nfit_residuals = {}\n",
            self.fit.a,
            self.fit.b,
            self.fit.degenerate,
            res.join(",")
        )
    }
}

/// Best ratio of the Kakeya instance at `delta` with `m = log2(1/delta) + 3`.
pub fn kakeya_point(delta: DyadicRational, ascent_iters: usize) -> Result<f64> {
    let n = delta_depth(delta)?;
    let (v, f) = make_kakeya_instance(n + 3, delta)?;
    let fam = enumerate_family(&FamilyParams::new(v.spec(), delta)?, &v)?;
    Ok(estimate_norm(&fam, &[f], ascent_iters)?.best_ratio)
}

/// Best ratio over `seeds` random fields at the Kakeya grid for `delta`.
pub fn random_point(delta: DyadicRational, seed: u64, seeds: usize, ascent_iters: usize) -> Result<f64> {
    let n = delta_depth(delta)?;
    let spec = GridSpec::new(n + 3, n, OffsetStep::HalfW)?;
    let mut best = 0.0f64;
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        let v = random_field(spec, &mut rng);
        let fam = enumerate_family(&FamilyParams::new(spec, delta)?, &v)?;
        if fam.is_empty() {
            continue;
        }
        let f = random_function(spec, &mut rng);
        best = best.max(estimate_norm(&fam, &[f], ascent_iters)?.best_ratio);
    }
    Ok(best)
}

/// Kakeya and random-field ratios per `delta`, fitted as `a (log2(1/delta))^b` on the
/// per-`delta` best of the two.
pub fn sweep_delta(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let points: Vec<(DyadicRational, f64, f64)> = cfg
        .deltas
        .par_iter()
        .map(|&d| {
            Ok((
                d,
                kakeya_point(d, cfg.ascent_iters)?,
                random_point(d, cfg.seed, cfg.seeds, cfg.ascent_iters)?,
            ))
        })
        .collect::<Result<_>>()?;
    let logs: Vec<f64> = points.iter().map(|(d, _, _)| f64::from(d.exponent())).collect();
    let best: Vec<f64> = points.iter().map(|(_, k, r)| k.max(*r)).collect();
    let fit = fit_power(&logs, &best);
    let rows = points
        .iter()
        .zip(logs.iter().zip(&best))
        .map(|((d, k, r), (l, b))| SweepRow {
            experiment: "delta".into(),
            delta: Some(*d),
            n: None,
            p: None,
            ratio: *b,
            kakeya: Some(*k),
            random: Some(*r),
            reference: l.powf(1.5),
            fitted: fit.a * l.powf(fit.b),
        })
        .collect();
    Ok(SweepReport { kind: SweepKind::Delta, rows, fit })
}

/// `||M f||_p / ||f||_p` on the square instance against `delta^(1 - 2/p)`, with
/// `m = log2(1/delta) + 4`.
pub fn sweep_lp(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let grid: Vec<(DyadicRational, f64)> =
        cfg.deltas.iter().flat_map(|&d| cfg.ps.iter().map(move |&p| (d, p))).collect();
    let ratios: Vec<f64> = cfg
        .deltas
        .par_iter()
        .map(|&d| {
            let n = delta_depth(d)?;
            let (v, f) = make_square_instance(n + 4, d)?;
            let fam = enumerate_family(&FamilyParams::new(v.spec(), d)?, &v)?;
            cfg.ps.iter().map(|&p| lp_ratio(&f, &fam, p)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let refs: Vec<f64> = grid.iter().map(|(d, p)| d.to_f64().powf(1.0 - 2.0 / p)).collect();
    let fit = fit_power(&refs, &ratios);
    let rows = grid
        .iter()
        .zip(ratios.iter().zip(&refs))
        .map(|(&(d, p), (&ratio, &reference))| SweepRow {
            experiment: "square".into(),
            delta: Some(d),
            n: None,
            p: Some(p),
            ratio,
            kakeya: None,
            random: None,
            reference,
            fitted: fit.a * reference.powf(fit.b),
        })
        .collect();
    Ok(SweepReport { kind: SweepKind::Lp, rows, fit })
}

/// Union of the collections after checking that each is good.
pub fn union_of_good(collections: &[RectangleFamily]) -> Result<RectangleFamily> {
    let first = collections.first().ok_or_else(|| Error::InvalidArgument("no collections".into()))?;
    let mut all = RectangleFamily::empty(first.params());
    for c in collections {
        let witness = is_good_collection(c);
        if !witness.good {
            return Err(Error::NotGood(serde_json::to_string(&witness).unwrap_or_default()));
        }
        all = all.union(c)?;
    }
    Ok(all)
}

/// Best ratio of `M` over the union of `collections`, from seeded random starts.
pub fn multi_collection_experiment(
    collections: &[RectangleFamily],
    seed: u64,
    seeds: usize,
    ascent_iters: usize,
) -> Result<f64> {
    let fam = union_of_good(collections)?;
    let spec = fam.spec();
    let starts: Vec<GridFunction> = (0..seeds.max(1))
        .map(|s| random_function(spec, &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64))))
        .collect();
    Ok(estimate_norm(&fam, &starts, ascent_iters)?.best_ratio)
}

/// Grid of the `log N` sweep: `m = 9`, `mw = 7`, where 127 full-length slope cells fit.
pub fn logn_spec(cfg: &ExperimentConfig) -> Result<GridSpec> {
    let m = cfg.m.unwrap_or(9);
    GridSpec::new(m, cfg.mw.unwrap_or(m - 2), cfg.offstep)
}

/// Ratio for `N` distinct-slope collections, fitted as `a (1 + log2 N)^b`.
pub fn sweep_logn(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let spec = logn_spec(cfg)?;
    let ratios: Vec<f64> = cfg
        .ns
        .par_iter()
        .map(|&n| {
            let cols = distinct_slope_collections(spec, n)?;
            multi_collection_experiment(&cols, cfg.seed, cfg.seeds, cfg.ascent_iters)
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = cfg.ns.iter().map(|&n| 1.0 + (n as f64).log2()).collect();
    let fit = fit_power(&xs, &ratios);
    let rows = cfg
        .ns
        .iter()
        .zip(ratios.iter().zip(&xs))
        .map(|(&n, (&ratio, &x))| SweepRow {
            experiment: "logN".into(),
            delta: None,
            n: Some(n),
            p: None,
            ratio,
            kakeya: None,
            random: None,
            reference: x,
            fitted: fit.a * x.powf(fit.b),
        })
        .collect();
    Ok(SweepReport { kind: SweepKind::LogN, rows, fit })
}

pub fn run_sweep(kind: SweepKind, cfg: &ExperimentConfig) -> Result<SweepReport> {
    match kind {
        SweepKind::Delta => sweep_delta(cfg),
        SweepKind::LogN => sweep_logn(cfg),
        SweepKind::Lp => sweep_lp(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> DyadicRational {
        s.parse().unwrap()
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::parse("# sweep\nm = 6\ndelta = 1/8, 1/16\noffstep = w2 # half\nsweep = lp\n").unwrap();
        assert_eq!(cfg.m, Some(6));
        assert_eq!(cfg.deltas, vec![d("1/8"), d("1/16")]);
        assert_eq!(cfg.offstep, OffsetStep::HalfW);
        assert_eq!(cfg.sweep, Some(SweepKind::Lp));
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("m 4").is_err());
        assert!(ExperimentConfig::parse("delta = 3/2").is_err());
    }

    #[test]
    fn exact_power_fit() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.5)).collect();
        let fit = fit_power(&xs, &ys);
        assert!((fit.a - 3.0).abs() < 1e-12 && (fit.b - 0.5).abs() < 1e-12);
        assert!(!fit.degenerate);
        assert!(fit_power(&[2.0], &[1.0]).degenerate);
    }

    #[test]
    fn single_delta_is_degenerate() {
        let cfg = ExperimentConfig { deltas: vec![d("1/8")], ascent_iters: 1, ..Default::default() };
        let rep = sweep_delta(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.fit.degenerate);
        assert_eq!(rep.csv().lines().count(), 2);
        let row = &rep.rows[0];
        assert_eq!(row.ratio, row.kakeya.unwrap().max(row.random.unwrap()));
    }

    #[test]
    fn square_sweep_shape() {
        let cfg = ExperimentConfig { deltas: vec![d("1/8"), d("1/16")], ps: vec![1.5, 2.0], ..Default::default() };
        let rep = sweep_lp(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert_eq!(rep.rows[1].p, Some(2.0));
        assert!(rep.rows.iter().all(|r| r.ratio > 0.0));
    }

    #[test]
    fn duplicate_collections_do_not_change_ratio() {
        let spec = GridSpec::new(6, 4, OffsetStep::W).unwrap();
        let cols = distinct_slope_collections(spec, 2).unwrap();
        let doubled: Vec<RectangleFamily> = cols.iter().chain(cols.iter()).cloned().collect();
        let a = multi_collection_experiment(&cols, 3, 1, 2).unwrap();
        let b = multi_collection_experiment(&doubled, 3, 1, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_collection() {
        let spec = GridSpec::new(5, 3, OffsetStep::W).unwrap();
        let v = crate::grid::OneVarField::identity(spec);
        let fam = enumerate_family(&FamilyParams::new(spec, d("1/8")).unwrap(), &v).unwrap();
        assert!(matches!(union_of_good(&[fam]), Err(Error::NotGood(_))));
    }
}
