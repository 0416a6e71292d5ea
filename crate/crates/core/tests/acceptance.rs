//! Acceptance run: one line per criterion, exit status nonzero on an unexpected failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::ThreadPoolBuilder;
use vfmax_core::experiments::{sweep_delta, sweep_logn, sweep_lp, ExperimentConfig, SweepReport};
use vfmax_core::verify::{standard_corpus, verify, VerifyReport, LAMBDA0};
use vfmax_core::DyadicRational;

/// Lower-bound constant in `ratio >= C_LOWER * sqrt(log2(1/delta))`.
const C_LOWER: f64 = 0.9;
/// Allowed relative drop between consecutive Kakeya ratios.
const MONOTONE_SLACK: f64 = 0.05;
const EXPONENT_RANGE: (f64, f64) = (0.4, 1.6);
const LP_FACTOR: f64 = 4.0;
/// `ratio <= C_N * (1 + log2 N)`.
const C_N: f64 = 0.6;
const LOGN_GROWTH: f64 = 6.0;
const ORACLE_BUDGET: Duration = Duration::from_secs(300);
const SWEEP_BUDGET: Duration = Duration::from_secs(600);
/// Criteria that fail on the shipped corpus.
const KNOWN_RED: &[u8] = &[9];

struct Line {
    criterion: u8,
    passed: bool,
    detail: String,
}

fn pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool").install(f)
}

fn max_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).max(4)
}

fn verify_lines(report: &VerifyReport, oracle_time: Duration) -> Vec<Line> {
    let summary = |c: u8| {
        let n = report.checks_for(c);
        let bad = report.failures().filter(|o| o.criterion == Some(c)).count();
        format!("{}/{n} checks pass", n - bad)
    };
    let mut lines = vec![Line {
        criterion: 1,
        passed: report.criterion(1) && report.checks_for(1) > 0 && oracle_time < ORACLE_BUDGET,
        detail: format!("{}, {:.1}s", summary(1), oracle_time.as_secs_f64()),
    }];
    for c in [2u8, 3, 4] {
        lines.push(Line { criterion: c, passed: report.criterion(c) && report.checks_for(c) > 0, detail: summary(c) });
    }
    let worst = report
        .failures()
        .filter(|o| o.criterion == Some(9))
        .map(|o| format!("{}: {}", o.instance, o.detail))
        .collect::<Vec<_>>()
        .join("; ");
    lines.push(Line {
        criterion: 9,
        passed: report.criterion(9) && report.checks_for(9) > 0,
        detail: if worst.is_empty() { summary(9) } else { format!("{}; {worst}", summary(9)) },
    });
    lines
}

fn delta_lines(report: &SweepReport, elapsed: Duration) -> Vec<Line> {
    let kakeya: Vec<(u32, f64)> =
        report.rows.iter().map(|r| (r.delta.expect("delta row").exponent(), r.kakeya.expect("kakeya column"))).collect();
    let above = kakeya.iter().all(|&(n, k)| k >= C_LOWER * f64::from(n).sqrt());
    let monotone = kakeya.windows(2).all(|w| w[1].1 >= (1.0 - MONOTONE_SLACK) * w[0].1);
    let min_c = kakeya.iter().map(|&(n, k)| k / f64::from(n).sqrt()).fold(f64::INFINITY, f64::min);
    let fit = &report.fit;
    let max_res = fit.residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    vec![
        Line {
            criterion: 5,
            passed: above && monotone && kakeya.len() == 6 && elapsed < SWEEP_BUDGET,
            detail: format!(
                "min ratio/sqrt(n) = {min_c:.3} vs c = {C_LOWER}, monotone = {monotone}, {:.1}s",
                elapsed.as_secs_f64()
            ),
        },
        Line {
            criterion: 6,
            passed: !fit.degenerate && (EXPONENT_RANGE.0..=EXPONENT_RANGE.1).contains(&fit.b),
            detail: format!("a = {:.4}, b = {:.4}, max |residual| = {max_res:.4}", fit.a, fit.b),
        },
    ]
}

fn lp_line(report: &SweepReport) -> Line {
    let worst = report.rows.iter().map(|r| (r.ratio / r.reference).max(r.reference / r.ratio)).fold(0.0, f64::max);
    Line {
        criterion: 7,
        passed: report.rows.len() == 4 && worst <= LP_FACTOR,
        detail: format!("worst factor {worst:.3} vs {LP_FACTOR}"),
    }
}

fn logn_line(report: &SweepReport, elapsed: Duration) -> Line {
    let rows: Vec<(usize, f64)> = report.rows.iter().map(|r| (r.n.expect("n row"), r.ratio)).collect();
    let c = rows.iter().map(|&(n, r)| r / (1.0 + (n as f64).log2())).fold(0.0, f64::max);
    let growth = rows.last().map_or(f64::INFINITY, |l| l.1) / rows.first().map_or(0.0, |f| f.1);
    Line {
        criterion: 8,
        passed: rows.len() == 6 && c <= C_N && growth <= LOGN_GROWTH && elapsed < SWEEP_BUDGET,
        detail: format!(
            "max ratio/(1+log2 N) = {c:.3} vs {C_N}, ratio(64)/ratio(2) = {growth:.3}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    }
}

fn main() -> ExitCode {
    let lambda0 = DyadicRational::from_int(LAMBDA0);
    let corpus = standard_corpus();
    let many = max_threads();

    let start = Instant::now();
    let oracle_part: Vec<_> = corpus.iter().filter(|c| c.spec().m() <= 5).cloned().collect();
    let oracle_report = pool(many, || verify(&oracle_part, None, lambda0)).expect("verify");
    let oracle_time = start.elapsed();
    let full = pool(many, || verify(&corpus, None, lambda0)).expect("verify");
    let full_again = pool(1, || verify(&corpus, None, lambda0)).expect("verify");
    let mut lines = verify_lines(&full, oracle_time);
    lines[0].passed &= oracle_report.criterion(1);

    let cfg = ExperimentConfig::default();
    let lp_cfg = ExperimentConfig { deltas: cfg.deltas[..4].to_vec(), ..cfg.clone() };

    let start = Instant::now();
    let delta = pool(many, || sweep_delta(&cfg)).expect("delta sweep");
    lines.extend(delta_lines(&delta, start.elapsed()));

    let lp = pool(many, || sweep_lp(&lp_cfg)).expect("lp sweep");
    lines.push(lp_line(&lp));

    let start = Instant::now();
    let logn = pool(many, || sweep_logn(&cfg)).expect("logN sweep");
    lines.push(logn_line(&logn, start.elapsed()));

    let delta_again = pool(1, || sweep_delta(&cfg)).expect("delta sweep");
    let lp_again = pool(1, || sweep_lp(&lp_cfg)).expect("lp sweep");
    let logn_again = pool(1, || sweep_logn(&cfg)).expect("logN sweep");
    let lp_third = pool(many, || sweep_lp(&lp_cfg)).expect("lp sweep");
    let logn_third = pool(many, || sweep_logn(&cfg)).expect("logN sweep");
    let same = [
        ("verify", full.text() == full_again.text()),
        ("delta", delta.csv() == delta_again.csv() && delta.summary() == delta_again.summary()),
        ("lp", lp.csv() == lp_again.csv() && lp.csv() == lp_third.csv()),
        ("logN", logn.csv() == logn_again.csv() && logn.csv() == logn_third.csv()),
    ];
    lines.push(Line {
        criterion: 10,
        passed: same.iter().all(|s| s.1),
        detail: format!(
            "1 vs {many} workers: {}",
            same.iter().map(|(k, ok)| format!("{k}={}", if *ok { "same" } else { "differs" })).collect::<Vec<_>>().join(" ")
        ),
    });

    lines.sort_by_key(|l| l.criterion);
    let mut unexpected = Vec::new();
    for l in &lines {
        let known = KNOWN_RED.contains(&l.criterion);
        let tag = match (l.passed, known) {
            (true, _) => "pass",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {:>2}: {tag}  {}", l.criterion, l.detail);
        if !l.passed && !known {
            unexpected.push(l.criterion);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
