//! Verification suites: Monte Carlo and closed-form checks of the
//! selection variance bound, SNR amplification, truncated-normal
//! identities, the inverse Mills ratio, and controller stability/tracking.
//! Results stream into a CSV report; the command exits 0 only if every row
//! passes.

use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use tandem_core::stats::{mills_ratio, normal_pdf};
use tandem_core::theory::{
    conditional_stats, stability_scan, tail_variance_probe, theorem_bound,
    track_uniform_surrogate, truncated_variance_bound_check, verify_mean_shift, verify_snr,
    BivariateModel, SelectionExperiment, StabilityScanConfig, SurrogateDistribution,
    UniformSurrogate,
};
use tandem_core::DgsConfig;

/// One report row.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub suite: &'static str,
    pub case: String,
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    pub passed: bool,
}

impl CheckRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{:.6e},{:.3e},{:.6e},{}",
            self.suite, self.case, self.estimate, self.se, self.bound, self.passed
        )
    }
}

pub const SUITES: &[&str] = &["theorem1", "snr", "truncated", "mills", "stability", "all"];

const MC_SAMPLES: usize = 1_000_000;

/// Variance-reduction bound over the (ρ, p) grid: the conditional variance
/// ratio must not exceed 1 − ρ²(1−p) within 3 standard errors.
pub fn theorem1_suite(seed: u64) -> Vec<CheckRow> {
    let cells: Vec<(f64, f64)> = [0.3, 0.6, 0.9]
        .iter()
        .flat_map(|&rho| [0.1, 0.25, 0.5].iter().map(move |&p| (rho, p)))
        .collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(i, &(rho, p))| {
            let exp = SelectionExperiment {
                model: BivariateModel::standard(rho),
                selection_fraction: p,
                samples: MC_SAMPLES,
                seed: seed.wrapping_add(i as u64),
            };
            let stats = conditional_stats(&exp).expect("experiment sized for selection");
            let bound = theorem_bound(rho, p);
            CheckRow {
                suite: "theorem1",
                case: format!("rho={rho};p={p}"),
                estimate: stats.cond_var,
                se: stats.se_var,
                bound,
                passed: stats.cond_var <= bound + 3.0 * stats.se_var,
            }
        })
        .collect()
}

/// SNR amplification at the two reference cells; the selected/baseline SNR
/// ratio must exceed 1/(1 − ρ²(1−p)).
pub fn snr_suite(seed: u64) -> Vec<CheckRow> {
    [(0.8, 0.25), (0.9, 0.1)]
        .par_iter()
        .enumerate()
        .map(|(i, &(rho, p))| {
            let model = BivariateModel { mean_r: 1.0, ..BivariateModel::standard(rho) };
            let exp = SelectionExperiment {
                model,
                selection_fraction: p,
                samples: MC_SAMPLES,
                seed: seed.wrapping_add(100 + i as u64),
            };
            let baseline = SelectionExperiment { selection_fraction: 1.0, ..exp };
            let report = verify_snr(&exp, &baseline).expect("valid SNR experiment");
            CheckRow {
                suite: "snr",
                case: format!("rho={rho};p={p}"),
                estimate: report.ratio,
                se: report.se_ratio,
                bound: report.floor,
                passed: report.pass,
            }
        })
        .collect()
}

/// Truncated-normal tail variance: Var(Z | Z > z₁₋ₚ) ≤ p, with the
/// closed-form anchor 1 − 2/π at p = 0.5 and a small-p probe.
pub fn truncated_suite(seed: u64) -> Vec<CheckRow> {
    let mut rows: Vec<CheckRow> = [0.1, 0.25, 0.5]
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let report = truncated_variance_bound_check(p, MC_SAMPLES, seed.wrapping_add(200 + i as u64))
                .expect("valid bound check");
            CheckRow {
                suite: "truncated",
                case: format!("p={p}"),
                estimate: report.estimate,
                se: report.se,
                bound: report.bound,
                passed: report.pass,
            }
        })
        .collect();

    // Anchor: Var(Z | Z > 0) = 1 − 2/π.
    let half = truncated_variance_bound_check(0.5, MC_SAMPLES, seed.wrapping_add(210))
        .expect("valid bound check");
    let anchor = 1.0 - 2.0 / std::f64::consts::PI;
    rows.push(CheckRow {
        suite: "truncated",
        case: "anchor-p=0.5".into(),
        estimate: half.estimate,
        se: half.se,
        bound: anchor,
        passed: (half.estimate - anchor).abs() <= 3.0 * half.se,
    });

    // Deep-tail probe outside the claimed regime, small p for study.
    let deep = tail_variance_probe(0.01, 4 * MC_SAMPLES, seed.wrapping_add(211))
        .expect("valid probe");
    rows.push(CheckRow {
        suite: "truncated",
        case: "probe-p=0.01".into(),
        estimate: deep.estimate,
        se: deep.se,
        bound: deep.bound,
        passed: deep.pass,
    });
    rows
}

/// Inverse Mills ratio: the λ(0) constant, a quadrature-checked tail value,
/// monotonicity, and the λ(α) > α inequality.
pub fn mills_suite() -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let lambda0 = mills_ratio(0.0);
    let expected0 = (2.0 / std::f64::consts::PI).sqrt();
    rows.push(CheckRow {
        suite: "mills",
        case: "lambda(0)".into(),
        estimate: lambda0,
        se: 0.0,
        bound: expected0,
        passed: (lambda0 - expected0).abs() < 1e-4,
    });

    // Simpson quadrature of the tail as an independent oracle for λ(5).
    let (a, b, n) = (5.0f64, 45.0f64, 40_000usize);
    let h = (b - a) / n as f64;
    let mut tail = normal_pdf(a) + normal_pdf(b);
    for i in 1..n {
        tail += if i % 2 == 1 { 4.0 } else { 2.0 } * normal_pdf(a + i as f64 * h);
    }
    tail *= h / 3.0;
    let oracle = normal_pdf(5.0) / tail;
    let lambda5 = mills_ratio(5.0);
    rows.push(CheckRow {
        suite: "mills",
        case: "lambda(5)-vs-quadrature".into(),
        estimate: lambda5,
        se: 0.0,
        bound: oracle,
        passed: (lambda5 - oracle).abs() < 1e-3,
    });

    let mut monotone = true;
    let mut exceeds_alpha = true;
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=600 {
        let alpha = -8.0 + i as f64 * 0.08; // up to 40, across the tail switch
        let lambda = mills_ratio(alpha);
        monotone &= lambda > prev;
        exceeds_alpha &= lambda > alpha;
        prev = lambda;
    }
    rows.push(CheckRow {
        suite: "mills",
        case: "monotone-on-grid".into(),
        estimate: monotone as u8 as f64,
        se: 0.0,
        bound: 1.0,
        passed: monotone,
    });
    rows.push(CheckRow {
        suite: "mills",
        case: "lambda-exceeds-alpha".into(),
        estimate: exceeds_alpha as u8 as f64,
        se: 0.0,
        bound: 1.0,
        passed: exceeds_alpha,
    });

    // Mean-shift closed form against Monte Carlo at ρ ∈ {0, 0.6, 1}.
    for (i, rho) in [0.0, 0.6, 1.0].into_iter().enumerate() {
        let exp = SelectionExperiment {
            model: BivariateModel::standard(rho),
            selection_fraction: 0.25,
            samples: MC_SAMPLES,
            seed: 300 + i as u64,
        };
        let report = verify_mean_shift(&exp).expect("valid mean-shift experiment");
        rows.push(CheckRow {
            suite: "mills",
            case: format!("mean-shift-rho={rho}"),
            estimate: report.empirical,
            se: report.se,
            bound: report.predicted,
            passed: report.pass,
        });
    }
    rows
}

/// Threshold-controller checks: quantile tracking of the damped controller
/// against a stationary uniform surrogate, and the linearized-stability
/// scan of the undamped recursion across a geometric gain ladder.
pub fn stability_suite(seed: u64) -> Vec<CheckRow> {
    let mut rows = Vec::new();

    // Tracking: batch-observed pass rates at the default controller gains.
    let config = DgsConfig::default();
    let (thresholds, pass_rates) = track_uniform_surrogate(&config, 2000, 36, seed ^ 0x5bd1e995);
    let target = 1.75;
    let entered = thresholds
        .iter()
        .take(500)
        .position(|t| (t - target).abs() <= 0.05);
    // Post-entry excursions: batch noise jitters single updates, so hold a
    // looser hard band after entry; the pass-rate check below carries the
    // 0.05 criterion.
    let stays = entered
        .is_some_and(|k| thresholds[k..].iter().all(|t| (t - target).abs() <= 0.1));
    rows.push(CheckRow {
        suite: "stability",
        case: "tracking-entry<=500".into(),
        estimate: entered.map_or(f64::INFINITY, |k| k as f64),
        se: 0.0,
        bound: 500.0,
        passed: entered.is_some() && stays,
    });
    let trailing: f64 = pass_rates[pass_rates.len() - 200..].iter().sum::<f64>() / 200.0;
    rows.push(CheckRow {
        suite: "stability",
        case: "tracking-trailing-pass-rate".into(),
        estimate: trailing,
        se: 0.0,
        bound: config.target_pass_rate,
        passed: (trailing - config.target_pass_rate).abs() <= 0.05,
    });

    // Stability scan: √2-spaced gains over two decades around the boundary.
    let gains: Vec<f64> = (0..15).map(|k| 0.05 * 2f64.powf(k as f64 / 2.0)).collect();
    let dist = UniformSurrogate { lo: 1.0, hi: 2.0 };
    let scan = StabilityScanConfig::default();
    let points = stability_scan(&dist, &gains, &scan);
    let boundary = 2.0 / (dist.pdf(target) * target);
    let mut outside = 0usize;
    let mut agree = 0usize;
    // Per-gain rows are observations; the check is the agreement rate over
    // points outside the ±20% boundary band, where the linearization is
    // meant to hold.
    for p in &points {
        let in_band = p.gain >= 0.8 * boundary && p.gain <= 1.2 * boundary;
        if !in_band {
            outside += 1;
            agree += (p.predicted_stable == p.observed_stable) as usize;
        }
        rows.push(CheckRow {
            suite: "stability",
            case: format!(
                "scan-gain={:.4};predicted={};observed={}{}",
                p.gain,
                p.predicted_stable,
                p.observed_stable,
                if in_band { ";band" } else { "" }
            ),
            estimate: p.observed_stable as u8 as f64,
            se: 0.0,
            bound: p.predicted_stable as u8 as f64,
            passed: true,
        });
    }
    let rate = agree as f64 / outside as f64;
    rows.push(CheckRow {
        suite: "stability",
        case: format!("scan-agreement({agree}/{outside})"),
        estimate: rate,
        se: 0.0,
        bound: 0.9,
        passed: rate >= 0.9,
    });
    rows
}

/// Runs a suite by name; `all` concatenates every suite.
pub fn run_suite(name: &str, seed: u64, inject_failure: bool) -> Result<Vec<CheckRow>, String> {
    let mut rows = match name {
        "theorem1" => theorem1_suite(seed),
        "snr" => snr_suite(seed),
        "truncated" => truncated_suite(seed),
        "mills" => mills_suite(),
        "stability" => stability_suite(seed),
        "all" => {
            let mut rows = theorem1_suite(seed);
            rows.extend(snr_suite(seed));
            rows.extend(truncated_suite(seed));
            rows.extend(mills_suite());
            rows.extend(stability_suite(seed));
            rows
        }
        other => {
            return Err(format!(
                "unknown suite '{other}'; valid suites: {}",
                SUITES.join(", ")
            ))
        }
    };
    if inject_failure {
        rows.push(CheckRow {
            suite: "injected",
            case: "forced-failure".into(),
            estimate: 0.0,
            se: 0.0,
            bound: 1.0,
            passed: false,
        });
    }
    Ok(rows)
}

pub fn to_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from("suite,case,estimate,se,bound,passed\n");
    for row in rows {
        let _ = writeln!(out, "{}", row.csv());
    }
    out
}

/// `verify` command body.
pub fn cli_verify(suite: &str, out_path: Option<&Path>, seed: u64, inject_failure: bool) -> super::ExitCode {
    let rows = match run_suite(suite, seed, inject_failure) {
        Ok(rows) => rows,
        Err(msg) => {
            eprintln!("error: {msg}");
            return super::ExitCode::Usage;
        }
    };
    let csv = to_csv(&rows);
    if let Some(path) = out_path {
        if let Err(e) = std::fs::write(path, &csv) {
            eprintln!("error: cannot write report {}: {e}", path.display());
            return super::ExitCode::Runtime;
        }
    }
    print!("{csv}");
    let failures = rows.iter().filter(|r| !r.passed).count();
    if failures == 0 {
        eprintln!("verify: all {} checks passed", rows.len());
        super::ExitCode::Success
    } else {
        eprintln!("verify: {failures} of {} checks FAILED", rows.len());
        super::ExitCode::CheckFailure
    }
}
