//! Paired-run comparison: run two configs sharing a world and seed (the
//! intended use is screening on vs. off) and report how many completed
//! trajectories each needed to reach a target reward level.

use crate::{load_config, resolve_output_dir, run_training, ExitCode};
use std::fmt::Write as _;
use std::path::Path;
use tandem_core::metrics::MetricRecord;
use tandem_core::RunConfig;

/// Reach rule: the first step whose trailing 20-record mean total reward is
/// at or above the target (the window must be full, so no step before 19
/// qualifies). Returns the completed-trajectory count at that step.
pub fn completed_to_target(records: &[MetricRecord], group_size: usize, target: f64) -> Option<u64> {
    const WINDOW: usize = 20;
    let mut sum = 0.0;
    for (i, record) in records.iter().enumerate() {
        sum += record.total.mean;
        if i >= WINDOW {
            sum -= records[i - WINDOW].total.mean;
        }
        if i + 1 >= WINDOW && sum / WINDOW as f64 >= target {
            return Some((i as u64 + 1) * group_size as u64);
        }
    }
    None
}

pub struct Comparison {
    pub completed_a: Option<u64>,
    pub completed_b: Option<u64>,
    /// completed(a) / completed(b) when both reach the target.
    pub ratio: Option<f64>,
    pub csv: String,
}

pub fn compare_records(
    records_a: &[MetricRecord],
    group_a: usize,
    records_b: &[MetricRecord],
    group_b: usize,
    target: f64,
) -> Comparison {
    let completed_a = completed_to_target(records_a, group_a, target);
    let completed_b = completed_to_target(records_b, group_b, target);
    let ratio = match (completed_a, completed_b) {
        (Some(a), Some(b)) => Some(a as f64 / b as f64),
        _ => None,
    };

    let mut csv = String::from("step,completed_a,reward_a,completed_b,reward_b\n");
    let steps = records_a.len().max(records_b.len());
    for i in 0..steps {
        let a = records_a.get(i);
        let b = records_b.get(i);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            i,
            a.map_or(String::new(), |_| ((i as u64 + 1) * group_a as u64).to_string()),
            a.map_or(String::new(), |r| format!("{:.6}", r.total.mean)),
            b.map_or(String::new(), |_| ((i as u64 + 1) * group_b as u64).to_string()),
            b.map_or(String::new(), |r| format!("{:.6}", r.total.mean)),
        );
    }
    Comparison { completed_a, completed_b, ratio, csv }
}

fn check_comparable(a: &RunConfig, b: &RunConfig) -> Result<(), String> {
    if a.world != b.world {
        return Err("compared configs must share the same [world] section".into());
    }
    if a.seed != b.seed {
        return Err("compared configs must share the same seed".into());
    }
    Ok(())
}

/// `compare` command body.
pub fn cli_compare(
    config_a: &Path,
    config_b: &Path,
    target: f64,
    out_csv: Option<&Path>,
) -> ExitCode {
    let (a, b) = match (load_config(config_a, &[]), load_config(config_b, &[])) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(msg), _) | (_, Err(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::Usage;
        }
    };
    if let Err(msg) = check_comparable(&a, &b) {
        eprintln!("error: {msg}");
        return ExitCode::Usage;
    }
    crate::configure_workers(a.workers.max(b.workers));

    let dir_a = resolve_output_dir(&a, &format!("compare-a-{}", a.seed));
    let dir_b = resolve_output_dir(&b, &format!("compare-b-{}", b.seed));
    let (run_a, run_b) = match (run_training(&a, &dir_a), run_training(&b, &dir_b)) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: comparison run failed: {e}");
            return ExitCode::Runtime;
        }
    };

    let comparison = compare_records(
        &run_a.records,
        a.hyper.group_size,
        &run_b.records,
        b.hyper.group_size,
        target,
    );
    if let Some(path) = out_csv {
        if let Err(e) = std::fs::write(path, &comparison.csv) {
            eprintln!("error: cannot write convergence CSV {}: {e}", path.display());
            return ExitCode::Runtime;
        }
    }

    match (comparison.completed_a, comparison.completed_b) {
        (Some(ca), Some(cb)) => {
            println!(
                "target {target}: a reached at {ca} completed trajectories, b at {cb}; ratio a/b = {:.4}",
                comparison.ratio.expect("both reached")
            );
        }
        (a_reached, b_reached) => {
            println!(
                "target {target} unreached (a: {}, b: {})",
                a_reached.map_or("never".into(), |c| c.to_string()),
                b_reached.map_or("never".into(), |c| c.to_string()),
            );
        }
    }
    ExitCode::Success
}
