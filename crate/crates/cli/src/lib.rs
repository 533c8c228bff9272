//! Runner: seeded training runs with persisted artifacts, verification
//! suites with CSV reports, and paired-run comparisons.
//!
//! Every run writes a self-describing directory: the fully resolved config,
//! the concept table, a line-delimited JSON metric stream, versioned policy
//! checkpoints, and a summary. Identical (config, seed) pairs produce
//! byte-identical metric streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use tandem_core::metrics::{MetricRecord, MetricSink};
use tandem_core::{Error, Policy, PolicyDims, RunConfig, Trainer, World};

pub mod compare;
pub mod overrides;
pub mod verify;

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "TANDEM_OUTPUT_ROOT";

/// Process exit codes: success 0, usage/config 1, failed checks 2, runtime
/// errors 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    CheckFailure = 2,
    Runtime = 3,
}

/// Reads, overrides, and validates a run configuration.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("config not found or unreadable: {}: {e}", path.display()))?;
    let config = overrides::apply(&text, overrides)?;
    config.validate().map_err(|e| format!("invalid config {}: {e}", path.display()))?;
    Ok(config)
}

/// Where a run's outputs land: the explicit `output_dir` if absolute,
/// otherwise under the output root (env var, falling back to the working
/// directory).
pub fn resolve_output_dir(config: &RunConfig, default_name: &str) -> PathBuf {
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from(default_name));
    if dir.is_absolute() {
        dir
    } else {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_default();
        root.join(dir)
    }
}

/// Buffered JSONL metric writer flushed every `flush_interval` records so an
/// abnormal termination loses at most one interval.
pub struct JsonlSink {
    writer: BufWriter<File>,
    flush_interval: usize,
    pending: usize,
}

impl JsonlSink {
    pub fn create(path: &Path, flush_interval: usize) -> std::io::Result<Self> {
        Ok(Self { writer: BufWriter::new(File::create(path)?), flush_interval, pending: 0 })
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.pending = 0;
        self.writer.flush()
    }
}

impl MetricSink for JsonlSink {
    fn record(&mut self, record: &MetricRecord) -> tandem_core::Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Config(format!("metric serialization failed: {e}")))?;
        writeln!(self.writer, "{line}")?;
        self.pending += 1;
        if self.pending >= self.flush_interval {
            self.flush()?;
        }
        Ok(())
    }

    fn diagnostic(&mut self, step: usize, message: &str) -> tandem_core::Result<()> {
        let encoded = serde_json::to_string(message).expect("string encodes");
        writeln!(self.writer, "{{\"step\":{step},\"diagnostic\":{encoded}}}")?;
        self.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub completed_trajectories: u64,
    pub evaluated_trajectories: u64,
    /// Mean total reward over the first and last 20-step windows.
    pub first_window_mean: Option<f64>,
    pub last_window_mean: Option<f64>,
    pub window: usize,
    pub wall_clock_ms: f64,
}

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub records: Vec<MetricRecord>,
    pub summary: RunSummary,
}

fn window_mean(records: &[MetricRecord], window: usize, from_end: bool) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let n = records.len().min(window);
    let slice = if from_end { &records[records.len() - n..] } else { &records[..n] };
    Some(slice.iter().map(|r| r.total.mean).sum::<f64>() / n as f64)
}

/// Executes one training run and writes all artifacts under `out_dir`.
///
/// The single seed stream covers policy initialization and every training
/// decision, so the whole directory is a pure function of the config.
pub fn run_training(config: &RunConfig, out_dir: &Path) -> Result<RunArtifacts, Error> {
    fs::create_dir_all(out_dir)?;
    let resolved = toml::to_string_pretty(config)
        .map_err(|e| Error::Config(format!("config echo failed: {e}")))?;
    fs::write(out_dir.join("config.resolved.toml"), resolved)?;

    let world = World::new(config.world.clone())?;
    world.export_concepts(BufWriter::new(File::create(out_dir.join("concepts.jsonl"))?))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = PolicyDims::from_world(world.config());
    let mut policy = Policy::init(dims, config.policy.init_scale, &mut rng)?;

    let mut sink = JsonlSink::create(&out_dir.join("metrics.jsonl"), config.metric_flush_interval)?;
    let mut records = Vec::with_capacity(config.hyper.steps);
    let started = std::time::Instant::now();
    let mut trainer =
        Trainer::new(&world, &policy, &config.hyper, config.dgs.as_ref(), &config.reward)?;
    let mut completed = 0u64;
    let mut evaluated = 0u64;
    for step in 0..config.hyper.steps {
        let record = match trainer.step(&mut policy, &mut rng) {
            Err(e @ Error::NonFiniteObjective { .. }) => {
                sink.diagnostic(step, "non-finite objective; aborting run")?;
                return Err(e);
            }
            other => other?,
        };
        completed += config.hyper.group_size as u64;
        evaluated += record.dgs.as_ref().map_or(config.hyper.group_size as u64, |s| s.evaluated as u64);
        sink.record(&record)?;
        records.push(record);
        if config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 {
            let path = out_dir.join(format!("policy-step-{:06}.ckpt", step + 1));
            policy.write_checkpoint(BufWriter::new(File::create(path)?))?;
        }
    }
    sink.flush()?;
    policy.write_checkpoint(BufWriter::new(File::create(out_dir.join("policy-final.ckpt"))?))?;

    let summary = RunSummary {
        steps: records.len(),
        completed_trajectories: completed,
        evaluated_trajectories: evaluated,
        first_window_mean: window_mean(&records, 20, false),
        last_window_mean: window_mean(&records, 20, true),
        window: 20,
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?,
    )?;
    Ok(RunArtifacts { dir: out_dir.to_path_buf(), records, summary })
}

/// `train` command body: returns the exit code after printing a result line.
pub fn cli_train(config_path: &Path, overrides: &[String]) -> ExitCode {
    let config = match load_config(config_path, overrides) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::Usage;
        }
    };
    configure_workers(config.workers);
    let out_dir = resolve_output_dir(&config, &format!("run-{}", config.seed));
    match run_training(&config, &out_dir) {
        Ok(artifacts) => {
            println!(
                "run complete: {} steps, {} completed / {} evaluated trajectories -> {}",
                artifacts.summary.steps,
                artifacts.summary.completed_trajectories,
                artifacts.summary.evaluated_trajectories,
                artifacts.dir.display()
            );
            ExitCode::Success
        }
        Err(e) => {
            eprintln!("error: training run failed: {e}");
            ExitCode::Runtime
        }
    }
}

/// Builds the global worker pool once per process; later calls are no-ops.
pub fn configure_workers(workers: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build_global();
}
