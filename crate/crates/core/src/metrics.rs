//! Per-step training metrics and the sink they stream into.

use crate::dgs::FillReport;
use crate::error::Result;
use crate::world::Pathway;
use serde::{Deserialize, Serialize};

/// Total-reward statistics over one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// One record per optimization step.
///
/// Wall-clock time is measured but excluded from serialization so that
/// identical (config, seed) runs produce byte-identical metric streams; run
/// summaries report aggregate timing instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub pathway: Pathway,
    pub concept_id: usize,
    pub tier_mean: f64,
    pub ber_mean: f64,
    pub der_mean: f64,
    pub fer_mean: f64,
    pub total: RewardStats,
    pub objective: f64,
    pub kl: f64,
    pub advantage_min: f64,
    pub advantage_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dgs: Option<FillReport>,
    #[serde(skip, default)]
    pub wall_clock_ms: f64,
}

/// Receives training output as it is produced.
pub trait MetricSink {
    fn record(&mut self, record: &MetricRecord) -> Result<()>;

    /// Out-of-band diagnostics (e.g. the abort reason on a non-finite
    /// objective). Default: ignored.
    fn diagnostic(&mut self, _step: usize, _message: &str) -> Result<()> {
        Ok(())
    }
}

/// Collects records in memory; the test and comparison harness sink.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<MetricRecord>,
    pub diagnostics: Vec<(usize, String)>,
}

impl MetricSink for MemorySink {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn diagnostic(&mut self, step: usize, message: &str) -> Result<()> {
        self.diagnostics.push((step, message.to_string()));
        Ok(())
    }
}
