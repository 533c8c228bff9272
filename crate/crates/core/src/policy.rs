//! Tabular-softmax two-head policy.
//!
//! The text head is a table over (queried attribute, sequence position); the
//! grid head is a table over (asserted block value or the unasserted bucket,
//! offset within the block). Tabular parameterization keeps every
//! log-probability gradient exact, which is what the finite-difference
//! verification in this crate rests on.

use crate::error::{Error, Result};
use crate::world::{CompoundPrompt, WorldConfig};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Table dimensions shared by policies, accumulators, and trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub num_attributes: usize,
    pub values_per_attribute: u32,
    pub text_len: usize,
    pub grid_positions: usize,
    pub codebook_size: u32,
    pub text_vocab: u32,
}

impl PolicyDims {
    pub fn from_world(cfg: &WorldConfig) -> Self {
        Self {
            num_attributes: cfg.num_attributes,
            values_per_attribute: cfg.values_per_attribute,
            text_len: cfg.text_len,
            grid_positions: cfg.grid_positions,
            codebook_size: cfg.codebook_size,
            text_vocab: cfg.text_vocab,
        }
    }

    pub fn block_size(&self) -> usize {
        self.grid_positions / self.num_attributes
    }

    fn text_rows(&self) -> usize {
        self.num_attributes * self.text_len
    }

    /// One bucket per assertable value plus the unasserted bucket.
    fn grid_rows(&self) -> usize {
        (self.values_per_attribute as usize + 1) * self.block_size()
    }

    fn text_row(&self, queried_attribute: usize, position: usize) -> usize {
        debug_assert!(queried_attribute < self.num_attributes && position < self.text_len);
        queried_attribute * self.text_len + position
    }

    fn grid_row(&self, asserted: Option<u32>, k: usize) -> usize {
        let bucket = match asserted {
            Some(v) => {
                debug_assert!(v < self.values_per_attribute);
                v as usize
            }
            None => self.values_per_attribute as usize,
        };
        bucket * self.block_size() + k % self.block_size()
    }
}

/// Dense row-major logit table.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LogitTable {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Log-probabilities of a full softmax row, via the max-shifted log-sum-exp.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn log_prob_of(logits: &[f64], token: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[token] - lse
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// The two-head policy. Immutable during rollouts; cloned to act as the
/// behavior and reference policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    dims: PolicyDims,
    text: LogitTable,
    grid: LogitTable,
}

impl Policy {
    /// Initializes logits i.i.d. from N(0, init_scale²); scale 0 yields the
    /// uniform policy at every row.
    pub fn init(dims: PolicyDims, init_scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if init_scale < 0.0 || !init_scale.is_finite() {
            return Err(Error::Config(format!("init_scale ({init_scale}) must be finite and >= 0")));
        }
        let mut policy = Self {
            dims,
            text: LogitTable::zeros(dims.text_rows(), dims.text_vocab as usize),
            grid: LogitTable::zeros(dims.grid_rows(), dims.codebook_size as usize),
        };
        if init_scale > 0.0 {
            let normal = Normal::new(0.0, init_scale).expect("validated scale");
            for x in policy.text.data.iter_mut().chain(policy.grid.data.iter_mut()) {
                *x = normal.sample(rng);
            }
        }
        Ok(policy)
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    /// Probability vector of the text head at (queried attribute, position).
    pub fn text_distribution(&self, queried_attribute: usize, position: usize) -> Vec<f64> {
        softmax(self.text.row(self.dims.text_row(queried_attribute, position)))
    }

    /// Probability vector over the codebook for grid position `k` under the
    /// compound prompt's assertion for `k`'s block.
    pub fn grid_distribution(&self, cp: &CompoundPrompt, k: usize) -> Vec<f64> {
        softmax(self.grid.row(self.grid_row_for(cp, k)))
    }

    pub(crate) fn grid_row_for(&self, cp: &CompoundPrompt, k: usize) -> usize {
        let block = k / self.dims.block_size();
        self.dims.grid_row(cp.asserted[block], k)
    }

    pub(crate) fn text_log_probs(&self, queried_attribute: usize, position: usize) -> Vec<f64> {
        log_softmax(self.text.row(self.dims.text_row(queried_attribute, position)))
    }

    pub(crate) fn grid_log_probs(&self, cp: &CompoundPrompt, k: usize) -> Vec<f64> {
        log_softmax(self.grid.row(self.grid_row_for(cp, k)))
    }

    pub(crate) fn text_log_prob(&self, queried_attribute: usize, position: usize, token: u32) -> f64 {
        log_prob_of(self.text.row(self.dims.text_row(queried_attribute, position)), token as usize)
    }

    pub(crate) fn grid_log_prob(&self, cp: &CompoundPrompt, k: usize, token: u32) -> f64 {
        log_prob_of(self.grid.row(self.grid_row_for(cp, k)), token as usize)
    }

    /// Mutable text-head logits, for calibration and probing.
    pub fn text_logits_mut(&mut self, queried_attribute: usize, position: usize) -> &mut [f64] {
        self.text.row_mut(self.dims.text_row(queried_attribute, position))
    }

    /// Mutable grid-head logits for an assertion bucket and block offset.
    pub fn grid_logits_mut(&mut self, asserted: Option<u32>, offset: usize) -> &mut [f64] {
        debug_assert!(offset < self.dims.block_size());
        self.grid.row_mut(self.dims.grid_row(asserted, offset))
    }

    /// Gradient-ascent step: θ ← θ + lr · g.
    pub fn ascend(&mut self, grad: &GradAccumulator, learning_rate: f64) {
        debug_assert_eq!(self.dims, grad.dims);
        for (x, g) in self.text.data.iter_mut().zip(&grad.text.data) {
            *x += learning_rate * g;
        }
        for (x, g) in self.grid.data.iter_mut().zip(&grad.grid.data) {
            *x += learning_rate * g;
        }
    }

    /// Largest absolute parameter difference across both tables.
    pub fn max_param_delta(&self, other: &Policy) -> f64 {
        self.text
            .data
            .iter()
            .zip(&other.text.data)
            .chain(self.grid.data.iter().zip(&other.grid.data))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Total parameter count (text table followed by grid table).
    pub fn param_count(&self) -> usize {
        self.text.data.len() + self.grid.data.len()
    }

    const MAGIC: &'static str = "tandem-policy-v1";

    /// Writes the versioned table dump: magic line, dims line, then each
    /// table as a header line and one whitespace-separated row per line.
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", Self::MAGIC)?;
        let d = &self.dims;
        writeln!(
            w,
            "dims {} {} {} {} {} {}",
            d.num_attributes, d.values_per_attribute, d.text_len, d.grid_positions, d.codebook_size, d.text_vocab
        )?;
        for (name, table) in [("text", &self.text), ("grid", &self.grid)] {
            writeln!(w, "{} {} {}", name, table.rows, table.cols)?;
            for r in 0..table.rows {
                let line =
                    table.row(r).iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`Policy::write_checkpoint`].
    pub fn read_checkpoint(r: impl BufRead) -> Result<Self> {
        let bad = |msg: &str| Error::CheckpointFormat(msg.to_string());
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad(&format!("unexpected end of stream, expected {what}")))?
                .map_err(Error::Io)
        };

        if next("magic")? != Self::MAGIC {
            return Err(bad("missing magic line"));
        }
        let dims_line = next("dims")?;
        let parts: Vec<&str> = dims_line.split_whitespace().collect();
        if parts.len() != 7 || parts[0] != "dims" {
            return Err(bad("malformed dims line"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("malformed dims value"));
        let dims = PolicyDims {
            num_attributes: num(parts[1])?,
            values_per_attribute: num(parts[2])? as u32,
            text_len: num(parts[3])?,
            grid_positions: num(parts[4])?,
            codebook_size: num(parts[5])? as u32,
            text_vocab: num(parts[6])? as u32,
        };

        let mut read_table = |name: &str, rows: usize, cols: usize| -> Result<LogitTable> {
            let header = next(name)?;
            if header != format!("{name} {rows} {cols}") {
                return Err(bad(&format!("malformed {name} table header")));
            }
            let mut table = LogitTable::zeros(rows, cols);
            for r in 0..rows {
                let line = next("table row")?;
                let row = table.row_mut(r);
                let mut count = 0;
                for (slot, tok) in row.iter_mut().zip(line.split_whitespace()) {
                    *slot = tok.parse::<f64>().map_err(|_| bad("malformed logit"))?;
                    count += 1;
                }
                if count != cols || line.split_whitespace().count() != cols {
                    return Err(bad("table row has wrong arity"));
                }
            }
            Ok(table)
        };

        let text = read_table("text", dims.text_rows(), dims.text_vocab as usize)?;
        let grid = read_table("grid", dims.grid_rows(), dims.codebook_size as usize)?;
        Ok(Self { dims, text, grid })
    }
}

/// Accumulates weighted log-probability gradients in policy table shape.
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    dims: PolicyDims,
    text: LogitTable,
    grid: LogitTable,
}

impl GradAccumulator {
    pub fn zeros_like(policy: &Policy) -> Self {
        Self {
            dims: policy.dims,
            text: LogitTable::zeros(policy.text.rows, policy.text.cols),
            grid: LogitTable::zeros(policy.grid.rows, policy.grid.cols),
        }
    }

    /// Adds `weight · ∇ log softmax(row)[token]` to a text row: the tabular
    /// score function is `weight · (onehot(token) − softmax(row))`.
    pub(crate) fn add_text(&mut self, policy: &Policy, queried_attribute: usize, position: usize, token: u32, weight: f64) {
        let r = self.dims.text_row(queried_attribute, position);
        accumulate_row(self.text.row_mut(r), policy.text.row(r), token as usize, weight);
    }

    pub(crate) fn add_grid(&mut self, policy: &Policy, cp: &CompoundPrompt, k: usize, token: u32, weight: f64) {
        let r = policy.grid_row_for(cp, k);
        accumulate_row(self.grid.row_mut(r), policy.grid.row(r), token as usize, weight);
    }

    /// Merges another accumulator by summation (per-worker accumulators are
    /// single-writer and combined here).
    pub fn merge(&mut self, other: &GradAccumulator) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.text.data.iter_mut().zip(&other.text.data) {
            *a += b;
        }
        for (a, b) in self.grid.data.iter_mut().zip(&other.grid.data) {
            *a += b;
        }
    }

    /// Flattened gradient entry: text table first, then grid, row-major.
    pub fn param(&self, flat_index: usize) -> f64 {
        let nt = self.text.data.len();
        if flat_index < nt {
            self.text.data[flat_index]
        } else {
            self.grid.data[flat_index - nt]
        }
    }

    pub fn text_row(&self, queried_attribute: usize, position: usize) -> &[f64] {
        self.text.row(self.dims.text_row(queried_attribute, position))
    }

    pub fn grid_row(&self, asserted: Option<u32>, offset: usize) -> &[f64] {
        self.grid.row(self.dims.grid_row(asserted, offset))
    }
}

fn accumulate_row(acc: &mut [f64], logits: &[f64], token: usize, weight: f64) {
    if weight == 0.0 {
        return;
    }
    let probs = softmax(logits);
    for (a, p) in acc.iter_mut().zip(&probs) {
        *a -= weight * p;
    }
    acc[token] += weight;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Pathway;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    pub(crate) fn dims_for_tests() -> PolicyDims {
        PolicyDims {
            num_attributes: 2,
            values_per_attribute: 3,
            text_len: 2,
            grid_positions: 8,
            codebook_size: 4,
            text_vocab: 6,
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cp_all_asserted(dims: &PolicyDims) -> CompoundPrompt {
        CompoundPrompt {
            pathway: Pathway::VisualInstruct,
            asserted: vec![Some(1); dims.num_attributes],
            tokens: vec![],
        }
    }

    #[test]
    fn zero_scale_init_is_uniform() {
        let dims = dims_for_tests();
        let policy = Policy::init(dims, 0.0, &mut rng(1)).unwrap();
        let dist = policy.text_distribution(1, 0);
        for p in dist {
            assert_abs_diff_eq!(p, 1.0 / 6.0, epsilon = 1e-15);
        }
        let cp = cp_all_asserted(&dims);
        for p in policy.grid_distribution(&cp, 5) {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn seeded_init_is_reproducible_and_negative_scale_rejected() {
        let dims = dims_for_tests();
        let a = Policy::init(dims, 0.3, &mut rng(9)).unwrap();
        let b = Policy::init(dims, 0.3, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(Policy::init(dims, -1.0, &mut rng(9)).is_err());
    }

    #[test]
    fn small_init_stays_near_uniform_in_total_variation() {
        // text_vocab = 8, init_scale = 0.1: every row's TV distance from
        // uniform computed directly for a fixed seed.
        let dims = PolicyDims { text_vocab: 8, ..dims_for_tests() };
        let policy = Policy::init(dims, 0.1, &mut rng(42)).unwrap();
        for qa in 0..dims.num_attributes {
            for pos in 0..dims.text_len {
                let dist = policy.text_distribution(qa, pos);
                let tv: f64 = 0.5 * dist.iter().map(|p| (p - 0.125).abs()).sum::<f64>();
                assert!(tv < 0.1, "TV {tv} too large at ({qa},{pos})");
            }
        }
    }

    #[test]
    fn softmax_rows_are_normalized() {
        let dims = dims_for_tests();
        let policy = Policy::init(dims, 2.0, &mut rng(3)).unwrap();
        let cp = cp_all_asserted(&dims);
        for k in 0..dims.grid_positions {
            let sum: f64 = policy.grid_distribution(&cp, k).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
        for qa in 0..dims.num_attributes {
            for pos in 0..dims.text_len {
                let sum: f64 = policy.text_distribution(qa, pos).iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unasserted_blocks_use_the_dedicated_bucket() {
        let dims = dims_for_tests();
        let mut policy = Policy::init(dims, 0.0, &mut rng(0)).unwrap();
        policy.grid_logits_mut(None, 1)[2] = 3.0;

        let cp = CompoundPrompt {
            pathway: Pathway::VisualInstruct,
            asserted: vec![None, Some(0)],
            tokens: vec![],
        };
        // Position 1 is offset 1 of the unasserted block 0.
        let dist = policy.grid_distribution(&cp, 1);
        assert!(dist[2] > 0.8);
        // Same offset in block 1 is asserted, so it reads bucket 0 instead.
        let dist = policy.grid_distribution(&cp, 5);
        assert_abs_diff_eq!(dist[2], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn equal_bucket_and_offset_share_a_row() {
        let dims = dims_for_tests();
        let policy = Policy::init(dims, 1.0, &mut rng(8)).unwrap();
        let cp = cp_all_asserted(&dims);
        // Positions 1 and 5: offsets 1 in blocks 0 and 1, both asserted 1.
        assert_eq!(policy.grid_distribution(&cp, 1), policy.grid_distribution(&cp, 5));
    }

    #[test]
    fn uniform_row_gradient_is_onehot_minus_uniform() {
        let dims = dims_for_tests();
        let policy = Policy::init(dims, 0.0, &mut rng(0)).unwrap();
        let mut acc = GradAccumulator::zeros_like(&policy);
        let cp = cp_all_asserted(&dims);
        acc.add_grid(&policy, &cp, 0, 2, 1.0);
        let row = acc.grid_row(Some(1), 0);
        assert_abs_diff_eq!(row[0], -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(row[1], -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(row[2], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(row[3], -0.25, epsilon = 1e-15);

        // Zero weight leaves the accumulator untouched.
        acc.add_grid(&policy, &cp, 0, 2, 0.0);
        assert_abs_diff_eq!(acc.grid_row(Some(1), 0)[2], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn accumulator_merge_sums_per_worker_contributions() {
        let dims = dims_for_tests();
        let policy = Policy::init(dims, 0.0, &mut rng(0)).unwrap();
        let cp = cp_all_asserted(&dims);
        let mut a = GradAccumulator::zeros_like(&policy);
        let mut b = GradAccumulator::zeros_like(&policy);
        a.add_grid(&policy, &cp, 0, 2, 1.0);
        b.add_grid(&policy, &cp, 0, 1, 0.5);
        b.add_text(&policy, 0, 1, 3, 2.0);
        let mut merged = GradAccumulator::zeros_like(&policy);
        merged.add_grid(&policy, &cp, 0, 2, 1.0);
        merged.add_grid(&policy, &cp, 0, 1, 0.5);
        merged.add_text(&policy, 0, 1, 3, 2.0);
        a.merge(&b);
        for i in 0..policy.param_count() {
            assert_abs_diff_eq!(a.param(i), merged.param(i), epsilon = 1e-15);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dims = dims_for_tests();
        let policy = Policy::init(dims, 1.7, &mut rng(77)).unwrap();
        let mut buf = Vec::new();
        policy.write_checkpoint(&mut buf).unwrap();
        let restored = Policy::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(policy, restored);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let err = Policy::read_checkpoint("not a checkpoint\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::CheckpointFormat(_)));
        let truncated = "tandem-policy-v1\ndims 2 3 2 8 4 6\ntext 4 6\n1 2 3\n";
        assert!(Policy::read_checkpoint(truncated.as_bytes()).is_err());
    }
}
