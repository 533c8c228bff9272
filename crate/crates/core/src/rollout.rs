//! Two-phase trajectory sampling: autoregressive reasoning tokens, then
//! mask-and-predict grid refinement under a cosine unmasking schedule.
//!
//! Every denoising step evaluates the grid head at all positions. Masked
//! positions sample a token; the scheduled number of highest-confidence
//! samples commit (ties broken by position index). By default every position
//! contributes a ratio record at every step; `RatioCoverage::CommittedOnly`
//! restricts records to the step where a position commits, for ablation.

use crate::error::{Error, Result};
use crate::policy::{GradAccumulator, Policy, PolicyDims};
use crate::world::{CompoundPrompt, Pathway, TaskInstance, TokenGrid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Number of positions to commit after each denoising step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSchedule {
    pub total_steps: usize,
    pub unmask_counts: Vec<usize>,
}

/// Cosine schedule: the masked count after step s is ⌈N·cos(π/2 · s/T)⌉ for
/// s < T and 0 at s = T; per-step commit counts are the differences.
pub fn cosine_schedule(total_steps: usize, positions: usize) -> MaskSchedule {
    assert!(total_steps >= 1 && positions >= 1);
    let masked_after = |s: usize| -> usize {
        if s >= total_steps {
            0
        } else {
            let angle = std::f64::consts::FRAC_PI_2 * s as f64 / total_steps as f64;
            (positions as f64 * angle.cos()).ceil() as usize
        }
    };
    let unmask_counts = (1..=total_steps).map(|s| masked_after(s - 1) - masked_after(s)).collect();
    MaskSchedule { total_steps, unmask_counts }
}

/// Whether ratio records cover all positions at every step or only newly
/// committed positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioCoverage {
    #[default]
    AllPositions,
    CommittedOnly,
}

/// One grid-head policy decision: the token whose probability ratio will be
/// evaluated, and its log-probability under the behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub position: usize,
    pub token: u32,
    pub logprob_old: f64,
}

/// A complete two-phase rollout with behavior log-probabilities for every
/// recorded decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub pathway: Pathway,
    pub queried_attribute: usize,
    pub ir_tokens: Vec<u32>,
    pub ir_logprobs_old: Vec<f64>,
    pub compound_prompt: CompoundPrompt,
    /// Grid states from fully masked (index 0) to fully unmasked.
    pub grids: Vec<TokenGrid>,
    pub step_records: Vec<StepRecord>,
    pub coverage: RatioCoverage,
    pub dims: PolicyDims,
}

impl Trajectory {
    /// Total token records: reasoning positions plus grid records.
    pub fn record_count(&self) -> usize {
        self.ir_tokens.len() + self.step_records.len()
    }

    pub fn final_grid(&self) -> &TokenGrid {
        self.grids.last().expect("trajectory has at least the initial grid")
    }

    /// Behavior log-probability of record `index` (text records first).
    pub fn behavior_logprob(&self, index: usize) -> f64 {
        if index < self.ir_tokens.len() {
            self.ir_logprobs_old[index]
        } else {
            self.step_records[index - self.ir_tokens.len()].logprob_old
        }
    }

    pub fn is_text_record(&self, index: usize) -> bool {
        index < self.ir_tokens.len()
    }

    fn check_dims(&self, policy: &Policy) -> Result<()> {
        if policy.dims() != self.dims {
            return Err(Error::DimensionMismatch(
                "policy tables do not match the trajectory's dimensions".into(),
            ));
        }
        Ok(())
    }
}

/// Log-probability of record `index` under `policy` (not the behavior
/// policy).
pub fn record_logprob(policy: &Policy, traj: &Trajectory, index: usize) -> Result<f64> {
    traj.check_dims(policy)?;
    Ok(if index < traj.ir_tokens.len() {
        policy.text_log_prob(traj.queried_attribute, index, traj.ir_tokens[index])
    } else {
        let rec = &traj.step_records[index - traj.ir_tokens.len()];
        policy.grid_log_prob(&traj.compound_prompt, rec.position, rec.token)
    })
}

/// Recomputes log-probabilities of every recorded decision under `policy`,
/// text positions first, then grid records in (step, position) order.
pub fn trajectory_logprobs(policy: &Policy, traj: &Trajectory) -> Result<Vec<f64>> {
    traj.check_dims(policy)?;
    let mut out = Vec::with_capacity(traj.record_count());
    for (pos, &token) in traj.ir_tokens.iter().enumerate() {
        out.push(policy.text_log_prob(traj.queried_attribute, pos, token));
    }
    for rec in &traj.step_records {
        out.push(policy.grid_log_prob(&traj.compound_prompt, rec.position, rec.token));
    }
    Ok(out)
}

/// Adds `weight · ∇_θ log π_θ(record)` to the accumulator.
pub fn accumulate_logprob_grad(
    policy: &Policy,
    traj: &Trajectory,
    index: usize,
    weight: f64,
    acc: &mut GradAccumulator,
) -> Result<()> {
    traj.check_dims(policy)?;
    if index < traj.ir_tokens.len() {
        acc.add_text(policy, traj.queried_attribute, index, traj.ir_tokens[index], weight);
    } else {
        let rec = &traj.step_records[index - traj.ir_tokens.len()];
        acc.add_grid(policy, &traj.compound_prompt, rec.position, rec.token, weight);
    }
    Ok(())
}

/// Per-token KL estimate of `policy` from `reference`, averaged over the
/// trajectory's records: r − log r − 1 with r = π_ref(token)/π_θ(token).
/// Unbiased and nonnegative for every r > 0.
pub fn kl_estimate(policy: &Policy, reference: &Policy, traj: &Trajectory) -> Result<f64> {
    traj.check_dims(policy)?;
    traj.check_dims(reference)?;
    let mut total = 0.0;
    for index in 0..traj.record_count() {
        let lp = record_logprob(policy, traj, index)?;
        let lr = record_logprob(reference, traj, index)?;
        let log_r = lr - lp;
        total += log_r.exp() - log_r - 1.0;
    }
    Ok(total / traj.record_count() as f64)
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// A rollout that can be paused at a denoising step, scored, and resumed.
/// Early-cut screening advances to the cut step, inspects the partial grid,
/// and only completes accepted candidates.
pub struct RolloutState<'a> {
    policy: &'a Policy,
    schedule: &'a MaskSchedule,
    rng: ChaCha8Rng,
    pathway: Pathway,
    queried_attribute: usize,
    ir_tokens: Vec<u32>,
    ir_logprobs_old: Vec<f64>,
    cp: CompoundPrompt,
    grids: Vec<TokenGrid>,
    step_records: Vec<StepRecord>,
    coverage: RatioCoverage,
    committed: Vec<bool>,
    steps_done: usize,
}

impl<'a> RolloutState<'a> {
    /// Runs Phase I (reasoning tokens sampled position by position) and
    /// prepares the fully masked starting grid.
    pub fn begin(
        policy: &'a Policy,
        task: &TaskInstance,
        schedule: &'a MaskSchedule,
        coverage: RatioCoverage,
        mut rng: ChaCha8Rng,
    ) -> Self {
        let dims = policy.dims();
        let mut ir_tokens = Vec::with_capacity(dims.text_len);
        let mut ir_logprobs_old = Vec::with_capacity(dims.text_len);
        for pos in 0..dims.text_len {
            let log_probs = policy.text_log_probs(task.queried_attribute, pos);
            let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
            let token = sample_categorical(&probs, &mut rng);
            ir_tokens.push(token as u32);
            ir_logprobs_old.push(log_probs[token]);
        }
        let cp = CompoundPrompt::build(task, &ir_tokens, dims.num_attributes, dims.values_per_attribute);
        Self {
            policy,
            schedule,
            rng,
            pathway: task.pathway,
            queried_attribute: task.queried_attribute,
            ir_tokens,
            ir_logprobs_old,
            cp,
            grids: vec![TokenGrid::fully_masked(dims.grid_positions)],
            step_records: Vec::new(),
            coverage,
            committed: vec![false; dims.grid_positions],
            steps_done: 0,
        }
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn dims(&self) -> PolicyDims {
        self.policy.dims()
    }

    pub fn current_grid(&self) -> &TokenGrid {
        self.grids.last().expect("at least the initial grid")
    }

    pub fn compound_prompt(&self) -> &CompoundPrompt {
        &self.cp
    }

    /// Runs one denoising step: predict everywhere, record per coverage,
    /// commit the scheduled number of highest-confidence samples.
    pub fn step(&mut self) {
        assert!(self.steps_done < self.schedule.total_steps, "rollout already complete");
        let dims = self.policy.dims();
        let step = self.steps_done + 1;
        let mut grid = self.current_grid().clone();
        grid.step_index = step;

        // (position, sampled token, log-confidence) for still-masked positions.
        let mut masked: Vec<(usize, u32, f64)> = Vec::new();
        for k in 0..dims.grid_positions {
            let log_probs = self.policy.grid_log_probs(&self.cp, k);
            if self.committed[k] {
                if self.coverage == RatioCoverage::AllPositions {
                    let token = grid.tokens[k].expect("committed position holds a token");
                    self.step_records.push(StepRecord {
                        step,
                        position: k,
                        token,
                        logprob_old: log_probs[token as usize],
                    });
                }
            } else {
                let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
                let token = sample_categorical(&probs, &mut self.rng) as u32;
                let log_confidence = log_probs[token as usize];
                if self.coverage == RatioCoverage::AllPositions {
                    self.step_records.push(StepRecord {
                        step,
                        position: k,
                        token,
                        logprob_old: log_confidence,
                    });
                }
                masked.push((k, token, log_confidence));
            }
        }

        masked.sort_by(|a, b| b.2.partial_cmp(&a.2).expect("finite confidence").then(a.0.cmp(&b.0)));
        for &(k, token, log_confidence) in masked.iter().take(self.schedule.unmask_counts[step - 1]) {
            grid.tokens[k] = Some(token);
            self.committed[k] = true;
            if self.coverage == RatioCoverage::CommittedOnly {
                self.step_records.push(StepRecord {
                    step,
                    position: k,
                    token,
                    logprob_old: log_confidence,
                });
            }
        }
        if self.coverage == RatioCoverage::CommittedOnly {
            // Keep (step, position) ordering within the step.
            let start = self.step_records.len() - self.schedule.unmask_counts[step - 1];
            self.step_records[start..].sort_by_key(|r| r.position);
        }

        self.grids.push(grid);
        self.steps_done += 1;
    }

    pub fn advance_steps(&mut self, n: usize) {
        for _ in 0..n {
            self.step();
        }
    }

    /// Completes any remaining steps and yields the trajectory.
    pub fn finish(mut self) -> Trajectory {
        while self.steps_done < self.schedule.total_steps {
            self.step();
        }
        debug_assert!(self.current_grid().is_complete());
        Trajectory {
            pathway: self.pathway,
            queried_attribute: self.queried_attribute,
            ir_tokens: self.ir_tokens,
            ir_logprobs_old: self.ir_logprobs_old,
            compound_prompt: self.cp,
            grids: self.grids,
            step_records: self.step_records,
            coverage: self.coverage,
            dims: self.policy.dims(),
        }
    }
}

/// One complete two-phase rollout.
pub fn rollout(
    policy: &Policy,
    task: &TaskInstance,
    schedule: &MaskSchedule,
    coverage: RatioCoverage,
    rng: ChaCha8Rng,
) -> Trajectory {
    RolloutState::begin(policy, task, schedule, coverage, rng).finish()
}
