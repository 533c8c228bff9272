//! Group-relative policy optimization over two-phase trajectories.
//!
//! A group of rollouts shares one task; advantages are strict group-centered
//! rewards (no σ normalization), token contributions are summed rather than
//! length-normalized, and each record's clipped probability ratio is weighted
//! by a per-domain coefficient (text vs. grid) before the per-token KL
//! penalty against a frozen reference policy.
//!
//! Gradients are assembled analytically from the tabular score function:
//! records whose ratio is clipped out of the trust region contribute zero
//! policy gradient, active records contribute α·Â·D·∇log π, and the KL term
//! contributes its exact derivative.

use crate::dgs::{fill_group, ControllerState, DgsConfig, FillReport};
use crate::error::{Error, Result};
use crate::metrics::{MetricRecord, MetricSink, RewardStats};
use crate::policy::{GradAccumulator, Policy};
use crate::reward::{score_trajectory, RewardBreakdown, RewardConfig};
use crate::rollout::{
    accumulate_logprob_grad, cosine_schedule, kl_estimate, rollout, trajectory_logprobs,
    RatioCoverage, Trajectory,
};
use crate::world::{Pathway, TaskInstance, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoHyper {
    /// Trajectories per group; centering needs at least 2.
    pub group_size: usize,
    /// Trust-region half-width ε of the clipped ratio.
    pub clip: f64,
    /// KL penalty coefficient β against the frozen reference policy.
    pub kl_coef: f64,
    /// Weight applied to reasoning-token records.
    pub alpha_text: f64,
    /// Weight applied to grid-token records.
    pub alpha_image: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Denoising steps per rollout.
    pub t_total: usize,
    pub ratio_coverage: RatioCoverage,
    /// When true (default) the per-domain α multiplies the whole bracket,
    /// KL term included; when false the KL penalty escapes the α weighting.
    pub alpha_weights_kl: bool,
    /// Gradient ascents per sampled group. The behavior policy stays frozen
    /// across the inner epochs of one step, so epochs beyond the first move
    /// ratios off 1 and the trust-region clip engages.
    pub inner_epochs: usize,
}

impl Default for GrpoHyper {
    fn default() -> Self {
        Self {
            group_size: 9,
            clip: 0.2,
            kl_coef: 0.01,
            alpha_text: 0.4,
            alpha_image: 0.6,
            learning_rate: 0.05,
            steps: 100,
            t_total: 8,
            ratio_coverage: RatioCoverage::AllPositions,
            alpha_weights_kl: true,
            inner_epochs: 1,
        }
    }
}

impl GrpoHyper {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.group_size < 2 {
            return cfg(format!("group_size ({}) must be >= 2 for group centering", self.group_size));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return cfg(format!("clip ({}) must lie in (0,1)", self.clip));
        }
        if self.kl_coef < 0.0 {
            return cfg(format!("kl_coef ({}) must be >= 0", self.kl_coef));
        }
        if self.alpha_text < 0.0 || self.alpha_image < 0.0 {
            return cfg("alpha_text and alpha_image must be >= 0".into());
        }
        if self.learning_rate <= 0.0 {
            return cfg(format!("learning_rate ({}) must be > 0", self.learning_rate));
        }
        if self.t_total < 1 {
            return cfg("t_total must be >= 1".into());
        }
        if self.inner_epochs < 1 {
            return cfg("inner_epochs must be >= 1".into());
        }
        Ok(())
    }
}

/// One sampled group: trajectories for a single task with rewards and
/// group-centered advantages.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    pub dgs_stats: Option<FillReport>,
}

impl GroupBatch {
    /// Centers advantages: Âᵢ = Rᵢ − mean(R).
    pub fn from_scored(
        trajectories: Vec<Trajectory>,
        breakdowns: Vec<RewardBreakdown>,
        dgs_stats: Option<FillReport>,
    ) -> Self {
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let advantages = rewards.iter().map(|r| r - mean).collect();
        Self { trajectories, rewards, breakdowns, advantages, dgs_stats }
    }

    fn check_centered(&self) -> Result<()> {
        let sum: f64 = self.advantages.iter().sum();
        let tol = 1e-9 * (1.0 + self.advantages.iter().map(|a| a.abs()).sum::<f64>());
        if sum.abs() > tol {
            return Err(Error::UncenteredAdvantages(sum));
        }
        Ok(())
    }
}

/// Samples `group_size` independent rollouts of one task under the behavior
/// policy and scores them. Rollouts get pre-drawn child seeds, so the result
/// is identical whether they run sequentially or on a worker pool.
pub fn sample_group(
    policy_old: &Policy,
    world: &World,
    task: &TaskInstance,
    hyper: &GrpoHyper,
    schedule: &crate::rollout::MaskSchedule,
    reward: &RewardConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GroupBatch> {
    let seeds: Vec<u64> = (0..hyper.group_size).map(|_| rng.random()).collect();
    let trajectories: Vec<Trajectory> = seeds
        .into_par_iter()
        .map(|seed| {
            rollout(policy_old, task, schedule, hyper.ratio_coverage, ChaCha8Rng::seed_from_u64(seed))
        })
        .collect();
    let concept = world.concept(task.concept_id);
    let breakdowns = trajectories
        .iter()
        .map(|t| score_trajectory(world, concept, &task.candidates, &task.truth_vector, t, reward))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupBatch::from_scored(trajectories, breakdowns, None))
}

/// Probability ratios π_θ(token)/π_old(token) per record, text records
/// first. Behavior log-probabilities come from the trajectory itself.
pub fn ratios(policy: &Policy, traj: &Trajectory) -> Result<Vec<f64>> {
    let new = trajectory_logprobs(policy, traj)?;
    Ok(new
        .iter()
        .enumerate()
        .map(|(i, lp)| (lp - traj.behavior_logprob(i)).exp())
        .collect())
}

/// Objective value and its exact gradient over one group.
///
/// objective = (1/G) Σᵢ Σⱼ αⱼ·(min(D·Â, clip(D)·Â) − β·klⱼ), summed (not
/// averaged) over records j, with klⱼ = r − log r − 1 against the reference.
pub fn objective_and_grad(
    policy: &Policy,
    policy_ref: &Policy,
    batch: &GroupBatch,
    hyper: &GrpoHyper,
) -> Result<(f64, GradAccumulator)> {
    batch.check_centered()?;
    let g = batch.trajectories.len() as f64;
    let mut objective = 0.0;
    let mut grad = GradAccumulator::zeros_like(policy);

    for (traj, &adv) in batch.trajectories.iter().zip(&batch.advantages) {
        let lp_new = trajectory_logprobs(policy, traj)?;
        let lp_ref = trajectory_logprobs(policy_ref, traj)?;
        for j in 0..traj.record_count() {
            let alpha = if traj.is_text_record(j) { hyper.alpha_text } else { hyper.alpha_image };
            let ratio = (lp_new[j] - traj.behavior_logprob(j)).exp();
            let clipped_ratio = ratio.clamp(1.0 - hyper.clip, 1.0 + hyper.clip);
            let unclipped = ratio * adv;
            let clipped = clipped_ratio * adv;
            let surrogate = unclipped.min(clipped);
            let active = unclipped <= clipped;

            let log_r = lp_ref[j] - lp_new[j];
            let r = log_r.exp();
            let kl = r - log_r - 1.0;

            let (term, weight) = if hyper.alpha_weights_kl {
                (
                    alpha * (surrogate - hyper.kl_coef * kl),
                    alpha * (if active { adv * ratio } else { 0.0 } + hyper.kl_coef * (r - 1.0)),
                )
            } else {
                (
                    alpha * surrogate - hyper.kl_coef * kl,
                    alpha * (if active { adv * ratio } else { 0.0 }) + hyper.kl_coef * (r - 1.0),
                )
            };
            objective += term / g;
            accumulate_logprob_grad(policy, traj, j, weight / g, &mut grad)?;
        }
    }
    Ok((objective, grad))
}

/// Outcome summary of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps_run: usize,
    /// Rollouts carried through every denoising step.
    pub completed_trajectories: u64,
    /// Rollouts screened, including early-cut discards.
    pub evaluated_trajectories: u64,
}

/// Step-by-step training driver. Owns the frozen reference policy and the
/// screening controller; the caller owns the policy and decides when to
/// checkpoint or stop.
pub struct Trainer<'a> {
    world: &'a World,
    hyper: &'a GrpoHyper,
    dgs: Option<&'a DgsConfig>,
    reward: &'a RewardConfig,
    schedule: crate::rollout::MaskSchedule,
    policy_ref: Policy,
    controller: Option<ControllerState>,
    step: usize,
}

impl<'a> Trainer<'a> {
    /// Freezes the reference policy at the current parameters.
    pub fn new(
        world: &'a World,
        policy: &Policy,
        hyper: &'a GrpoHyper,
        dgs: Option<&'a DgsConfig>,
        reward: &'a RewardConfig,
    ) -> Result<Self> {
        hyper.validate()?;
        if let Some(cfg) = dgs {
            cfg.validate()?;
        }
        Ok(Self {
            world,
            hyper,
            dgs,
            reward,
            schedule: cosine_schedule(hyper.t_total, world.config().grid_positions),
            policy_ref: policy.clone(),
            controller: dgs.map(ControllerState::new),
            step: 0,
        })
    }

    /// One optimization step: task construction (pathways alternate 1:1,
    /// even steps instruct-style), group fill (screened when configured,
    /// with one controller update), `inner_epochs` clipped ascents against
    /// the step's frozen behavior policy, and the step's metric record.
    pub fn step(&mut self, policy: &mut Policy, rng: &mut ChaCha8Rng) -> Result<MetricRecord> {
        let started = Instant::now();
        let step = self.step;
        let pathway =
            if step.is_multiple_of(2) { Pathway::VisualInstruct } else { Pathway::TextualAttribute };
        let concept = self.world.concept(rng.random_range(0..self.world.concepts().len()));
        let task = self.world.make_task(concept, pathway, rng);

        let policy_old = policy.clone();
        let batch = match (self.dgs, self.controller.as_mut()) {
            (Some(cfg), Some(state)) => fill_group(
                &policy_old,
                self.world,
                &task,
                self.hyper,
                cfg,
                state,
                &self.schedule,
                self.reward,
                rng,
            )?,
            _ => sample_group(
                &policy_old,
                self.world,
                &task,
                self.hyper,
                &self.schedule,
                self.reward,
                rng,
            )?,
        };

        // The behavior policy is frozen for all inner epochs of this step;
        // the recorded objective is the first epoch's (pre-update) value.
        let mut objective = f64::NAN;
        for epoch in 0..self.hyper.inner_epochs {
            let (value, grad) = objective_and_grad(policy, &self.policy_ref, &batch, self.hyper)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteObjective { step });
            }
            if epoch == 0 {
                objective = value;
            }
            policy.ascend(&grad, self.hyper.learning_rate);
        }
        let mut kl = 0.0;
        for traj in &batch.trajectories {
            kl += kl_estimate(policy, &self.policy_ref, traj)?;
        }
        kl /= batch.trajectories.len() as f64;
        self.step += 1;

        let n = batch.breakdowns.len() as f64;
        let mean = |f: fn(&RewardBreakdown) -> f64| batch.breakdowns.iter().map(f).sum::<f64>() / n;
        Ok(MetricRecord {
            step,
            pathway,
            concept_id: concept.id,
            tier_mean: mean(|b| b.tier),
            ber_mean: mean(|b| b.ber),
            der_mean: mean(|b| b.der),
            fer_mean: mean(|b| b.fer),
            total: RewardStats {
                mean: batch.rewards.iter().sum::<f64>() / n,
                min: batch.rewards.iter().cloned().fold(f64::INFINITY, f64::min),
                max: batch.rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            },
            objective,
            kl,
            advantage_min: batch.advantages.iter().cloned().fold(f64::INFINITY, f64::min),
            advantage_max: batch.advantages.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            dgs: batch.dgs_stats.clone(),
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Runs the full training loop, streaming one record per step into the
/// sink. On a non-finite objective the run aborts with a diagnostic record;
/// everything already streamed stays valid.
pub fn train(
    world: &World,
    policy: &mut Policy,
    hyper: &GrpoHyper,
    dgs: Option<&DgsConfig>,
    reward: &RewardConfig,
    rng: &mut ChaCha8Rng,
    sink: &mut dyn MetricSink,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(world, policy, hyper, dgs, reward)?;
    let mut outcome =
        TrainOutcome { steps_run: 0, completed_trajectories: 0, evaluated_trajectories: 0 };
    for step in 0..hyper.steps {
        let record = match trainer.step(policy, rng) {
            Err(e @ Error::NonFiniteObjective { .. }) => {
                sink.diagnostic(step, "non-finite objective; aborting run")?;
                return Err(e);
            }
            other => other?,
        };
        let g = hyper.group_size as u64;
        outcome.steps_run += 1;
        outcome.completed_trajectories += g;
        outcome.evaluated_trajectories += record.dgs.as_ref().map_or(g, |s| s.evaluated as u64);
        sink.record(&record)?;
    }
    Ok(outcome)
}
