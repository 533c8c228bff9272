//! Dynamic group scaling: screen rollouts with a cheap surrogate at an early
//! denoising cut, complete only candidates whose score clears an adaptive
//! threshold, and steer that threshold toward a target pass rate.
//!
//! The surrogate is the partial-grid alignment reward. By default it is
//! shifted to S = 1 + R̃ ∈ [1, 2]: the multiplicative update T ← T^(1+g·Δ)
//! only moves the threshold in the corrective direction when log T > 0, and
//! the linearized stability condition assumes that sign. The raw [0, 1]
//! domain stays available behind `score_shift = false` for study.
//!
//! On trend conflict (momentum and error disagree in sign) the controller
//! reduces gain to μ/ε₀ by default; `literal_conflict_gain` switches to the
//! additive μ − ε₀ form, which with ε₀ = 2 reverses the update sign rather
//! than damping it.

use crate::error::{Error, Result};
use crate::grpo::{GroupBatch, GrpoHyper};
use crate::policy::Policy;
use crate::reward::{ber, score_trajectory, RewardConfig};
use crate::rollout::{MaskSchedule, RolloutState};
use crate::world::{TaskInstance, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Screening and controller parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgsConfig {
    /// Fraction of denoising steps completed before scoring the surrogate.
    pub cut_fraction: f64,
    /// Target fraction of screened candidates that clear the threshold.
    pub target_pass_rate: f64,
    /// Controller gain μ.
    pub gain: f64,
    /// Momentum decay η of the threshold-trend filter.
    pub momentum_decay: f64,
    /// Gain divisor ε₀ applied on trend conflict.
    pub conflict_gain: f64,
    /// Screening budget per group; hitting it completes the best rejects.
    pub max_attempts_per_group: usize,
    /// Operate on S = 1 + R̃ (default) instead of raw R̃.
    pub score_shift: bool,
    /// Use the additive μ − ε₀ conflict form instead of the μ/ε₀ divisor.
    pub literal_conflict_gain: bool,
}

impl Default for DgsConfig {
    fn default() -> Self {
        Self {
            cut_fraction: 0.2,
            target_pass_rate: 0.25,
            gain: 0.12,
            momentum_decay: 0.8,
            conflict_gain: 2.0,
            max_attempts_per_group: 256,
            score_shift: true,
            literal_conflict_gain: false,
        }
    }
}

impl DgsConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if !(self.cut_fraction > 0.0 && self.cut_fraction < 1.0) {
            return cfg(format!("cut_fraction ({}) must lie in (0,1)", self.cut_fraction));
        }
        if !(self.target_pass_rate > 0.0 && self.target_pass_rate <= 0.5) {
            return cfg(format!(
                "target_pass_rate ({}) must lie in (0, 0.5]",
                self.target_pass_rate
            ));
        }
        if self.gain <= 0.0 {
            return cfg(format!("gain ({}) must be > 0", self.gain));
        }
        if !(0.0..1.0).contains(&self.momentum_decay) {
            return cfg(format!("momentum_decay ({}) must lie in [0,1)", self.momentum_decay));
        }
        if self.conflict_gain <= 0.0 {
            return cfg(format!("conflict_gain ({}) must be > 0", self.conflict_gain));
        }
        if self.max_attempts_per_group < 1 {
            return cfg("max_attempts_per_group must be >= 1".into());
        }
        Ok(())
    }

    /// Denoising step at which the surrogate is evaluated: ⌈cut·T⌉.
    pub fn cut_step(&self, total_steps: usize) -> usize {
        (self.cut_fraction * total_steps as f64).ceil() as usize
    }

    /// Operating domain of the threshold.
    pub fn domain(&self) -> (f64, f64) {
        if self.score_shift {
            (1.0, 2.0)
        } else {
            (0.0, 1.0)
        }
    }
}

/// Threshold-controller state, updated once per filled group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub threshold: f64,
    pub momentum: f64,
    pub iteration: u64,
}

impl ControllerState {
    /// Starts at the domain midpoint with no accumulated trend.
    pub fn new(config: &DgsConfig) -> Self {
        let (lo, hi) = config.domain();
        Self { threshold: 0.5 * (lo + hi), momentum: 0.0, iteration: 0 }
    }
}

/// Surrogate score of a screening rollout paused at the cut step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateScore {
    /// Partial-grid alignment reward in [0, 1].
    pub raw: f64,
    /// Value compared against the threshold (shifted when configured).
    pub score: f64,
}

/// Scores a paused rollout; the rollout must sit exactly at the cut step.
pub fn surrogate(partial: &RolloutState<'_>, config: &DgsConfig, total_steps: usize) -> Result<SurrogateScore> {
    let expected = config.cut_step(total_steps);
    if partial.steps_done() != expected {
        return Err(Error::NotAtCutStep { expected, actual: partial.steps_done() });
    }
    let raw = ber(partial.current_grid(), partial.compound_prompt(), &partial.dims());
    let score = if config.score_shift { 1.0 + raw } else { raw };
    Ok(SurrogateScore { raw, score })
}

/// Screening outcome for one filled group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillReport {
    /// Trajectories screened, accepted or not.
    pub evaluated: usize,
    /// Threshold passers over evaluations (G/N when not truncated).
    pub pass_rate: f64,
    /// The screening budget ran out and best-scoring rejects were completed.
    pub truncated: bool,
    /// Threshold in force while this group was screened.
    pub threshold: f64,
    /// Controller momentum before this group's update.
    pub momentum: f64,
}

/// Fills a group by rejection: each candidate is rolled to the cut step and
/// completed only if its surrogate strictly exceeds the threshold snapshot.
/// Screening stops at `group_size` acceptances or at the attempt budget, in
/// which case the highest-scoring rejects are completed and the report is
/// flagged truncated. The controller updates once, after the group fills.
#[allow(clippy::too_many_arguments)]
pub fn fill_group(
    policy_old: &Policy,
    world: &World,
    task: &TaskInstance,
    hyper: &GrpoHyper,
    config: &DgsConfig,
    state: &mut ControllerState,
    schedule: &MaskSchedule,
    reward: &RewardConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GroupBatch> {
    debug_assert!(hyper.group_size >= 2);
    let threshold = state.threshold;
    let cut = config.cut_step(schedule.total_steps);
    let budget = config.max_attempts_per_group.max(hyper.group_size);

    let mut accepted = Vec::with_capacity(hyper.group_size);
    let mut rejects: Vec<(RolloutState<'_>, f64)> = Vec::new();
    let mut attempts = 0usize;
    while accepted.len() < hyper.group_size && attempts < budget {
        attempts += 1;
        let child = ChaCha8Rng::seed_from_u64(rng.random());
        let mut partial = RolloutState::begin(policy_old, task, schedule, hyper.ratio_coverage, child);
        partial.advance_steps(cut);
        let score = surrogate(&partial, config, schedule.total_steps)?;
        if score.score > threshold {
            accepted.push(partial.finish());
        } else {
            rejects.push((partial, score.score));
        }
    }

    let passed = accepted.len();
    let truncated = passed < hyper.group_size;
    if truncated {
        // Stable sort keeps earlier attempts first among score ties.
        rejects.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite surrogate"));
        let missing = hyper.group_size - accepted.len();
        for (partial, _) in rejects.into_iter().take(missing) {
            accepted.push(partial.finish());
        }
    }

    let pass_rate = passed as f64 / attempts as f64;
    let report = FillReport {
        evaluated: attempts,
        pass_rate,
        truncated,
        threshold,
        momentum: state.momentum,
    };
    *state = controller_update(*state, pass_rate, config);

    let concept = world.concept(task.concept_id);
    let breakdowns = accepted
        .iter()
        .map(|t| score_trajectory(world, concept, &task.candidates, &task.truth_vector, t, reward))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupBatch::from_scored(accepted, breakdowns, Some(report)))
}

/// One controller step: Δ = PR − TPR, conflict-damped gain, multiplicative
/// threshold update T ← T^(1+gain·Δ) clamped to the operating domain, and a
/// low-pass momentum of threshold changes.
pub fn controller_update(state: ControllerState, pass_rate: f64, config: &DgsConfig) -> ControllerState {
    debug_assert!((0.0..=1.0).contains(&pass_rate));
    let delta = pass_rate - config.target_pass_rate;
    let conflict = state.momentum * delta < 0.0;
    let gain = if conflict {
        if config.literal_conflict_gain {
            config.gain - config.conflict_gain
        } else {
            config.gain / config.conflict_gain
        }
    } else {
        config.gain
    };
    let (lo, hi) = config.domain();
    let margin = 1e-6;
    let next = state
        .threshold
        .powf(1.0 + gain * delta)
        .clamp(lo + margin, hi - margin);
    ControllerState {
        threshold: next,
        momentum: config.momentum_decay * state.momentum
            + (1.0 - config.momentum_decay) * (next - state.threshold),
        iteration: state.iteration + 1,
    }
}

/// Linearized local stability of the threshold recursion around the target
/// quantile T*: stable iff 0 < μ < 2 / (f(T*)·T*), where f is the surrogate
/// density. The boundary itself is reported unstable.
pub fn stability_check(gain: f64, density_at_target: f64, target: f64) -> bool {
    debug_assert!(density_at_target > 0.0 && target > 0.0);
    gain > 0.0 && gain * density_at_target * target < 2.0
}
