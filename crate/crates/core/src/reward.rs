//! Four-expert reward ensemble over a completed (or partially committed)
//! trajectory.
//!
//! - `tier`: text-inference consistency — cosine similarities between the
//!   reasoning output's token bag and each candidate's, scored against the
//!   binary truth vector as ½(2 − ‖s − y‖₂).
//! - `ber`: prompt-grid alignment — fraction of committed positions in
//!   asserted blocks that match the asserted value's reference token.
//!   Defined on partial grids so it can double as the early-cut surrogate.
//! - `der`: identity preservation — terminal match fraction against the
//!   concept's reference grid.
//! - `fer`: face fidelity — match fraction restricted to the face block;
//!   human concepts only.
//!
//! Match fractions are the cosine similarities of indicator feature vectors,
//! so the ensemble keeps cosine functional forms while staying cheap to
//! evaluate exactly.

use crate::error::{Error, Result};
use crate::policy::PolicyDims;
use crate::rollout::Trajectory;
use crate::world::{grid_token, CompoundPrompt, Concept, TokenGrid, World};
use serde::{Deserialize, Serialize};

/// Convex weights over (tier, ber, der, fer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct RewardWeights {
    w: [f64; 4],
}

impl RewardWeights {
    pub fn new(w: [f64; 4]) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::WeightSum(sum));
        }
        if w.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config("reward weights must lie in [0,1]".into()));
        }
        Ok(Self { w })
    }

    /// Default weights for non-human concepts: face expert disabled.
    pub fn for_object() -> Self {
        Self { w: [0.4, 0.3, 0.3, 0.0] }
    }

    /// Default weights for human concepts.
    pub fn for_human() -> Self {
        Self { w: [0.4, 0.2, 0.2, 0.2] }
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.w
    }
}

impl TryFrom<[f64; 4]> for RewardWeights {
    type Error = Error;
    fn try_from(w: [f64; 4]) -> Result<Self> {
        Self::new(w)
    }
}

impl From<RewardWeights> for [f64; 4] {
    fn from(w: RewardWeights) -> [f64; 4] {
        w.w
    }
}

/// Weight vectors per concept category, overridable per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub object_weights: RewardWeights,
    pub human_weights: RewardWeights,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { object_weights: RewardWeights::for_object(), human_weights: RewardWeights::for_human() }
    }
}

/// Expert inputs for the weighted total; `fer` must be present iff the
/// concept is human.
#[derive(Debug, Clone, Copy)]
pub struct RewardInputs {
    pub tier: f64,
    pub ber: f64,
    pub der: f64,
    pub fer: Option<f64>,
}

/// Per-expert scores and their weighted total, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub tier: f64,
    pub ber: f64,
    pub der: f64,
    /// 0 by convention for non-human concepts.
    pub fer: f64,
    pub total: f64,
}

fn token_bag(tokens: &[u32], vocab: u32) -> Vec<f64> {
    let mut bag = vec![0.0; vocab as usize];
    for &t in tokens {
        bag[t as usize] += 1.0;
    }
    bag
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Text-inference reward: ½(2 − ‖s − y‖₂) with sᵢ the bag-of-token cosine
/// between the reasoning output and candidate i, clamped into [0, 1] (the
/// distance can exceed 2 once more than four candidates are in play).
pub fn tier(ir_tokens: &[u32], candidates: &[Vec<u32>], truth: &[bool], text_vocab: u32) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    debug_assert_eq!(candidates.len(), truth.len());
    let ir_bag = token_bag(ir_tokens, text_vocab);
    let dist_sq: f64 = candidates
        .iter()
        .zip(truth)
        .map(|(cand, &is_true)| {
            let s = cosine(&ir_bag, &token_bag(cand, text_vocab));
            let y = if is_true { 1.0 } else { 0.0 };
            (s - y) * (s - y)
        })
        .sum();
    Ok((0.5 * (2.0 - dist_sq.sqrt())).clamp(0.0, 1.0))
}

/// Prompt-grid alignment over committed positions in asserted blocks; 0 when
/// no such position exists. Accepts partial grids.
pub fn ber(grid: &TokenGrid, cp: &CompoundPrompt, dims: &PolicyDims) -> f64 {
    let block_size = dims.block_size();
    let mut relevant = 0usize;
    let mut matching = 0usize;
    for (k, token) in grid.tokens.iter().enumerate() {
        let (Some(token), Some(value)) = (token, cp.asserted[k / block_size]) else {
            continue;
        };
        relevant += 1;
        if *token == grid_token(value, k, block_size, dims.codebook_size) {
            matching += 1;
        }
    }
    if relevant == 0 {
        0.0
    } else {
        matching as f64 / relevant as f64
    }
}

/// Identity preservation: fraction of positions matching the reference grid.
/// Terminal-only; masked positions are an error.
pub fn der(grid: &TokenGrid, reference: &TokenGrid) -> Result<f64> {
    if grid.tokens.len() != reference.tokens.len() {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} positions, reference has {}",
            grid.tokens.len(),
            reference.tokens.len()
        )));
    }
    if !grid.is_complete() || !reference.is_complete() {
        return Err(Error::MaskedGrid);
    }
    let matching = grid.tokens.iter().zip(&reference.tokens).filter(|(a, b)| a == b).count();
    Ok(matching as f64 / grid.tokens.len() as f64)
}

/// Face fidelity: match fraction restricted to the concept's face block.
pub fn fer(grid: &TokenGrid, reference: &TokenGrid, concept: &Concept, dims: &PolicyDims) -> Result<f64> {
    let Some(face_block) = concept.face_block else {
        return Err(Error::NonHumanConcept(concept.id));
    };
    if grid.tokens.len() != reference.tokens.len() {
        return Err(Error::DimensionMismatch("face grids differ in length".into()));
    }
    if !grid.is_complete() || !reference.is_complete() {
        return Err(Error::MaskedGrid);
    }
    let block_size = dims.block_size();
    let range = face_block * block_size..(face_block + 1) * block_size;
    let matching = range
        .clone()
        .filter(|&k| grid.tokens[k] == reference.tokens[k])
        .count();
    Ok(matching as f64 / block_size as f64)
}

/// Weighted total. Non-human concepts never read the face input and record
/// a face component of 0.
pub fn total_reward(inputs: RewardInputs, weights: RewardWeights, is_human: bool) -> Result<RewardBreakdown> {
    let fer = if is_human { inputs.fer.ok_or(Error::MissingFaceInput)? } else { 0.0 };
    let components = [inputs.tier, inputs.ber, inputs.der, fer];
    let total = components.iter().zip(&weights.w).map(|(c, w)| c * w).sum();
    Ok(RewardBreakdown { tier: inputs.tier, ber: inputs.ber, der: inputs.der, fer, total })
}

/// Scores a completed trajectory: tier on the reasoning tokens, ber/der/fer
/// on the terminal grid, with the weight vector picked by concept category.
pub fn score_trajectory(
    world: &World,
    task_concept: &Concept,
    candidates: &[Vec<u32>],
    truth: &[bool],
    traj: &Trajectory,
    config: &RewardConfig,
) -> Result<RewardBreakdown> {
    let dims = traj.dims;
    let reference = world.reference_grid(task_concept);
    let final_grid = traj.final_grid();
    let inputs = RewardInputs {
        tier: tier(&traj.ir_tokens, candidates, truth, dims.text_vocab)?,
        ber: ber(final_grid, &traj.compound_prompt, &dims),
        der: der(final_grid, &reference)?,
        fer: task_concept
            .is_human
            .then(|| fer(final_grid, &reference, task_concept, &dims))
            .transpose()?,
    };
    let weights = if task_concept.is_human { config.human_weights } else { config.object_weights };
    total_reward(inputs, weights, task_concept.is_human)
}
