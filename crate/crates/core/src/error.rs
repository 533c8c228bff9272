//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by world construction, policy evaluation, rewards,
/// optimization, and the verification experiments.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration violated one of its documented constraints.
    #[error("configuration error: {0}")]
    Config(String),

    /// A policy, trajectory, or grid was used with incompatible dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The candidate list handed to the text-inference reward was empty.
    #[error("empty candidate list")]
    EmptyCandidates,

    /// A terminal-only reward was evaluated on a grid with masked positions.
    #[error("grid contains masked positions")]
    MaskedGrid,

    /// The face reward was requested for a concept without a face block.
    #[error("face reward requested for non-human concept {0}")]
    NonHumanConcept(usize),

    /// A human concept was scored without a face reward input.
    #[error("missing face reward input for human concept")]
    MissingFaceInput,

    /// Reward weights must form a convex combination.
    #[error("reward weights must sum to 1 (sum = {0})")]
    WeightSum(f64),

    /// Group advantages handed to the objective were not centered.
    #[error("advantages are not group-centered (sum = {0})")]
    UncenteredAdvantages(f64),

    /// The surrogate score was requested away from the configured cut step.
    #[error("rollout is at denoising step {actual}, surrogate cut expects step {expected}")]
    NotAtCutStep { expected: usize, actual: usize },

    /// A selection experiment retained too few samples for stable moments.
    #[error("only {selected} samples selected; increase n")]
    TooFewSelected { selected: usize },

    /// The training objective became non-finite; the run is aborted.
    #[error("non-finite objective at step {step}")]
    NonFiniteObjective { step: usize },

    /// A checkpoint stream did not match the versioned table-dump format.
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    /// The baseline SNR is undefined when the reward mean is zero.
    #[error("baseline signal-to-noise undefined for zero-mean reward model")]
    ZeroMeanBaseline,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
