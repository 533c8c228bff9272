//! Synthetic personalization world: concepts with discrete attribute vectors,
//! reference token grids, and two-pathway reasoning tasks.
//!
//! A concept is an attribute vector; its reference grid is a deterministic
//! token layout derived from those attributes. A task queries exactly one
//! attribute: the base prompt asserts every *other* attribute's true value,
//! so the queried one can only enter the compound prompt through the Phase-I
//! reasoning output. That makes reasoning the sole channel between
//! understanding and generation quality.
//!
//! Text vocabulary layout: token indices `[0, V)` are value tokens (token v
//! asserts attribute value v), everything at and above `V` is filler. The
//! first value token appearing in a reasoning sequence decides the asserted
//! value for the queried attribute.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which reasoning pathway produced a task: instruct-style reasoning over a
/// reference, or attribute reasoning over candidate information snippets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pathway {
    VisualInstruct,
    TextualAttribute,
}

/// World dimensions and generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    /// Number of concepts generated from the seed.
    #[serde(default = "default_num_concepts")]
    pub num_concepts: usize,
    /// Attribute count A.
    pub num_attributes: usize,
    /// Values per attribute V.
    pub values_per_attribute: u32,
    /// Reasoning-sequence length in tokens.
    pub text_len: usize,
    /// Grid positions N; must be divisible by `num_attributes`.
    pub grid_positions: usize,
    /// Codebook size C for grid tokens.
    pub codebook_size: u32,
    /// Text vocabulary size; indices `[0, V)` are value tokens.
    pub text_vocab: u32,
    /// Fraction of concepts flagged human (face-reward eligible).
    #[serde(default)]
    pub human_fraction: f64,
    /// Candidate information snippets per task (one true, rest distractors).
    #[serde(default = "default_candidates_per_task")]
    pub candidates_per_task: usize,
    /// Seed for concept generation.
    pub seed: u64,
}

fn default_num_concepts() -> usize {
    1
}

fn default_candidates_per_task() -> usize {
    4
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.num_concepts < 1 {
            return cfg("num_concepts must be >= 1".into());
        }
        if self.num_attributes < 1 {
            return cfg("num_attributes (A) must be >= 1".into());
        }
        if self.values_per_attribute < 1 {
            return cfg("values_per_attribute (V) must be >= 1".into());
        }
        if self.text_len < 1 {
            return cfg("text_len must be >= 1".into());
        }
        if self.grid_positions < 1 {
            return cfg("grid_positions (N) must be >= 1".into());
        }
        if self.codebook_size < 1 {
            return cfg("codebook_size (C) must be >= 1".into());
        }
        if !self.grid_positions.is_multiple_of(self.num_attributes) {
            return cfg(format!(
                "grid_positions (N={}) not divisible by num_attributes (A={})",
                self.grid_positions, self.num_attributes
            ));
        }
        if self.text_vocab < self.values_per_attribute {
            return cfg(format!(
                "text_vocab ({}) must be >= values_per_attribute ({})",
                self.text_vocab, self.values_per_attribute
            ));
        }
        if self.text_vocab == self.values_per_attribute {
            return cfg(format!(
                "text_vocab ({}) must exceed values_per_attribute ({}): at least one filler token is reserved",
                self.text_vocab, self.values_per_attribute
            ));
        }
        if !(0.0..=1.0).contains(&self.human_fraction) {
            return cfg(format!("human_fraction ({}) must lie in [0,1]", self.human_fraction));
        }
        if self.candidates_per_task < 2 {
            return cfg("candidates_per_task must be >= 2 (one true candidate plus distractors)".into());
        }
        if self.candidates_per_task - 1 > self.distractor_capacity() {
            return cfg(format!(
                "candidates_per_task ({}) exceeds the distinct-distractor capacity ({}) of V={}, text_len={}, text_vocab={}",
                self.candidates_per_task,
                self.distractor_capacity() + 1,
                self.values_per_attribute,
                self.text_len,
                self.text_vocab
            ));
        }
        Ok(())
    }

    /// Positions per attribute block.
    pub fn block_size(&self) -> usize {
        self.grid_positions / self.num_attributes
    }

    /// Filler tokens available above the value-token range.
    pub fn filler_count(&self) -> u32 {
        self.text_vocab - self.values_per_attribute
    }

    /// Distinct distractor sequences constructible (wrong value × variant).
    fn distractor_capacity(&self) -> usize {
        let wrong_values = self.values_per_attribute.saturating_sub(1) as usize;
        let variants = 1 + (self.text_len - 1).saturating_mul(self.filler_count() as usize);
        wrong_values.saturating_mul(variants)
    }
}

/// One generated concept: its attribute vector and face metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: usize,
    pub attributes: Vec<u32>,
    pub is_human: bool,
    /// Attribute block scored by the face reward; present iff `is_human`.
    pub face_block: Option<usize>,
}

/// A token grid at some denoising step; `None` marks a masked position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub tokens: Vec<Option<u32>>,
    pub step_index: usize,
}

impl TokenGrid {
    pub fn fully_masked(positions: usize) -> Self {
        Self { tokens: vec![None; positions], step_index: 0 }
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.tokens.iter().all(|t| t.is_some())
    }
}

/// One reasoning task over a concept: a queried attribute, the base prompt
/// asserting everything else, candidate information, and the gold reasoning
/// sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub concept_id: usize,
    pub pathway: Pathway,
    pub queried_attribute: usize,
    /// Value tokens asserting each non-queried attribute, ascending by index.
    pub base_prompt: Vec<u32>,
    pub candidates: Vec<Vec<u32>>,
    /// Exactly one entry true: the candidate matching the concept.
    pub truth_vector: Vec<bool>,
    /// Reasoning sequence that encodes the queried attribute's true value.
    pub gold_ir: Vec<u32>,
}

/// The generation-phase conditioning signal: base-prompt assertions plus the
/// value decoded from the reasoning output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompoundPrompt {
    pub pathway: Pathway,
    /// Asserted value per attribute index; `None` = unasserted.
    pub asserted: Vec<Option<u32>>,
    /// Base prompt ⊕ reasoning tokens.
    pub tokens: Vec<u32>,
}

impl CompoundPrompt {
    /// Builds the compound prompt for a task from a reasoning sequence.
    ///
    /// The base prompt contributes every non-queried assertion; the queried
    /// attribute is asserted to the first value-range token of `ir_tokens`,
    /// or left unasserted when none appears. Wrong reasoning output
    /// propagates as a wrong assertion by design.
    pub fn build(task: &TaskInstance, ir_tokens: &[u32], num_attributes: usize, values_per_attribute: u32) -> Self {
        let mut asserted = vec![None; num_attributes];
        let mut bp = task.base_prompt.iter();
        for (a, slot) in asserted.iter_mut().enumerate() {
            if a != task.queried_attribute {
                *slot = bp.next().copied();
            }
        }
        asserted[task.queried_attribute] =
            ir_tokens.iter().copied().find(|&t| t < values_per_attribute);
        let mut tokens = task.base_prompt.clone();
        tokens.extend_from_slice(ir_tokens);
        Self { pathway: task.pathway, asserted, tokens }
    }
}

/// An immutable generated world; safe to share across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    config: WorldConfig,
    concepts: Vec<Concept>,
}

impl World {
    /// Generates the concept table deterministically from the config seed.
    ///
    /// Attributes are uniform over `[0, V)`; the first ⌈human_fraction·n⌉
    /// concepts are flagged human and get a face block drawn from the same
    /// stream.
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let humans = (config.human_fraction * config.num_concepts as f64).ceil() as usize;
        let concepts = (0..config.num_concepts)
            .map(|id| {
                let attributes = (0..config.num_attributes)
                    .map(|_| rng.random_range(0..config.values_per_attribute))
                    .collect();
                let is_human = id < humans;
                let face_block = is_human.then(|| rng.random_range(0..config.num_attributes));
                Concept { id, attributes, is_human, face_block }
            })
            .collect();
        Ok(Self { config, concepts })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn concept(&self, id: usize) -> &Concept {
        &self.concepts[id]
    }

    /// Reference token for value `value` at grid position `k`:
    /// `(value · block_size + offset(k)) mod C`, independent of the block's
    /// attribute index.
    pub fn grid_token(&self, value: u32, k: usize) -> u32 {
        grid_token(value, k, self.config.block_size(), self.config.codebook_size)
    }

    /// The concept's fully unmasked reference grid. Deterministic; depends
    /// only on the attribute vector.
    pub fn reference_grid(&self, concept: &Concept) -> TokenGrid {
        let block = self.config.block_size();
        let tokens = (0..self.config.grid_positions)
            .map(|k| Some(self.grid_token(concept.attributes[k / block], k)))
            .collect();
        TokenGrid { tokens, step_index: 0 }
    }

    /// Builds a task querying one attribute of `concept` for `pathway`.
    ///
    /// Candidate sequences are value-pure (`[v; text_len]`) with a filler
    /// substitution distinguishing repeats of the same wrong value, so the
    /// candidate list is pairwise distinct and the gold sequence matches the
    /// true candidate exactly.
    pub fn make_task(&self, concept: &Concept, pathway: Pathway, rng: &mut ChaCha8Rng) -> TaskInstance {
        let cfg = &self.config;
        let queried = rng.random_range(0..cfg.num_attributes);
        let true_value = concept.attributes[queried];

        let mut wrong_values: Vec<u32> =
            (0..cfg.values_per_attribute).filter(|&v| v != true_value).collect();
        wrong_values.shuffle(rng);

        let l = cfg.candidates_per_task;
        let mut candidates: Vec<Vec<u32>> = (0..l - 1)
            .map(|j| {
                let value = wrong_values[j % wrong_values.len()];
                let variant = j / wrong_values.len();
                self.candidate_tokens(value, variant)
            })
            .collect();
        let true_pos = rng.random_range(0..l);
        candidates.insert(true_pos, self.candidate_tokens(true_value, 0));
        let mut truth_vector = vec![false; l];
        truth_vector[true_pos] = true;

        debug_assert!(
            (0..l).all(|i| (i + 1..l).all(|j| candidates[i] != candidates[j])),
            "candidates must be pairwise distinct"
        );

        let base_prompt = concept
            .attributes
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != queried)
            .map(|(_, &v)| v)
            .collect();

        TaskInstance {
            concept_id: concept.id,
            pathway,
            queried_attribute: queried,
            base_prompt,
            candidates,
            truth_vector,
            gold_ir: self.candidate_tokens(true_value, 0),
        }
    }

    /// See [`CompoundPrompt::build`].
    pub fn compound_prompt(&self, task: &TaskInstance, ir_tokens: &[u32]) -> CompoundPrompt {
        CompoundPrompt::build(task, ir_tokens, self.config.num_attributes, self.config.values_per_attribute)
    }

    /// Writes concepts as line-delimited JSON records.
    pub fn export_concepts(&self, mut w: impl std::io::Write) -> Result<()> {
        for c in &self.concepts {
            let attrs = c
                .attributes
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let face = match c.face_block {
                Some(b) => b.to_string(),
                None => "null".into(),
            };
            writeln!(
                w,
                "{{\"id\":{},\"attributes\":[{}],\"is_human\":{},\"face_block\":{}}}",
                c.id, attrs, c.is_human, face
            )?;
        }
        Ok(())
    }

    /// Candidate sequence for `value`: the value token everywhere, except
    /// variant u > 0 swaps one position to a filler token. The (position,
    /// filler) pair encodes the variant injectively.
    fn candidate_tokens(&self, value: u32, variant: usize) -> Vec<u32> {
        let cfg = &self.config;
        let mut tokens = vec![value; cfg.text_len];
        if variant > 0 {
            let u = variant - 1;
            let pos = 1 + u % (cfg.text_len - 1);
            let filler = cfg.values_per_attribute + ((u / (cfg.text_len - 1)) as u32 % cfg.filler_count());
            tokens[pos] = filler;
        }
        tokens
    }
}

/// Reference token formula shared by the world and the alignment reward.
#[inline]
pub fn grid_token(value: u32, k: usize, block_size: usize, codebook: u32) -> u32 {
    let offset = (k % block_size) as u32;
    (value * block_size as u32 + offset) % codebook
}
