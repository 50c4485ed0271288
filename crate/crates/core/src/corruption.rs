//! Forward masking process used to build denoising training data.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::MASK_TOKEN;

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Every response token is a masking candidate.
    RandomMask,
    /// Only response tokens that are document identifiers are candidates.
    DocidMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub epsilon: f64,
    pub strategy: MaskStrategy,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            epsilon: DEFAULT_EPSILON,
            strategy: MaskStrategy::DocidMask,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::validation(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// `(1 - epsilon) * t + epsilon`.
    pub fn mask_probability(&self, t: f64) -> f64 {
        (1.0 - self.epsilon) * t + self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSequence {
    /// Masked slots hold [`MASK_TOKEN`].
    pub tokens: Vec<String>,
    pub mask_flags: Vec<bool>,
    pub prompt_len: usize,
    pub t: f64,
    /// Masking probability per position; zero where a position is not eligible.
    pub mask_probs: Vec<f64>,
}

impl MaskedSequence {
    pub fn response_len(&self) -> usize {
        self.tokens.len() - self.prompt_len
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask_flags
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }
}

/// Draws `t ~ U(0, 1)`.
pub fn sample_noise_level<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Masks the response region of `clean` (positions `>= prompt_len`) at noise
/// level `t`, seeding the draw from `cfg.seed`.
pub fn corrupt(
    clean: &[String],
    prompt_len: usize,
    t: f64,
    cfg: &CorruptionConfig,
    identifiers: &[String],
) -> Result<MaskedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    corrupt_with_rng(clean, prompt_len, t, cfg, identifiers, &mut rng)
}

pub fn corrupt_with_rng<R: Rng + ?Sized>(
    clean: &[String],
    prompt_len: usize,
    t: f64,
    cfg: &CorruptionConfig,
    identifiers: &[String],
    rng: &mut R,
) -> Result<MaskedSequence> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::validation(format!(
            "noise level t={t} outside [0, 1]"
        )));
    }
    if prompt_len > clean.len() {
        return Err(Error::validation(format!(
            "prompt length {prompt_len} exceeds sequence length {}",
            clean.len()
        )));
    }
    let ids: HashSet<&str> = identifiers.iter().map(String::as_str).collect();
    let p_mask = cfg.mask_probability(t);
    let mut tokens = clean.to_vec();
    let mut mask_flags = vec![false; clean.len()];
    let mut mask_probs = vec![0.0; clean.len()];
    for i in prompt_len..clean.len() {
        let eligible = match cfg.strategy {
            MaskStrategy::RandomMask => true,
            MaskStrategy::DocidMask => ids.contains(clean[i].as_str()),
        };
        if !eligible {
            continue;
        }
        mask_probs[i] = p_mask;
        if rng.random::<f64>() < p_mask {
            mask_flags[i] = true;
            tokens[i] = MASK_TOKEN.to_string();
        }
    }
    Ok(MaskedSequence {
        tokens,
        mask_flags,
        prompt_len,
        t,
        mask_probs,
    })
}
