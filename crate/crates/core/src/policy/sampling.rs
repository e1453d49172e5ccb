use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyParams, ProbabilityVector};
use crate::error::{GemError, Result};
use crate::seed::rng_from_seed;
use crate::tokens::{TokenId, TokenSequence};

/// Temperature / nucleus sampling settings for candidate generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// `0` selects greedy decoding.
    pub temperature: f64,
    pub top_p: f64,
    /// Maximum number of sampled tokens before EOS is forced.
    pub max_len: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 1.0, top_p: 0.95, max_len: 6 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GemError::InvalidConfig(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GemError::InvalidConfig(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_len == 0 {
            return Err(GemError::InvalidConfig("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sample one response autoregressively.
///
/// BOS is never emitted. Generation stops after EOS or after `max_len`
/// tokens, in which case EOS is appended.
pub fn sample_response(
    params: &PolicyParams,
    prompt: &TokenSequence,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<TokenSequence> {
    cfg.validate()?;
    let vocab = *params.vocab();
    let bos = vocab.bos() as usize;
    let eos = vocab.eos();
    let mut rng = rng_from_seed(seed);
    let mut history = prompt.tokens().to_vec();
    let mut out: Vec<TokenId> = Vec::with_capacity(cfg.max_len + 1);

    while out.len() < cfg.max_len {
        let mut z = params.logits(&history)?;
        z[bos] = f64::NEG_INFINITY;
        let next = if cfg.temperature == 0.0 {
            ProbabilityVector::softmax(&z).argmax()
        } else {
            z.iter_mut().for_each(|x| *x /= cfg.temperature);
            let probs = ProbabilityVector::softmax(&z);
            draw_nucleus(probs.as_slice(), cfg.top_p, rng.gen::<f64>())
        } as TokenId;
        out.push(next);
        history.push(next);
        if next == eos {
            break;
        }
    }
    if out.last() != Some(&eos) {
        out.push(eos);
    }
    TokenSequence::response(out, &vocab)
}

/// Sort tokens by descending probability (lower id first on ties), keep the
/// shortest prefix whose mass reaches `top_p`, and pick from it with the
/// uniform draw `u ∈ [0, 1)` after renormalisation.
pub(crate) fn draw_nucleus(probs: &[f64], top_p: f64, u: f64) -> usize {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));

    let mut kept = 0;
    let mut mass = 0.0;
    for &i in &order {
        mass += probs[i];
        kept += 1;
        if mass >= top_p - 1e-12 {
            break;
        }
    }
    let nucleus = &order[..kept];
    let target = u * mass;
    let mut acc = 0.0;
    for &i in nucleus {
        acc += probs[i];
        if target < acc {
            return i;
        }
    }
    // Rounding can leave `target` a hair above the running sum.
    *nucleus
        .iter()
        .rev()
        .find(|&&i| probs[i] > 0.0)
        .unwrap_or(&nucleus[0])
}
