//! Cognitive filtering: sample a group of candidates, score each one from its
//! token-level entropy profile, rank, drop outliers and derive pairwise
//! preferences.
//!
//! The score rewards chains that are uncertain at a few intermediate "fork"
//! positions but confident at the answer:
//!
//! ```text
//! S(a) = -H_final(a) + λ · mean(top-m intermediate H_t)
//! ```

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::policy::{sample_response, PolicyParams, ProbabilityVector, SamplingConfig};
use crate::records::{PreferenceRecord, Source};
use crate::seed::derive_seed;
use crate::tokens::{TokenId, TokenSequence};

/// Shannon entropy in nats, with `0·ln 0 = 0`.
///
/// The result is clamped to `[0, ln n]`; the true value always lies there and
/// only rounding can step outside.
pub fn token_entropy(p: &ProbabilityVector) -> f64 {
    let h: f64 = p
        .as_slice()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum();
    h.clamp(0.0, (p.len() as f64).ln())
}

/// Per-position entropies of one response plus the positions holding the
/// final answer. Positions are 0-based indices into the response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyProfile {
    entropies: Vec<f64>,
    final_positions: Vec<usize>,
    eos_position: Option<usize>,
}

impl EntropyProfile {
    pub fn new(
        entropies: Vec<f64>,
        final_positions: Vec<usize>,
        eos_position: Option<usize>,
    ) -> Result<Self> {
        let n = entropies.len();
        if final_positions.is_empty() {
            return Err(GemError::InvalidSequence("final-answer positions are empty".into()));
        }
        if final_positions.iter().chain(eos_position.iter()).any(|&i| i >= n) {
            return Err(GemError::InvalidSequence(format!(
                "profile positions out of range for length {n}"
            )));
        }
        if entropies.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(GemError::InvalidSequence("entropies must be finite and >= 0".into()));
        }
        Ok(Self { entropies, final_positions, eos_position })
    }

    pub fn entropies(&self) -> &[f64] {
        &self.entropies
    }

    pub fn final_positions(&self) -> &[usize] {
        &self.final_positions
    }

    pub fn len(&self) -> usize {
        self.entropies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entropies.is_empty()
    }

    /// Mean entropy over the final-answer positions.
    pub fn final_entropy(&self) -> f64 {
        self.final_positions.iter().map(|&i| self.entropies[i]).sum::<f64>()
            / self.final_positions.len() as f64
    }

    /// Entropies at positions that are neither final-answer nor the EOS step.
    pub fn intermediate_entropies(&self) -> Vec<f64> {
        (0..self.entropies.len())
            .filter(|i| !self.final_positions.contains(i) && Some(*i) != self.eos_position)
            .map(|i| self.entropies[i])
            .collect()
    }
}

/// Positions of the final answer within `response`.
///
/// With a marker: the tokens strictly between the last marker and the
/// closing EOS, or the marker itself when nothing sits between them.
/// Without one: the last two content positions before EOS. A bare `[EOS]`
/// response uses the EOS position.
pub fn final_answer_positions(response: &[TokenId], marker: Option<TokenId>) -> Vec<usize> {
    let content = response.len().saturating_sub(1);
    let marker_at = marker.and_then(|m| response[..content].iter().rposition(|&t| t == m));
    match marker_at {
        Some(m) if m + 1 < content => (m + 1..content).collect(),
        Some(m) => vec![m],
        None if content == 0 => vec![0],
        None => (content.saturating_sub(2)..content).collect(),
    }
}

/// Teacher-forced entropy profile of `response` under `params`.
pub fn entropy_profile(
    params: &PolicyParams,
    prompt: &TokenSequence,
    response: &TokenSequence,
    marker: Option<TokenId>,
) -> Result<EntropyProfile> {
    let mut entropies = Vec::with_capacity(response.len());
    params.for_each_position(prompt, response, |_, _, z, _| {
        entropies.push(token_entropy(&ProbabilityVector::softmax(z)));
    })?;
    let final_positions = final_answer_positions(response.tokens(), marker);
    EntropyProfile::new(entropies, final_positions, Some(response.len() - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    None,
    DropBottomFraction,
    AbsoluteThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Weight λ of the intermediate-entropy term.
    pub lambda: f64,
    /// Number m of highest-entropy intermediate tokens to average. `None`
    /// means `max(1, ⌈0.1·n⌉)` for a response of n tokens.
    pub top_m: Option<usize>,
    pub filter_mode: FilterMode,
    /// Fraction for `drop_bottom_fraction`, threshold for `absolute_threshold`.
    pub filter_value: f64,
    /// Token that opens the final answer; filled in from the task.
    pub answer_marker: Option<TokenId>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            top_m: None,
            filter_mode: FilterMode::DropBottomFraction,
            filter_value: 0.2,
            answer_marker: None,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(GemError::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.top_m == Some(0) {
            return Err(GemError::InvalidConfig("top_m must be at least 1".into()));
        }
        match self.filter_mode {
            FilterMode::DropBottomFraction if !(0.0..=1.0).contains(&self.filter_value) => {
                Err(GemError::InvalidConfig(format!(
                    "drop_bottom_fraction needs filter_value in [0, 1], got {}",
                    self.filter_value
                )))
            }
            FilterMode::AbsoluteThreshold if !self.filter_value.is_finite() => {
                Err(GemError::InvalidConfig("filter_value must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn top_m_for(&self, response_len: usize) -> usize {
        self.top_m
            .unwrap_or_else(|| ((0.1 * response_len as f64).ceil() as usize).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    pub score: f64,
    pub final_entropy: f64,
    /// Mean of the top-m intermediate entropies (0 when there are none).
    pub fork_entropy: f64,
    pub top_m: usize,
    /// Set when λ > 0 but the profile had no intermediate positions.
    pub empty_intermediate: bool,
}

pub fn score_candidate(profile: &EntropyProfile, cfg: &ScoringConfig) -> ScoreBreakdown {
    let final_entropy = profile.final_entropy();
    let m = cfg.top_m_for(profile.len());
    let mut intermediate = profile.intermediate_entropies();
    intermediate.sort_by(|a, b| b.total_cmp(a));
    let top = &intermediate[..m.min(intermediate.len())];
    let fork_entropy = if top.is_empty() {
        0.0
    } else {
        top.iter().sum::<f64>() / top.len() as f64
    };
    ScoreBreakdown {
        score: -final_entropy + cfg.lambda * fork_entropy,
        final_entropy,
        fork_entropy,
        top_m: m,
        empty_intermediate: cfg.lambda > 0.0 && intermediate.is_empty(),
    }
}

/// One sampled response with its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    /// Sampling index within the group.
    pub index: usize,
    #[serde(serialize_with = "serialize_tokens")]
    pub response: TokenSequence,
    pub logprob: f64,
    pub profile: EntropyProfile,
    pub breakdown: ScoreBreakdown,
}

fn serialize_tokens<S: serde::Serializer>(seq: &TokenSequence, s: S) -> Result<S::Ok, S::Error> {
    seq.tokens().serialize(s)
}

impl ScoredCandidate {
    pub fn score(&self) -> f64 {
        self.breakdown.score
    }
}

/// Evaluate a fixed response: log-probability, entropy profile and score.
pub fn score_response(
    params: &PolicyParams,
    query: &TokenSequence,
    response: TokenSequence,
    cfg: &ScoringConfig,
    index: usize,
) -> Result<ScoredCandidate> {
    let logprob = params.sequence_logprob(query, &response)?;
    let profile = entropy_profile(params, query, &response, cfg.answer_marker)?;
    let breakdown = score_candidate(&profile, cfg);
    Ok(ScoredCandidate { index, response, logprob, profile, breakdown })
}

/// The candidates sampled for one query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateGroup {
    #[serde(serialize_with = "serialize_tokens")]
    pub query: TokenSequence,
    pub candidates: Vec<ScoredCandidate>,
    /// Number of candidates originally sampled (k).
    pub group_size: usize,
}

impl CandidateGroup {
    pub fn scores(&self) -> Vec<f64> {
        self.candidates.iter().map(ScoredCandidate::score).collect()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Sample `k` responses with sub-seeds derived from `seed` and score each.
/// The group is returned in sampling order.
pub fn generate_group(
    params: &PolicyParams,
    query: &TokenSequence,
    k: usize,
    sampling: &SamplingConfig,
    scoring: &ScoringConfig,
    seed: u64,
) -> Result<CandidateGroup> {
    if k < 2 {
        return Err(GemError::InvalidConfig(format!("group size must be at least 2, got {k}")));
    }
    let candidates = (0..k)
        .map(|i| {
            let response = sample_response(params, query, sampling, derive_seed(seed, i as u64))?;
            score_response(params, query, response, scoring, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateGroup { query: query.clone(), candidates, group_size: k })
}

fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then(b.logprob.total_cmp(&a.logprob))
        .then(a.index.cmp(&b.index))
}

/// Sort by descending score and drop low-scoring outliers. At least two
/// candidates always survive (or all of them, if fewer were given).
pub fn rank_and_filter(mut group: CandidateGroup, cfg: &ScoringConfig) -> CandidateGroup {
    group.candidates.sort_by(rank_order);
    let n = group.candidates.len();
    let floor = n.min(2);
    let keep = match cfg.filter_mode {
        FilterMode::None => n,
        FilterMode::DropBottomFraction => {
            let drop = (cfg.filter_value * n as f64 - 1e-9).ceil().max(0.0) as usize;
            n.saturating_sub(drop).max(floor)
        }
        FilterMode::AbsoluteThreshold => group
            .candidates
            .iter()
            .filter(|c| c.score() >= cfg.filter_value)
            .count()
            .max(floor),
    };
    group.candidates.truncate(keep);
    group
}

/// All pairs `(a_(i), a_(j))`, `i < j`, of a ranked group, with margin
/// `S(a_(i)) - S(a_(j))`.
pub fn derive_pairs(group: &CandidateGroup) -> Vec<PreferenceRecord> {
    let c = &group.candidates;
    let mut out = Vec::with_capacity(c.len() * c.len().saturating_sub(1) / 2);
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            out.push(PreferenceRecord {
                query: group.query.clone(),
                winner: c[i].response.clone(),
                loser: c[j].response.clone(),
                margin: c[i].score() - c[j].score(),
                source: Source::Derived,
            });
        }
    }
    out
}
