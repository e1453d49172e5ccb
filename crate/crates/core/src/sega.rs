//! Self-evaluated group advantage (SEGA) updates.
//!
//! Each candidate's score becomes a reward `r_i`, the group baseline `r̄` is
//! subtracted to give the advantage `A_i`, and the policy gradient is
//!
//! ```text
//! ∇L = -E_q Σ_i w_i ∇ log π(a_i | q)
//! ```
//!
//! with `w_i` derived from `A_i`. No value network and no KL term.

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::policy::{Gradient, PolicyParams};
use crate::scoring::CandidateGroup;
use crate::tokens::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMap {
    /// `r_i = S(a_i)`
    Identity,
    /// `r_i = softmax(S)_i` over the group.
    Softmax,
    /// `r_i = β · log π(a_i | q)`
    ImplicitLogprob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    Mean,
    Median,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w_i = A_i / σ²` with σ² from the config.
    Scaled,
    /// `w_i = sign(A_i)`, with `sign(0) = 0`.
    Sign,
    /// `w_i = A_i / max(var(r), 1e-8)` using the group's own reward variance.
    Variance,
}

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegaConfig {
    pub reward_map: RewardMap,
    pub baseline_mode: BaselineMode,
    pub weight_mode: WeightMode,
    pub sigma_sq: f64,
    pub beta: f64,
    /// Toy-scale step size. LLM-scale runs use 1e-5 with batches of 128.
    pub learning_rate: f64,
    /// Optional L2 clip on the batch gradient; off by default.
    pub max_grad_norm: Option<f64>,
}

impl Default for SegaConfig {
    fn default() -> Self {
        Self {
            reward_map: RewardMap::Identity,
            baseline_mode: BaselineMode::Mean,
            weight_mode: WeightMode::Scaled,
            sigma_sq: 1.0,
            beta: 1.0,
            learning_rate: 0.05,
            max_grad_norm: None,
        }
    }
}

impl SegaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(GemError::InvalidConfig(format!("{name} must be positive, got {x}")))
            }
        };
        positive("sigma_sq", self.sigma_sq)?;
        positive("beta", self.beta)?;
        positive("learning_rate", self.learning_rate)?;
        if let Some(c) = self.max_grad_norm {
            positive("max_grad_norm", c)?;
        }
        Ok(())
    }
}

/// Rewards, baseline, advantages and weights for one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvantageVector {
    pub rewards: Vec<f64>,
    pub baseline: f64,
    pub advantages: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AdvantageVector {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub fn implicit_reward(
    params: &PolicyParams,
    beta: f64,
    query: &TokenSequence,
    response: &TokenSequence,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(GemError::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    Ok(beta * params.sequence_logprob(query, response)?)
}

pub fn map_scores_to_rewards(
    group: &CandidateGroup,
    cfg: &SegaConfig,
    params: &PolicyParams,
) -> Result<Vec<f64>> {
    if group.is_empty() {
        return Err(GemError::GroupTooSmall(0));
    }
    let scores = group.scores();
    Ok(match cfg.reward_map {
        RewardMap::Identity => scores,
        RewardMap::Softmax => {
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / total).collect()
        }
        RewardMap::ImplicitLogprob => group
            .candidates
            .iter()
            .map(|c| implicit_reward(params, cfg.beta, &group.query, &c.response))
            .collect::<Result<_>>()?,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn group_advantages(rewards: &[f64], cfg: &SegaConfig) -> Result<AdvantageVector> {
    let k = rewards.len();
    if k < 2 {
        return Err(GemError::GroupTooSmall(k));
    }
    let (baseline, advantages) = match cfg.baseline_mode {
        // Two rewards: ±half the difference, so A_1 = -A_2 holds bit-exactly.
        BaselineMode::Mean if k == 2 => {
            let half = 0.5 * (rewards[0] - rewards[1]);
            (rewards[0] - half, vec![half, -half])
        }
        mode => {
            let baseline = match mode {
                // Offset from r_0 so identical rewards give a bit-exact baseline.
                BaselineMode::Mean => {
                    rewards[0] + rewards.iter().map(|r| r - rewards[0]).sum::<f64>() / k as f64
                }
                BaselineMode::Median => {
                    let mut sorted = rewards.to_vec();
                    sorted.sort_by(f64::total_cmp);
                    median(&sorted)
                }
                BaselineMode::Min => rewards.iter().copied().fold(f64::INFINITY, f64::min),
            };
            (baseline, rewards.iter().map(|r| r - baseline).collect::<Vec<_>>())
        }
    };
    let weights = match cfg.weight_mode {
        WeightMode::Scaled => advantages.iter().map(|a| a / cfg.sigma_sq).collect(),
        WeightMode::Sign => advantages
            .iter()
            .map(|&a| if a > 0.0 { 1.0 } else if a < 0.0 { -1.0 } else { 0.0 })
            .collect(),
        WeightMode::Variance => {
            let mean = rewards.iter().sum::<f64>() / k as f64;
            let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k as f64;
            let denom = var.max(VARIANCE_FLOOR);
            advantages.iter().map(|a| a / denom).collect()
        }
    };
    Ok(AdvantageVector { rewards: rewards.to_vec(), baseline, advantages, weights })
}

fn check_lengths(group: &CandidateGroup, adv: &AdvantageVector) -> Result<()> {
    if group.len() != adv.len() {
        return Err(GemError::ShapeMismatch(format!(
            "group has {} candidates but advantage vector has {}",
            group.len(),
            adv.len()
        )));
    }
    Ok(())
}

/// `L = -Σ_i A_i log π(a_i | q)`
pub fn sega_loss(params: &PolicyParams, group: &CandidateGroup, adv: &AdvantageVector) -> Result<f64> {
    check_lengths(group, adv)?;
    let logprobs = group
        .candidates
        .iter()
        .map(|c| params.sequence_logprob(&group.query, &c.response))
        .collect::<Result<Vec<_>>>()?;
    Ok(advantage_weighted_loss(&adv.advantages, &logprobs))
}

/// `-Σ_i A_i · logprob_i` on precomputed log-probabilities.
pub fn advantage_weighted_loss(advantages: &[f64], logprobs: &[f64]) -> f64 {
    -advantages.iter().zip(logprobs).map(|(a, lp)| a * lp).sum::<f64>()
}

/// `-Σ_i w_i ∇ log π(a_i | q)`
pub fn sega_gradient(
    params: &PolicyParams,
    group: &CandidateGroup,
    adv: &AdvantageVector,
) -> Result<Gradient> {
    check_lengths(group, adv)?;
    let mut grad = Gradient::zeros_like(params);
    for (c, &w) in group.candidates.iter().zip(&adv.weights) {
        if w != 0.0 {
            params.accumulate_logprob_gradient(&group.query, &c.response, -w, &mut grad)?;
        }
    }
    Ok(grad)
}

/// Unweighted mean of the per-group gradients. A non-finite group gradient
/// is reported with its index.
pub fn sega_batch_gradient(
    params: &PolicyParams,
    groups: &[(CandidateGroup, AdvantageVector)],
) -> Result<Gradient> {
    if groups.is_empty() {
        return Err(GemError::InvalidConfig("no groups to update on".into()));
    }
    let mut total = Gradient::zeros_like(params);
    for (i, (group, adv)) in groups.iter().enumerate() {
        let g = sega_gradient(params, group, adv)?;
        if !g.is_finite() {
            return Err(GemError::NonFiniteGradient { group: i });
        }
        total.add_scaled(&g, 1.0);
    }
    total.scale(1.0 / groups.len() as f64);
    Ok(total)
}

/// One descent step on the batch; `params` is left untouched.
pub fn sega_update(
    params: &PolicyParams,
    groups: &[(CandidateGroup, AdvantageVector)],
    cfg: &SegaConfig,
) -> Result<PolicyParams> {
    let mut grad = sega_batch_gradient(params, groups)?;
    if let Some(max) = cfg.max_grad_norm {
        grad.clip_norm(max);
    }
    Ok(params.descend(&grad, cfg.learning_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{score_response, ScoringConfig};
    use crate::tokens::Vocabulary;
    use approx::assert_relative_eq;

    fn vocab() -> Vocabulary {
        Vocabulary::new(16, 14, 15).unwrap()
    }

    fn group_of(params: &PolicyParams, responses: &[&[u32]]) -> CandidateGroup {
        let v = vocab();
        let q = TokenSequence::prompt(vec![14, 1, 2], &v).unwrap();
        let candidates = responses
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let r = TokenSequence::response(r.to_vec(), &v).unwrap();
                score_response(params, &q, r, &ScoringConfig::default(), i).unwrap()
            })
            .collect();
        CandidateGroup { query: q, candidates, group_size: responses.len() }
    }

    fn cfg() -> SegaConfig {
        SegaConfig::default()
    }

    #[test]
    fn symmetric_mean_baseline() {
        let adv = group_advantages(&[1.0, 2.0, 3.0], &cfg()).unwrap();
        assert_eq!(adv.baseline, 2.0);
        assert_eq!(adv.advantages, vec![-1.0, 0.0, 1.0]);
        assert_eq!(adv.weights, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn equal_rewards_give_exact_zero_advantages() {
        // A naive sum/k gives 0.10000000000000002 here.
        for k in 2..9 {
            let adv = group_advantages(&vec![0.1; k], &cfg()).unwrap();
            assert!(adv.advantages.iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn min_and_median_baselines() {
        let min = SegaConfig { baseline_mode: BaselineMode::Min, ..cfg() };
        assert_eq!(group_advantages(&[1.0, 2.0, 3.0], &min).unwrap().advantages, vec![0.0, 1.0, 2.0]);
        let med = SegaConfig { baseline_mode: BaselineMode::Median, ..cfg() };
        assert_eq!(group_advantages(&[4.0, 1.0, 3.0, 2.0], &med).unwrap().baseline, 2.5);
        assert_eq!(group_advantages(&[5.0, 1.0, 3.0], &med).unwrap().baseline, 3.0);
    }

    #[test]
    fn weight_modes() {
        let scaled = SegaConfig { sigma_sq: 4.0, ..cfg() };
        assert_eq!(group_advantages(&[1.0, 3.0], &scaled).unwrap().weights, vec![-0.25, 0.25]);
        let sign = SegaConfig { weight_mode: WeightMode::Sign, ..cfg() };
        assert_eq!(group_advantages(&[1.0, 2.0, 3.0], &sign).unwrap().weights, vec![-1.0, 0.0, 1.0]);
        let var = SegaConfig { weight_mode: WeightMode::Variance, ..cfg() };
        // var = 1, so weights equal the advantages.
        assert_eq!(group_advantages(&[1.0, 3.0], &var).unwrap().weights, vec![-1.0, 1.0]);
        // Degenerate group hits the floor rather than dividing by zero.
        assert_eq!(group_advantages(&[2.0, 2.0], &var).unwrap().weights, vec![0.0, 0.0]);
    }

    #[test]
    fn too_few_rewards() {
        assert!(matches!(group_advantages(&[1.0], &cfg()), Err(GemError::GroupTooSmall(1))));
    }

    #[test]
    fn reward_maps() {
        let params = PolicyParams::zeros(vocab(), 3).unwrap();
        let g = group_of(&params, &[&[3, 15], &[4, 5, 15]]);

        let implicit = SegaConfig { reward_map: RewardMap::ImplicitLogprob, ..cfg() };
        let r = map_scores_to_rewards(&g, &implicit, &params).unwrap();
        assert_relative_eq!(r[0], -5.545177444479562, max_relative = 1e-12);
        assert_relative_eq!(r[1], -8.317766166719343, max_relative = 1e-12);

        let mut g4 = group_of(&params, &[&[3, 15], &[4, 15], &[5, 15], &[6, 15]]);
        let soft = SegaConfig { reward_map: RewardMap::Softmax, ..cfg() };
        for r in map_scores_to_rewards(&g4, &soft, &params).unwrap() {
            assert_relative_eq!(r, 0.25, max_relative = 1e-12);
        }
        for (c, s) in g4.candidates.iter_mut().zip([0.7, 0.1, -0.2, 0.0]) {
            c.breakdown.score = s;
        }
        let ident = map_scores_to_rewards(&g4, &cfg(), &params).unwrap();
        assert_eq!(ident, vec![0.7, 0.1, -0.2, 0.0]);
    }

    #[test]
    fn loss_hand_example() {
        assert_eq!(advantage_weighted_loss(&[1.0, -1.0], &[-2.0, -5.0]), -3.0);
        assert_eq!(advantage_weighted_loss(&[0.0, 0.0], &[-2.0, -5.0]), 0.0);

        let params = PolicyParams::zeros(vocab(), 3).unwrap();
        let g = group_of(&params, &[&[3, 15], &[4, 15]]);
        let lp: Vec<f64> = g
            .candidates
            .iter()
            .map(|c| params.sequence_logprob(&g.query, &c.response).unwrap())
            .collect();
        let adv = AdvantageVector {
            rewards: vec![1.0, -1.0],
            baseline: 0.0,
            advantages: vec![1.0, -1.0],
            weights: vec![1.0, -1.0],
        };
        let loss = sega_loss(&params, &g, &adv).unwrap();
        assert_relative_eq!(loss, -(lp[0] - lp[1]), epsilon = 1e-15);
        // Equal-length responses under the uniform policy: loss vanishes.
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let params = PolicyParams::init(vocab(), 3, 0.5, 3).unwrap();
        let g = group_of(&params, &[&[3, 15], &[4, 5, 15]]);
        let adv = group_advantages(&[0.3, 0.3], &cfg()).unwrap();
        assert!(sega_gradient(&params, &g, &adv).unwrap().is_zero());
        let next = sega_update(&params, &[(g, adv)], &cfg()).unwrap();
        assert_eq!(next, params);
    }

    #[test]
    fn single_candidate_gradient_is_negated_logprob_gradient() {
        let params = PolicyParams::init(vocab(), 2, 0.5, 8).unwrap();
        let g = group_of(&params, &[&[3, 4, 15]]);
        let adv = AdvantageVector {
            rewards: vec![1.0],
            baseline: 0.0,
            advantages: vec![1.0],
            weights: vec![1.0],
        };
        let sg = sega_gradient(&params, &g, &adv).unwrap();
        let lg = params.logprob_gradient(&g.query, &g.candidates[0].response).unwrap();
        for (a, b) in sg.iter().zip(lg.iter()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn update_raises_preferred_candidate() {
        let params = PolicyParams::init(vocab(), 3, 0.3, 21).unwrap();
        let g = group_of(&params, &[&[3, 4, 15], &[5, 15]]);
        let adv = group_advantages(&[1.0, 0.0], &cfg()).unwrap();
        let lr = SegaConfig { learning_rate: 1e-3, ..cfg() };
        let before = params.sequence_logprob(&g.query, &g.candidates[0].response).unwrap();
        let next = sega_update(&params, &[(g.clone(), adv)], &lr).unwrap();
        let after = next.sequence_logprob(&g.query, &g.candidates[0].response).unwrap();
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let params = PolicyParams::zeros(vocab(), 2).unwrap();
        let g = group_of(&params, &[&[3, 15], &[4, 15]]);
        let adv = group_advantages(&[1.0, 2.0, 3.0], &cfg()).unwrap();
        assert!(sega_loss(&params, &g, &adv).is_err());
        assert!(sega_gradient(&params, &g, &adv).is_err());
    }

    #[test]
    fn implicit_reward_scales_with_beta() {
        let v = vocab();
        let params = PolicyParams::zeros(v, 2).unwrap();
        let q = TokenSequence::prompt(vec![14], &v).unwrap();
        let r = TokenSequence::response(vec![15], &v).unwrap();
        let one = implicit_reward(&params, 1.0, &q, &r).unwrap();
        assert_relative_eq!(one, (1.0f64 / 16.0).ln(), max_relative = 1e-14);
        assert_relative_eq!(implicit_reward(&params, 2.0, &q, &r).unwrap(), 2.0 * one);
        assert!(implicit_reward(&params, 0.0, &q, &r).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(SegaConfig { sigma_sq: 0.0, ..cfg() }.validate().is_err());
        assert!(SegaConfig { beta: -1.0, ..cfg() }.validate().is_err());
        assert!(SegaConfig { learning_rate: 0.0, ..cfg() }.validate().is_err());
    }
}
