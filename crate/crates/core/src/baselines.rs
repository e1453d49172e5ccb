//! Supervised fine-tuning and pairwise DPO on the same policy, plus the
//! preference-prediction accuracy metric shared by every method.

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::policy::{Gradient, PolicyParams};
use crate::records::PreferenceRecord;
use crate::sega::implicit_reward;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    /// Passes over the training winners before preference optimisation.
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { epochs: 2, learning_rate: 0.05 }
    }
}

/// DPO hyperparameters as read from a config file. The frozen reference
/// policy is attached at run time, see [`DpoConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoSettings {
    pub beta: f64,
    pub learning_rate: f64,
}

impl Default for DpoSettings {
    fn default() -> Self {
        Self { beta: 1.0, learning_rate: 0.05 }
    }
}

/// DPO temperature and the frozen reference policy.
#[derive(Debug, Clone)]
pub struct DpoConfig {
    beta: f64,
    reference: PolicyParams,
}

impl DpoConfig {
    pub fn new(beta: f64, reference: PolicyParams) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(GemError::InvalidConfig(format!("dpo beta must be positive, got {beta}")));
        }
        Ok(Self { beta, reference })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }
}

/// Gradient of `-log π(winner | query)`; the loser is ignored.
pub fn sft_gradient(params: &PolicyParams, record: &PreferenceRecord) -> Result<Gradient> {
    let mut g = Gradient::zeros_like(params);
    params.accumulate_logprob_gradient(&record.query, &record.winner, -1.0, &mut g)?;
    Ok(g)
}

pub fn sft_loss(params: &PolicyParams, record: &PreferenceRecord) -> Result<f64> {
    Ok(-params.sequence_logprob(&record.query, &record.winner)?)
}

/// `β[(log π(w) - log π_ref(w)) - (log π(l) - log π_ref(l))]`
fn dpo_logit(params: &PolicyParams, cfg: &DpoConfig, record: &PreferenceRecord) -> Result<f64> {
    let q = &record.query;
    let w = params.sequence_logprob(q, &record.winner)? - cfg.reference.sequence_logprob(q, &record.winner)?;
    let l = params.sequence_logprob(q, &record.loser)? - cfg.reference.sequence_logprob(q, &record.loser)?;
    Ok(cfg.beta * (w - l))
}

/// `-ln σ(x) = ln(1 + e^{-x})`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn dpo_loss(params: &PolicyParams, cfg: &DpoConfig, record: &PreferenceRecord) -> Result<f64> {
    Ok(neg_log_sigmoid(dpo_logit(params, cfg, record)?))
}

/// `-σ(-x) · β · (∇ log π(w) - ∇ log π(l))` where `x` is the DPO logit.
pub fn dpo_gradient(
    params: &PolicyParams,
    cfg: &DpoConfig,
    record: &PreferenceRecord,
) -> Result<Gradient> {
    let coeff = -sigmoid(-dpo_logit(params, cfg, record)?) * cfg.beta;
    let mut g = Gradient::zeros_like(params);
    params.accumulate_logprob_gradient(&record.query, &record.winner, coeff, &mut g)?;
    params.accumulate_logprob_gradient(&record.query, &record.loser, -coeff, &mut g)?;
    Ok(g)
}

/// Fraction of records whose winner gets the larger implicit reward
/// `β · log π`. Exact ties count one half.
pub fn preference_accuracy(
    params: &PolicyParams,
    beta: f64,
    records: &[PreferenceRecord],
) -> Result<f64> {
    if records.is_empty() {
        return Err(GemError::InvalidConfig("no records to evaluate".into()));
    }
    let mut hits = 0.0;
    for r in records {
        let w = implicit_reward(params, beta, &r.query, &r.winner)?;
        let l = implicit_reward(params, beta, &r.query, &r.loser)?;
        hits += if w > l {
            1.0
        } else if w == l {
            0.5
        } else {
            0.0
        };
    }
    Ok(hits / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::Source;
    use crate::tokens::{TokenSequence, Vocabulary};
    use approx::assert_relative_eq;

    fn vocab() -> Vocabulary {
        Vocabulary::new(12, 10, 11).unwrap()
    }

    fn record(winner: &[u32], loser: &[u32]) -> PreferenceRecord {
        let v = vocab();
        PreferenceRecord {
            query: TokenSequence::prompt(vec![10, 1, 2], &v).unwrap(),
            winner: TokenSequence::response(winner.to_vec(), &v).unwrap(),
            loser: TokenSequence::response(loser.to_vec(), &v).unwrap(),
            margin: 0.0,
            source: Source::Human,
        }
    }

    #[test]
    fn sft_gradient_is_negated_logprob_gradient_and_ignores_loser() {
        let p = PolicyParams::init(vocab(), 3, 0.4, 2).unwrap();
        let a = record(&[3, 4, 11], &[5, 11]);
        let b = record(&[3, 4, 11], &[6, 7, 8, 11]);
        let ga = sft_gradient(&p, &a).unwrap();
        assert_eq!(ga, sft_gradient(&p, &b).unwrap());
        let lg = p.logprob_gradient(&a.query, &a.winner).unwrap();
        for (x, y) in ga.iter().zip(lg.iter()) {
            assert_eq!(*x, -y);
        }
    }

    #[test]
    fn sft_step_raises_winner() {
        let p = PolicyParams::init(vocab(), 3, 0.4, 2).unwrap();
        let r = record(&[3, 4, 11], &[5, 11]);
        let before = p.sequence_logprob(&r.query, &r.winner).unwrap();
        let next = p.descend(&sft_gradient(&p, &r).unwrap(), 1e-3);
        assert!(next.sequence_logprob(&r.query, &r.winner).unwrap() > before);
    }

    #[test]
    fn dpo_at_reference_is_ln2() {
        let p = PolicyParams::init(vocab(), 2, 0.7, 5).unwrap();
        let cfg = DpoConfig::new(0.5, p.clone()).unwrap();
        for r in [record(&[3, 11], &[4, 11]), record(&[1, 2, 11], &[9, 11])] {
            assert_relative_eq!(dpo_loss(&p, &cfg, &r).unwrap(), 2f64.ln(), max_relative = 1e-14);
        }
    }

    #[test]
    fn dpo_swap_negates_logit() {
        let p = PolicyParams::init(vocab(), 2, 0.7, 5).unwrap();
        let reference = PolicyParams::init(vocab(), 2, 0.7, 6).unwrap();
        let cfg = DpoConfig::new(1.3, reference).unwrap();
        let r = record(&[3, 11], &[4, 5, 11]);
        let swapped = record(&[4, 5, 11], &[3, 11]);
        let x = dpo_loss(&p, &cfg, &r).unwrap();
        let y = dpo_loss(&p, &cfg, &swapped).unwrap();
        // σ(t) + σ(-t) = 1  ⇒  e^{-x} + e^{-y} = 1
        assert_relative_eq!((-x).exp() + (-y).exp(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(y, -(1.0 - (-x).exp()).ln(), max_relative = 1e-10);
    }

    #[test]
    fn stable_sigmoid_helpers() {
        assert_relative_eq!(neg_log_sigmoid(0.0), 2f64.ln());
        assert!(neg_log_sigmoid(800.0) >= 0.0 && neg_log_sigmoid(800.0) < 1e-300);
        assert_relative_eq!(neg_log_sigmoid(-800.0), 800.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn uniform_policy_scores_half() {
        let p = PolicyParams::zeros(vocab(), 2).unwrap();
        let recs = vec![record(&[3, 11], &[4, 11]), record(&[1, 2, 11], &[9, 8, 11])];
        assert_eq!(preference_accuracy(&p, 1.0, &recs).unwrap(), 0.5);
        assert!(preference_accuracy(&p, 1.0, &[]).is_err());
    }

    #[test]
    fn accuracy_is_beta_invariant() {
        let p = PolicyParams::init(vocab(), 2, 1.0, 9).unwrap();
        let recs: Vec<_> = (0..9u32).map(|i| record(&[i, 11], &[(i + 1) % 10, 11])).collect();
        let a = preference_accuracy(&p, 1.0, &recs).unwrap();
        assert_eq!(a, preference_accuracy(&p, 0.1, &recs).unwrap());
        assert_eq!(a, preference_accuracy(&p, 7.0, &recs).unwrap());
    }
}
