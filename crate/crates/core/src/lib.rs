//! Entropy-guided preference optimisation on a toy autoregressive policy.
//!
//! The pipeline samples `k` candidate responses per query, scores each from
//! its token-entropy profile ([`scoring`]), turns the scores into
//! group-centred advantages and applies the weighted policy-gradient update
//! ([`sega`]). SFT and DPO baselines ([`baselines`]) share the same policy
//! ([`policy`]) and the synthetic tasks in [`tasks`]; [`harness`] runs whole
//! experiments.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod policy;
pub mod records;
pub mod scoring;
pub mod seed;
pub mod sega;
pub mod tasks;
pub mod tokens;

pub use baselines::{
    dpo_gradient, dpo_loss, preference_accuracy, sft_gradient, sft_loss, DpoConfig, DpoSettings,
    SftConfig,
};
pub use error::{GemError, Result};
pub use harness::{
    run_sweep, run_training, ExperimentConfig, MetricRow, Method, RunSummary, SweepRow, TrainingRun,
};
pub use policy::{cosine, sample_response, Gradient, PolicyParams, ProbabilityVector, SamplingConfig};
pub use records::{PreferenceRecord, Source};
pub use scoring::{
    derive_pairs, entropy_profile, generate_group, rank_and_filter, score_candidate, score_response,
    token_entropy, CandidateGroup, EntropyProfile, FilterMode, ScoreBreakdown, ScoredCandidate,
    ScoringConfig,
};
pub use sega::{
    group_advantages, implicit_reward, map_scores_to_rewards, sega_gradient, sega_loss, sega_update,
    AdvantageVector, BaselineMode, RewardMap, SegaConfig, WeightMode,
};
pub use tasks::{make_dataset, oracle_check, TaskConfig, TaskDataset, TokenMap};
pub use tokens::{TokenId, TokenSequence, Vocabulary};
