//! Experiment orchestration: SFT warm-up followed by SFT, DPO or the SEGA
//! closed loop, with held-out evaluation and the budget sweep.

mod config;
mod output;

pub use config::{ExperimentConfig, GroupSamplingConfig, Method, PolicyConfig, RunConfig};
pub use output::{
    write_metrics_csv, write_metrics_jsonl, write_sweep_csv, METRICS_CSV_HEADER,
    METRICS_SCHEMA_LINE, SWEEP_CSV_HEADER, SWEEP_SCHEMA_LINE,
};

use std::time::Instant;

use serde::Serialize;

use crate::baselines::{dpo_gradient, dpo_loss, preference_accuracy, sft_gradient, sft_loss, DpoConfig};
use crate::error::{GemError, Result};
use crate::policy::{Gradient, PolicyParams};
use crate::records::PreferenceRecord;
use crate::scoring::{generate_group, rank_and_filter, score_response, ScoringConfig};
use crate::sega::{advantage_weighted_loss, group_advantages, map_scores_to_rewards, sega_batch_gradient};
use crate::seed::{derive_seed, derive_seed_path};
use crate::tasks::TaskDataset;

const STREAM_INIT: u64 = 0;
const STREAM_SEGA: u64 = 1;

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: usize,
    pub method: Method,
    pub train_loss: f64,
    pub eval_preference_accuracy: f64,
    pub mean_group_score: f64,
    pub gradient_norm: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub rows: Vec<MetricRow>,
    pub params: PolicyParams,
    pub steps: usize,
}

impl TrainingRun {
    pub fn post_sft_accuracy(&self) -> f64 {
        self.rows[0].eval_preference_accuracy
    }

    pub fn final_accuracy(&self) -> f64 {
        self.rows.last().expect("at least the post-SFT row").eval_preference_accuracy
    }

    /// Population standard deviation of the evaluation accuracies recorded
    /// over the last quarter of the steps.
    pub fn final_quartile_std(&self) -> f64 {
        final_quartile_std(&self.rows, self.steps)
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            method: self.rows[0].method,
            steps: self.steps,
            post_sft_accuracy: self.post_sft_accuracy(),
            final_accuracy: self.final_accuracy(),
            final_quartile_std: self.final_quartile_std(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: Method,
    pub steps: usize,
    pub post_sft_accuracy: f64,
    pub final_accuracy: f64,
    pub final_quartile_std: f64,
}

pub fn final_quartile_std(rows: &[MetricRow], steps: usize) -> f64 {
    let cutoff = 0.75 * steps as f64;
    let accs: Vec<f64> = rows
        .iter()
        .filter(|r| r.step > 0 && r.step as f64 > cutoff)
        .map(|r| r.eval_preference_accuracy)
        .collect();
    if accs.len() < 2 {
        return 0.0;
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64).sqrt()
}

fn batch(records: &[PreferenceRecord], step: usize, size: usize) -> Vec<&PreferenceRecord> {
    (0..size).map(|j| &records[((step - 1) * size + j) % records.len()]).collect()
}

fn mean_gradient(
    params: &PolicyParams,
    records: &[&PreferenceRecord],
    per_record: impl Fn(&PolicyParams, &PreferenceRecord) -> Result<Gradient>,
) -> Result<Gradient> {
    let mut total = Gradient::zeros_like(params);
    for (i, r) in records.iter().enumerate() {
        let g = per_record(params, r)?;
        if !g.is_finite() {
            return Err(GemError::NonFiniteGradient { group: i });
        }
        total.add_scaled(&g, 1.0);
    }
    total.scale(1.0 / records.len() as f64);
    Ok(total)
}

fn mean_winner_score(
    params: &PolicyParams,
    records: &[&PreferenceRecord],
    scoring: &ScoringConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        total += score_response(params, &r.query, r.winner.clone(), scoring, 0)?.score();
    }
    Ok(total / records.len() as f64)
}

fn check_loss(loss: f64, step: usize, group: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(GemError::NonFiniteLoss { step, group })
    }
}

struct StepOutcome {
    loss: f64,
    mean_score: f64,
    grad: Gradient,
}

fn sft_step(params: &PolicyParams, batch: &[&PreferenceRecord], scoring: &ScoringConfig, step: usize) -> Result<StepOutcome> {
    let mut loss = 0.0;
    for (i, r) in batch.iter().enumerate() {
        loss += check_loss(sft_loss(params, r)?, step, i)?;
    }
    Ok(StepOutcome {
        loss: loss / batch.len() as f64,
        mean_score: mean_winner_score(params, batch, scoring)?,
        grad: mean_gradient(params, batch, sft_gradient)?,
    })
}

fn dpo_step(
    params: &PolicyParams,
    dpo: &DpoConfig,
    batch: &[&PreferenceRecord],
    scoring: &ScoringConfig,
    step: usize,
) -> Result<StepOutcome> {
    let mut loss = 0.0;
    for (i, r) in batch.iter().enumerate() {
        loss += check_loss(dpo_loss(params, dpo, r)?, step, i)?;
    }
    Ok(StepOutcome {
        loss: loss / batch.len() as f64,
        mean_score: mean_winner_score(params, batch, scoring)?,
        grad: mean_gradient(params, batch, |p, r| dpo_gradient(p, dpo, r))?,
    })
}

/// generate → rank/filter → rewards → advantages → batch gradient.
fn sega_step(
    params: &PolicyParams,
    cfg: &ExperimentConfig,
    scoring: &ScoringConfig,
    batch: &[&PreferenceRecord],
    step: usize,
) -> Result<StepOutcome> {
    let sampler = cfg.sampling.sampler();
    let mut groups = Vec::with_capacity(batch.len());
    let mut loss = 0.0;
    let mut score_sum = 0.0;
    let mut score_count = 0usize;
    for (j, r) in batch.iter().enumerate() {
        let seed = derive_seed_path(cfg.run.seed, &[STREAM_SEGA, step as u64, j as u64]);
        let group = generate_group(params, &r.query, cfg.sampling.group_size, &sampler, scoring, seed)?;
        score_sum += group.scores().iter().sum::<f64>();
        score_count += group.len();
        let group = rank_and_filter(group, scoring);
        let rewards = map_scores_to_rewards(&group, &cfg.sega, params)?;
        let adv = group_advantages(&rewards, &cfg.sega)?;
        let logprobs: Vec<f64> = group.candidates.iter().map(|c| c.logprob).collect();
        loss += check_loss(advantage_weighted_loss(&adv.advantages, &logprobs), step, j)?;
        groups.push((group, adv));
    }
    Ok(StepOutcome {
        loss: loss / batch.len() as f64,
        mean_score: score_sum / score_count as f64,
        grad: sega_batch_gradient(params, &groups)?,
    })
}

/// Run SFT warm-up and then `cfg.run.steps` steps of `cfg.run.method`,
/// evaluating held-out preference accuracy after warm-up, every
/// `eval_every` steps and at the last step.
pub fn run_training(cfg: &ExperimentConfig, dataset: &TaskDataset) -> Result<TrainingRun> {
    cfg.validate()?;
    if dataset.train.is_empty() || dataset.eval.is_empty() {
        return Err(GemError::InvalidConfig("dataset needs train and eval records".into()));
    }
    let start = Instant::now();
    let elapsed = || if cfg.run.record_timing { start.elapsed().as_millis() as u64 } else { 0 };
    let method = cfg.run.method;
    let eval_beta = cfg.sega.beta;
    let scoring = ScoringConfig { answer_marker: Some(dataset.answer_marker()), ..cfg.scoring };
    let b = cfg.run.batch_prompts;

    let mut params = PolicyParams::init(
        dataset.vocab(),
        cfg.policy.context_length,
        cfg.policy.init_scale,
        derive_seed(cfg.run.seed, STREAM_INIT),
    )?;

    for _ in 0..cfg.sft.epochs {
        for chunk in dataset.train.chunks(b) {
            let refs: Vec<&PreferenceRecord> = chunk.iter().collect();
            let g = mean_gradient(&params, &refs, sft_gradient)?;
            params.descend_in_place(&g, cfg.sft.learning_rate);
        }
    }
    let dpo = DpoConfig::new(cfg.dpo.beta, params.clone())?;

    let all: Vec<&PreferenceRecord> = dataset.train.iter().collect();
    let mut post_sft_loss = 0.0;
    for r in &all {
        post_sft_loss += sft_loss(&params, r)?;
    }
    let mut rows = vec![MetricRow {
        step: 0,
        method,
        train_loss: post_sft_loss / all.len() as f64,
        eval_preference_accuracy: preference_accuracy(&params, eval_beta, &dataset.eval)?,
        mean_group_score: mean_winner_score(&params, &all, &scoring)?,
        gradient_norm: 0.0,
        wall_ms: elapsed(),
    }];

    for step in 1..=cfg.run.steps {
        let batch = batch(&dataset.train, step, b);
        let (outcome, lr) = match method {
            Method::Sft => (sft_step(&params, &batch, &scoring, step)?, cfg.sft.learning_rate),
            Method::Dpo => (dpo_step(&params, &dpo, &batch, &scoring, step)?, cfg.dpo.learning_rate),
            Method::Sega => (sega_step(&params, cfg, &scoring, &batch, step)?, cfg.sega.learning_rate),
        };
        let gradient_norm = outcome.grad.norm();
        let mut grad = outcome.grad;
        if let (Method::Sega, Some(max)) = (method, cfg.sega.max_grad_norm) {
            grad.clip_norm(max);
        }
        params.descend_in_place(&grad, lr);

        if step % cfg.run.eval_every == 0 || step == cfg.run.steps {
            rows.push(MetricRow {
                step,
                method,
                train_loss: outcome.loss,
                eval_preference_accuracy: preference_accuracy(&params, eval_beta, &dataset.eval)?,
                mean_group_score: outcome.mean_score,
                gradient_norm,
                wall_ms: elapsed(),
            });
        }
    }
    Ok(TrainingRun { rows, params, steps: cfg.run.steps })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub budget: usize,
    pub method: Method,
    pub final_accuracy: f64,
}

/// For each budget, train every method in `methods` on the first `budget`
/// training records. The evaluation split is never truncated.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    dataset: &TaskDataset,
    budgets: &[usize],
    methods: &[Method],
) -> Result<Vec<SweepRow>> {
    if budgets.is_empty() || methods.is_empty() {
        return Err(GemError::InvalidConfig("sweep needs budgets and methods".into()));
    }
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(GemError::InvalidConfig(format!("budgets must be ascending: {budgets:?}")));
    }
    let subsets = budgets
        .iter()
        .map(|&b| dataset.with_train_budget(b))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(budgets.len() * methods.len());
    for (subset, &budget) in subsets.iter().zip(budgets) {
        for &method in methods {
            let mut run_cfg = cfg.clone();
            run_cfg.run.method = method;
            let run = run_training(&run_cfg, subset)?;
            rows.push(SweepRow { budget, method, final_accuracy: run.final_accuracy() });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{make_dataset, TaskConfig};

    fn tiny() -> (ExperimentConfig, TaskDataset) {
        let mut cfg = ExperimentConfig::default();
        cfg.task = TaskConfig { n_train_prompts: 40, n_eval_prompts: 20, ..TaskConfig::default() };
        cfg.run.steps = 6;
        cfg.run.batch_prompts = 4;
        cfg.run.eval_every = 2;
        let data = make_dataset(&cfg.task).unwrap();
        (cfg, data)
    }

    #[test]
    fn zero_steps_emits_only_post_sft_row() {
        let (mut cfg, data) = tiny();
        cfg.run.steps = 0;
        let run = run_training(&cfg, &data).unwrap();
        assert_eq!(run.rows.len(), 1);
        assert_eq!(run.rows[0].step, 0);
    }

    #[test]
    fn eval_cadence_and_final_row() {
        let (mut cfg, data) = tiny();
        cfg.run.steps = 7;
        cfg.run.eval_every = 3;
        let run = run_training(&cfg, &data).unwrap();
        let steps: Vec<usize> = run.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 3, 6, 7]);
        assert!(run.rows.iter().all(|r| (0.0..=1.0).contains(&r.eval_preference_accuracy)));
    }

    #[test]
    fn every_method_is_deterministic() {
        let (mut cfg, data) = tiny();
        for m in Method::ALL {
            cfg.run.method = m;
            let a = run_training(&cfg, &data).unwrap();
            let b = run_training(&cfg, &data).unwrap();
            assert_eq!(a.rows, b.rows, "{m}");
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn sft_warmup_is_shared_across_methods() {
        let (mut cfg, data) = tiny();
        let mut post = Vec::new();
        for m in Method::ALL {
            cfg.run.method = m;
            post.push(run_training(&cfg, &data).unwrap().post_sft_accuracy());
        }
        assert!(post.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn quartile_std() {
        let row = |step, acc| MetricRow {
            step,
            method: Method::Sega,
            train_loss: 0.0,
            eval_preference_accuracy: acc,
            mean_group_score: 0.0,
            gradient_norm: 0.0,
            wall_ms: 0,
        };
        let rows = vec![row(0, 0.1), row(50, 0.9), row(80, 0.5), row(90, 0.7), row(100, 0.6)];
        let expected = {
            let v: [f64; 3] = [0.5, 0.7, 0.6];
            let m = v.iter().sum::<f64>() / 3.0;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0).sqrt()
        };
        assert!((final_quartile_std(&rows, 100) - expected).abs() < 1e-15);
        assert_eq!(final_quartile_std(&rows[..2], 100), 0.0);
    }

    #[test]
    fn sweep_cardinality_and_validation() {
        let (cfg, data) = tiny();
        let rows = run_sweep(&cfg, &data, &[10, 20, 40], &Method::ALL).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(run_sweep(&cfg, &data, &[20, 10], &Method::ALL).is_err());
        assert!(matches!(
            run_sweep(&cfg, &data, &[10, 41], &Method::ALL),
            Err(GemError::BudgetExceedsDataset { budget: 41, .. })
        ));
    }

    #[test]
    fn full_budget_matches_training() {
        let (cfg, data) = tiny();
        let rows = run_sweep(&cfg, &data, &[40], &[Method::Sega]).unwrap();
        assert_eq!(rows[0].final_accuracy, run_training(&cfg, &data).unwrap().final_accuracy());
    }
}
