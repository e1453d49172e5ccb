//! Synthetic preference tasks with exact oracles.
//!
//! `modsum_fork`: the prompt is `[BOS, d1, d2]` and a correct response is
//! `[f, MARK, (d1 + d2) mod 10, EOS]` where `f` is any of `F` interchangeable
//! fork tokens. Each record pairs a correct response (seeded fork) with the
//! same response carrying a wrong final digit.
//!
//! Token ids: digits `0..=9`, forks `10..10+F`, then MARK, EOS and BOS.
//! Remaining ids up to `V - 1` are unused.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::records::{PreferenceRecord, Source};
use crate::seed::{derive_seed, rng_from_seed};
use crate::tokens::{TokenId, TokenSequence, Vocabulary};

pub const DIGITS: usize = 10;
const PROMPT_SPACE: usize = DIGITS * DIGITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ModsumFork,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub vocab_size: usize,
    /// Number F of interchangeable fork tokens.
    pub fork_width: usize,
    /// Training records to generate.
    pub n_train_prompts: usize,
    /// Held-out records to generate.
    pub n_eval_prompts: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::ModsumFork,
            vocab_size: 24,
            fork_width: 4,
            n_train_prompts: 200,
            n_eval_prompts: 200,
            seed: 42,
        }
    }
}

/// Fixed id assignment for `modsum_fork`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMap {
    pub first_fork: TokenId,
    pub fork_width: usize,
    pub marker: TokenId,
    pub eos: TokenId,
    pub bos: TokenId,
    pub vocab_size: usize,
}

impl TokenMap {
    pub fn new(vocab_size: usize, fork_width: usize) -> Result<Self> {
        let needed = DIGITS + fork_width + 3;
        if vocab_size < needed {
            return Err(GemError::InvalidConfig(format!(
                "vocabulary of {vocab_size} cannot host 10 digits, {fork_width} forks and 3 markers ({needed} needed)"
            )));
        }
        let first_fork = DIGITS as TokenId;
        let marker = first_fork + fork_width as TokenId;
        Ok(Self { first_fork, fork_width, marker, eos: marker + 1, bos: marker + 2, vocab_size })
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.vocab_size, self.bos, self.eos).expect("token map ids are valid")
    }

    pub fn is_fork(&self, t: TokenId) -> bool {
        (self.first_fork..self.first_fork + self.fork_width as TokenId).contains(&t)
    }

    pub fn digit(&self, t: TokenId) -> Option<u32> {
        ((t as usize) < DIGITS).then_some(t)
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_prompts == 0 || self.n_eval_prompts == 0 {
            return Err(GemError::InvalidConfig(
                "n_train_prompts and n_eval_prompts must be at least 1".into(),
            ));
        }
        if self.fork_width < 2 {
            return Err(GemError::InvalidConfig(format!(
                "fork_width must be at least 2, got {}",
                self.fork_width
            )));
        }
        TokenMap::new(self.vocab_size, self.fork_width)?;
        Ok(())
    }

    /// Distinct `(d1, d2)` prompts reserved for evaluation. The 100 possible
    /// prompts are split in proportion to the requested record counts.
    fn eval_prompt_count(&self) -> usize {
        let total = (self.n_train_prompts + self.n_eval_prompts) as f64;
        let share = PROMPT_SPACE as f64 * self.n_eval_prompts as f64 / total;
        (share.round() as usize).clamp(1, PROMPT_SPACE - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub config: TaskConfig,
    pub token_map: TokenMap,
    pub train: Vec<PreferenceRecord>,
    pub eval: Vec<PreferenceRecord>,
}

impl TaskDataset {
    pub fn vocab(&self) -> Vocabulary {
        self.token_map.vocab()
    }

    pub fn answer_marker(&self) -> TokenId {
        self.token_map.marker
    }

    /// The same dataset with only the first `budget` training records.
    pub fn with_train_budget(&self, budget: usize) -> Result<Self> {
        if budget > self.train.len() {
            return Err(GemError::BudgetExceedsDataset { budget, available: self.train.len() });
        }
        if budget == 0 {
            return Err(GemError::InvalidConfig("budget must be at least 1".into()));
        }
        let mut out = self.clone();
        out.train.truncate(budget);
        Ok(out)
    }
}

pub fn make_dataset(cfg: &TaskConfig) -> Result<TaskDataset> {
    cfg.validate()?;
    let map = TokenMap::new(cfg.vocab_size, cfg.fork_width)?;
    let vocab = map.vocab();

    let mut prompts: Vec<(u32, u32)> =
        (0..DIGITS as u32).flat_map(|a| (0..DIGITS as u32).map(move |b| (a, b))).collect();
    prompts.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, 0)));
    let (eval_pool, train_pool) = prompts.split_at(cfg.eval_prompt_count());

    let build = |pool: &[(u32, u32)], n: usize, stream: u64| -> Result<Vec<PreferenceRecord>> {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, stream));
        (0..n)
            .map(|i| {
                let (d1, d2) = pool[i % pool.len()];
                let answer = (d1 + d2) % DIGITS as u32;
                let wrong = (answer + rng.gen_range(1..DIGITS as u32)) % DIGITS as u32;
                let fork = map.first_fork + rng.gen_range(0..cfg.fork_width as u32);
                Ok(PreferenceRecord {
                    query: TokenSequence::prompt(vec![map.bos, d1, d2], &vocab)?,
                    winner: TokenSequence::response(vec![fork, map.marker, answer, map.eos], &vocab)?,
                    loser: TokenSequence::response(vec![fork, map.marker, wrong, map.eos], &vocab)?,
                    margin: 0.0,
                    source: Source::Human,
                })
            })
            .collect()
    };

    Ok(TaskDataset {
        config: *cfg,
        token_map: map,
        train: build(train_pool, cfg.n_train_prompts, 1)?,
        eval: build(eval_pool, cfg.n_eval_prompts, 2)?,
    })
}

/// Whether `response` is a correct answer to `prompt`:
/// `[fork, MARK, (d1 + d2) mod 10, EOS]`.
pub fn oracle_check(map: &TokenMap, prompt: &TokenSequence, response: &TokenSequence) -> bool {
    let (d1, d2) = match prompt.tokens() {
        [bos, a, b] if *bos == map.bos => match (map.digit(*a), map.digit(*b)) {
            (Some(a), Some(b)) => (a, b),
            _ => return false,
        },
        _ => return false,
    };
    matches!(
        response.tokens(),
        [f, m, ans, e] if map.is_fork(*f)
            && *m == map.marker
            && *ans == (d1 + d2) % DIGITS as u32
            && *e == map.eos
    )
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TaskConfig,
    token_map: TokenMap,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: Header,
}

/// Write a header line followed by the training then evaluation records.
/// The header's `n_train_prompts` tells readers where the split falls.
pub fn write_dataset<W: Write>(dataset: &TaskDataset, mut out: W) -> Result<()> {
    let mut config = dataset.config;
    config.n_train_prompts = dataset.train.len();
    config.n_eval_prompts = dataset.eval.len();
    let header = HeaderLine { header: Header { config, token_map: dataset.token_map } };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    crate::records::write_records(&dataset.train, &mut out)?;
    crate::records::write_records(&dataset.eval, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(mut input: R) -> Result<TaskDataset> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    let header: HeaderLine = serde_json::from_str(first.trim())
        .map_err(|e| GemError::Format(format!("dataset header: {e}")))?;
    let Header { config, token_map } = header.header;
    if TokenMap::new(config.vocab_size, config.fork_width)? != token_map {
        return Err(GemError::Format("token map does not match the task config".into()));
    }
    let mut records = crate::records::read_records(input, &token_map.vocab())?;
    if records.len() != config.n_train_prompts + config.n_eval_prompts {
        return Err(GemError::Format(format!(
            "header announces {} records, found {}",
            config.n_train_prompts + config.n_eval_prompts,
            records.len()
        )));
    }
    let eval = records.split_off(config.n_train_prompts);
    Ok(TaskDataset { config, token_map, train: records, eval })
}
