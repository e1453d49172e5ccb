//! Preference records and their JSON Lines encoding.
//!
//! One object per line:
//!
//! ```json
//! {"query":[16,3,4],"winner":[10,14,7,15],"loser":[10,14,2,15],"margin":0.0,"source":"human"}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::tokens::{TokenId, TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Derived,
}

/// A comparison `(query, winner, loser, margin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub query: TokenSequence,
    pub winner: TokenSequence,
    pub loser: TokenSequence,
    pub margin: f64,
    pub source: Source,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    query: Vec<TokenId>,
    winner: Vec<TokenId>,
    loser: Vec<TokenId>,
    margin: f64,
    source: Source,
}

impl PreferenceRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&RecordLine {
            query: self.query.tokens().to_vec(),
            winner: self.winner.tokens().to_vec(),
            loser: self.loser.tokens().to_vec(),
            margin: self.margin,
            source: self.source,
        })?)
    }

    pub fn from_json(line: &str, vocab: &Vocabulary) -> Result<Self> {
        let raw: RecordLine = serde_json::from_str(line)?;
        if !raw.margin.is_finite() {
            return Err(GemError::Format("margin must be finite".into()));
        }
        Ok(Self {
            query: TokenSequence::prompt(raw.query, vocab)?,
            winner: TokenSequence::response(raw.winner, vocab)?,
            loser: TokenSequence::response(raw.loser, vocab)?,
            margin: raw.margin,
            source: raw.source,
        })
    }
}

pub fn write_records<W: Write>(records: &[PreferenceRecord], mut out: W) -> Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json()?)?;
    }
    Ok(())
}

/// Read records until EOF, skipping blank lines.
pub fn read_records<R: BufRead>(input: R, vocab: &Vocabulary) -> Result<Vec<PreferenceRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            PreferenceRecord::from_json(&line, vocab)
                .map_err(|e| GemError::Format(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}
