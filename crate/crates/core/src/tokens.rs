//! Vocabulary and token sequences.

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};

pub type TokenId = u32;

/// A closed vocabulary of `size` token ids with two reserved ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    bos: TokenId,
    eos: TokenId,
}

impl Vocabulary {
    pub const MIN_SIZE: usize = 4;

    pub fn new(size: usize, bos: TokenId, eos: TokenId) -> Result<Self> {
        if size < Self::MIN_SIZE {
            return Err(GemError::InvalidVocabulary(format!(
                "size {size} is below the minimum of {}",
                Self::MIN_SIZE
            )));
        }
        if bos == eos {
            return Err(GemError::InvalidVocabulary("BOS and EOS must differ".into()));
        }
        if bos as usize >= size || eos as usize >= size {
            return Err(GemError::InvalidVocabulary(format!(
                "reserved ids (bos={bos}, eos={eos}) must be below {size}"
            )));
        }
        Ok(Self { size, bos, eos })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn check_token(&self, token: TokenId) -> Result<()> {
        if (token as usize) < self.size {
            Ok(())
        } else {
            Err(GemError::TokenOutOfRange { token, vocab_size: self.size })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Prompt,
    Response,
}

/// A validated prompt or response.
///
/// Responses are non-empty, end with EOS and never contain BOS. Prompts are
/// non-empty and may carry BOS only at position 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    role: Role,
}

impl TokenSequence {
    pub fn prompt(tokens: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self> {
        if tokens.is_empty() {
            return Err(GemError::InvalidSequence("prompt is empty".into()));
        }
        for (i, &t) in tokens.iter().enumerate() {
            vocab.check_token(t)?;
            if t == vocab.bos() && i > 0 {
                return Err(GemError::InvalidSequence(format!("BOS at prompt position {i}")));
            }
        }
        Ok(Self { tokens, role: Role::Prompt })
    }

    pub fn response(tokens: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self> {
        match tokens.last() {
            None => return Err(GemError::InvalidSequence("response is empty".into())),
            Some(&last) if last != vocab.eos() => {
                return Err(GemError::InvalidSequence("response does not end with EOS".into()))
            }
            _ => {}
        }
        for (i, &t) in tokens.iter().enumerate() {
            vocab.check_token(t)?;
            if t == vocab.bos() {
                return Err(GemError::InvalidSequence(format!("BOS at response position {i}")));
            }
        }
        Ok(Self { tokens, role: Role::Response })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }
}
