use serde::{Deserialize, Serialize};

use crate::vocab::{ReservedTokens, TokenId, Vocabulary};
use crate::{LspError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Query,
    Answer,
}

/// A role-tagged token string. `terminated` is true iff the last token is EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    role: Role,
    terminated: bool,
}

impl TokenSequence {
    /// Wraps `tokens`, checking the sequence invariants: at most `max_len`
    /// tokens, EOS only in last position, and no challenger token in a query.
    pub fn new(
        tokens: Vec<TokenId>,
        role: Role,
        reserved: ReservedTokens,
        max_len: usize,
    ) -> Result<Self> {
        if tokens.len() > max_len {
            return Err(LspError::Usage(format!(
                "sequence of {} tokens exceeds max_len {max_len}",
                tokens.len()
            )));
        }
        if role == Role::Query && tokens.contains(&reserved.cp) {
            return Err(LspError::Usage(
                "a query may not contain the challenger token".into(),
            ));
        }
        if let Some(pos) = tokens.iter().position(|&t| t == reserved.eos) {
            if pos + 1 != tokens.len() {
                return Err(LspError::Usage("EOS before end of sequence".into()));
            }
        }
        Ok(Self::from_parts(tokens, role, reserved.eos))
    }

    pub(crate) fn from_parts(tokens: Vec<TokenId>, role: Role, eos: TokenId) -> Self {
        let terminated = tokens.last() == Some(&eos);
        TokenSequence {
            tokens,
            role,
            terminated,
        }
    }

    /// Encodes glyph text and appends EOS, e.g. `"SORT 3 1 2 ;"`.
    pub fn from_text(vocab: &Vocabulary, text: &str, role: Role) -> Result<Self> {
        let mut tokens = vocab.encode(text)?;
        tokens.push(vocab.reserved().eos);
        Self::new(tokens, role, vocab.reserved(), usize::MAX)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        if self.terminated {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    /// Glyph form without the trailing EOS.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        vocab.decode(self.content())
    }
}
