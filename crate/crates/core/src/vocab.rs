//! Synthetic token vocabulary.
//!
//! Ordinary tokens come first, reserved tokens last:
//!
//! ```text
//! 0..=9   digits "0".."9"
//! 10      terminator ";"
//! 11..=14 opcodes SORT REV SUM COPY
//! 15..    filler glyphs "t15", "t16", ...
//! n       <cp>   challenger prompt (conditioning only, never sampled)
//! n+1     <eos>
//! n+2     <sep>  query/answer separator
//! ```
//!
//! Small vocabularies keep the prefix of this layout, so a 12-token vocabulary
//! has the digits, the terminator and SORT only.

use std::collections::HashMap;

use crate::{LspError, Result};

pub type TokenId = u32;

pub const MIN_ORDINARY_SIZE: usize = 12;
pub const TERMINATOR: TokenId = 10;
pub const FIRST_OPCODE: TokenId = 11;

const OPCODE_GLYPHS: [&str; 4] = ["SORT", "REV", "SUM", "COPY"];

/// Ids of the three reserved tokens, which always occupy the top of the id
/// range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReservedTokens {
    pub cp: TokenId,
    pub eos: TokenId,
    pub sep: TokenId,
}

impl ReservedTokens {
    /// Reserved ids for a vocabulary of `vocab_size` ids in total.
    pub fn for_vocab_size(vocab_size: usize) -> Self {
        assert!(vocab_size >= 4, "vocabulary needs at least one ordinary token");
        let n = (vocab_size - 3) as TokenId;
        ReservedTokens {
            cp: n,
            eos: n + 1,
            sep: n + 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    ordinary_size: usize,
    reserved: ReservedTokens,
    glyphs: Vec<String>,
    ids: HashMap<String, TokenId>,
}

/// Builds the vocabulary with `ordinary_size` ordinary tokens followed by the
/// reserved tokens.
pub fn build_vocabulary(ordinary_size: usize) -> Result<Vocabulary> {
    if ordinary_size < MIN_ORDINARY_SIZE {
        return Err(LspError::Config(format!(
            "ordinary vocabulary size {ordinary_size} is below the minimum {MIN_ORDINARY_SIZE}"
        )));
    }
    let mut glyphs = Vec::with_capacity(ordinary_size + 3);
    for id in 0..ordinary_size {
        let glyph = match id {
            0..=9 => id.to_string(),
            10 => ";".to_string(),
            11..=14 => OPCODE_GLYPHS[id - 11].to_string(),
            _ => format!("t{id}"),
        };
        glyphs.push(glyph);
    }
    glyphs.extend(["<cp>", "<eos>", "<sep>"].map(String::from));
    let ids = glyphs
        .iter()
        .enumerate()
        .map(|(id, g)| (g.clone(), id as TokenId))
        .collect();
    Ok(Vocabulary {
        ordinary_size,
        reserved: ReservedTokens::for_vocab_size(ordinary_size + 3),
        glyphs,
        ids,
    })
}

impl Vocabulary {
    pub fn ordinary_size(&self) -> usize {
        self.ordinary_size
    }

    /// Total id count, reserved tokens included.
    pub fn size(&self) -> usize {
        self.glyphs.len()
    }

    pub fn reserved(&self) -> ReservedTokens {
        self.reserved
    }

    pub fn glyph(&self, id: TokenId) -> Option<&str> {
        self.glyphs.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, glyph: &str) -> Option<TokenId> {
        self.ids.get(glyph).copied()
    }

    /// Whitespace-separated glyphs to ids.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|g| {
                self.id(g)
                    .ok_or_else(|| LspError::Usage(format!("unknown glyph {g:?}")))
            })
            .collect()
    }

    /// Ids to space-separated glyphs. Out-of-range ids render as `?<id>`.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| match self.glyph(t) {
                Some(g) => g.to_string(),
                None => format!("?{t}"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}
