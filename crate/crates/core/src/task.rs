//! The verifiable token world.
//!
//! A well-formed query is `OPCODE d1 .. dk ; <eos>` with `k` digits inside the
//! grammar's arity range. Answers are digit strings, optionally followed by
//! `;`, then EOS. The expected output per opcode:
//!
//! | opcode | output                                        |
//! |--------|-----------------------------------------------|
//! | SORT   | operands ascending                            |
//! | REV    | operands reversed                             |
//! | SUM    | decimal digits of the operand sum mod 100     |
//! | COPY   | operands verbatim                             |

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::fnv1a;
use crate::rng::{stream_at, SeededStream};
use crate::sequence::{Role, TokenSequence};
use crate::vocab::{ReservedTokens, TokenId, Vocabulary, FIRST_OPCODE, TERMINATOR};
use crate::{LspError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Sort,
    Rev,
    Sum,
    Copy,
}

impl Opcode {
    pub const ALL: [Opcode; 4] = [Opcode::Sort, Opcode::Rev, Opcode::Sum, Opcode::Copy];

    pub fn glyph(self) -> &'static str {
        match self {
            Opcode::Sort => "SORT",
            Opcode::Rev => "REV",
            Opcode::Sum => "SUM",
            Opcode::Copy => "COPY",
        }
    }

    pub fn token(self) -> TokenId {
        FIRST_OPCODE + self as TokenId
    }

    fn from_token(t: TokenId) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|op| op.token() == t)
    }

    /// The unique correct output for `operands`.
    pub fn expected_output(self, operands: &[u8]) -> Vec<u8> {
        match self {
            Opcode::Sort => {
                let mut out = operands.to_vec();
                out.sort_unstable();
                out
            }
            Opcode::Rev => operands.iter().rev().copied().collect(),
            Opcode::Copy => operands.to_vec(),
            Opcode::Sum => {
                let total = operands.iter().map(|&d| d as u32).sum::<u32>() % 100;
                if total >= 10 {
                    vec![(total / 10) as u8, (total % 10) as u8]
                } else {
                    vec![total as u8]
                }
            }
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.glyph())
    }
}

impl FromStr for Opcode {
    type Err = LspError;

    fn from_str(s: &str) -> Result<Self> {
        Opcode::ALL
            .into_iter()
            .find(|op| op.glyph() == s)
            .ok_or_else(|| LspError::Config(format!("unknown opcode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Defect {
    /// First token is not an opcode of this grammar.
    MissingOpcode,
    ArityOutOfRange,
    /// Something other than a digit where an operand or `;` belongs.
    UnexpectedToken,
    MissingTerminator,
    /// Tokens after the `;`.
    TrailingTokens,
    /// Truncated before EOS.
    Unterminated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuery {
    pub opcode: Option<Opcode>,
    pub operands: Vec<u8>,
    pub defects: Vec<Defect>,
}

impl ParsedQuery {
    pub fn well_formed(&self) -> bool {
        self.defects.is_empty()
    }

    fn has(&self, d: Defect) -> bool {
        self.defects.contains(&d)
    }
}

/// The seven binary rubric criteria, in order Q1 Q2 Q3 A1 A2 A3 A4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QualityScore {
    pub criteria: [bool; 7],
}

pub const QUALITY_CRITERIA: [&str; 7] = [
    "Q1 recognizable opcode",
    "Q2 arity in range",
    "Q3 properly terminated",
    "A1 answer nonempty and terminated",
    "A2 answer uses the output alphabet",
    "A3 answer has the expected length",
    "A4 answer is not a copy of the operands",
];

impl QualityScore {
    /// Integer score in `0..=7`.
    pub fn total(&self) -> u8 {
        self.criteria.iter().filter(|&&c| c).count() as u8
    }

    /// `total / 7`, in `[0, 1]`.
    pub fn scaled(&self) -> f64 {
        self.total() as f64 / 7.0
    }
}

/// Everything the trainer needs from an environment.
pub trait World: Send + Sync {
    fn task_reward(&self, query: &TokenSequence, answer: &TokenSequence) -> f64;
    fn quality(&self, query: &TokenSequence, answer: &TokenSequence) -> QualityScore;
    fn well_formed(&self, query: &TokenSequence) -> bool;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGrammar {
    opcodes: Vec<Opcode>,
    min_arity: usize,
    max_arity: usize,
    reserved: ReservedTokens,
}

/// Which side of the train/eval partition a query falls on. The partition is
/// a fixed function of the query tokens, so training data and held-out sets
/// never share a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

const EVAL_BUCKETS: u64 = 8;

pub fn split_of(query: &TokenSequence) -> Split {
    let h = fnv1a(query.content().iter().flat_map(|t| t.to_le_bytes()));
    if h % EVAL_BUCKETS == 0 {
        Split::Eval
    } else {
        Split::Train
    }
}

impl TaskGrammar {
    pub fn new(
        vocab: &Vocabulary,
        opcodes: &[Opcode],
        min_arity: usize,
        max_arity: usize,
    ) -> Result<Self> {
        if opcodes.is_empty() {
            return Err(LspError::Config("grammar needs at least one opcode".into()));
        }
        if min_arity == 0 || min_arity > max_arity {
            return Err(LspError::Config(format!(
                "invalid arity range [{min_arity}, {max_arity}]"
            )));
        }
        for op in opcodes {
            if op.token() as usize >= vocab.ordinary_size() {
                return Err(LspError::Config(format!(
                    "vocabulary of {} ordinary tokens has no {op} token",
                    vocab.ordinary_size()
                )));
            }
        }
        let mut ops = opcodes.to_vec();
        ops.sort_unstable();
        ops.dedup();
        Ok(TaskGrammar {
            opcodes: ops,
            min_arity,
            max_arity,
            reserved: vocab.reserved(),
        })
    }

    pub fn opcodes(&self) -> &[Opcode] {
        &self.opcodes
    }

    pub fn arity_range(&self) -> (usize, usize) {
        (self.min_arity, self.max_arity)
    }

    pub fn reserved(&self) -> ReservedTokens {
        self.reserved
    }

    /// Total function: malformed queries come back with their defects.
    pub fn parse_query(&self, q: &TokenSequence) -> ParsedQuery {
        let mut defects = Vec::new();
        if !q.terminated() {
            defects.push(Defect::Unterminated);
        }
        let body = q.content();
        let mut rest = body;
        let opcode = rest
            .first()
            .and_then(|&t| Opcode::from_token(t))
            .filter(|op| self.opcodes.contains(op));
        if opcode.is_some() {
            rest = &rest[1..];
        } else {
            defects.push(Defect::MissingOpcode);
        }
        let digits = rest.iter().take_while(|&&t| t < 10).count();
        let operands: Vec<u8> = rest[..digits].iter().map(|&t| t as u8).collect();
        rest = &rest[digits..];
        if !(self.min_arity..=self.max_arity).contains(&operands.len()) {
            defects.push(Defect::ArityOutOfRange);
        }
        match rest.iter().position(|&t| t == TERMINATOR) {
            None => {
                if !rest.is_empty() {
                    defects.push(Defect::UnexpectedToken);
                }
                defects.push(Defect::MissingTerminator);
            }
            Some(pos) => {
                if pos > 0 {
                    defects.push(Defect::UnexpectedToken);
                }
                if pos + 1 < rest.len() {
                    defects.push(Defect::TrailingTokens);
                }
            }
        }
        ParsedQuery {
            opcode,
            operands,
            defects,
        }
    }

    /// Answer tokens with EOS and one trailing `;` removed.
    fn answer_body<'a>(&self, a: &'a TokenSequence) -> &'a [TokenId] {
        let body = a.content();
        match body.last() {
            Some(&TERMINATOR) => &body[..body.len() - 1],
            _ => body,
        }
    }

    /// Positional match against the expected output, normalized by the longer
    /// of the two lengths. Malformed queries score 0 for every answer.
    pub fn task_reward(&self, q: &TokenSequence, a: &TokenSequence) -> f64 {
        let parsed = self.parse_query(q);
        let Some(op) = parsed.opcode.filter(|_| parsed.well_formed()) else {
            return 0.0;
        };
        let expected = op.expected_output(&parsed.operands);
        let given = self.answer_body(a);
        let matched = expected
            .iter()
            .zip(given)
            .filter(|(&e, &g)| e as TokenId == g)
            .count();
        matched as f64 / expected.len().max(given.len()) as f64
    }

    pub fn quality_score(&self, q: &TokenSequence, a: &TokenSequence) -> QualityScore {
        let parsed = self.parse_query(q);
        let body = self.answer_body(a);
        let nonempty = !body.is_empty();
        let q1 = parsed.opcode.is_some();
        let q2 = !parsed.has(Defect::ArityOutOfRange) && !parsed.has(Defect::UnexpectedToken);
        let q3 = !parsed.has(Defect::MissingTerminator)
            && !parsed.has(Defect::TrailingTokens)
            && !parsed.has(Defect::Unterminated);
        let a1 = nonempty && a.terminated();
        let a2 = nonempty && q1 && body.iter().all(|&t| t < 10);
        let a3 = nonempty
            && parsed
                .opcode
                .is_some_and(|op| op.expected_output(&parsed.operands).len() == body.len());
        let is_copy = body.len() == parsed.operands.len()
            && body.iter().zip(&parsed.operands).all(|(&t, &d)| t == d as TokenId);
        let a4 = nonempty && (parsed.opcode == Some(Opcode::Copy) || !is_copy);
        QualityScore {
            criteria: [q1, q2, q3, a1, a2, a3, a4],
        }
    }

    /// Canonical answer sequence (expected digits then EOS) for a
    /// well-formed query.
    pub fn correct_answer(&self, q: &TokenSequence) -> Option<TokenSequence> {
        let parsed = self.parse_query(q);
        let op = parsed.opcode.filter(|_| parsed.well_formed())?;
        let mut tokens: Vec<TokenId> = op
            .expected_output(&parsed.operands)
            .into_iter()
            .map(TokenId::from)
            .collect();
        tokens.push(self.reserved.eos);
        Some(TokenSequence::from_parts(tokens, Role::Answer, self.reserved.eos))
    }

    pub fn make_query(&self, op: Opcode, operands: &[u8]) -> TokenSequence {
        let mut tokens = vec![op.token()];
        tokens.extend(operands.iter().map(|&d| d as TokenId));
        tokens.push(TERMINATOR);
        tokens.push(self.reserved.eos);
        TokenSequence::from_parts(tokens, Role::Query, self.reserved.eos)
    }

    fn random_query(&self, rng: &mut SeededStream) -> TokenSequence {
        let op = self.opcodes[rng.below(self.opcodes.len())];
        let arity = self.min_arity + rng.below(self.max_arity - self.min_arity + 1);
        let operands: Vec<u8> = (0..arity).map(|_| rng.below(10) as u8).collect();
        self.make_query(op, &operands)
    }

    fn draw_split(&self, n: usize, rng: &mut SeededStream, split: Split) -> Vec<TokenSequence> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let q = self.random_query(rng);
            if split_of(&q) == split {
                out.push(q);
            }
        }
        out
    }

    /// `n` well-formed training queries: uniform opcode, arity and digits,
    /// restricted to the training side of the split.
    pub fn generate_dataset(&self, n: usize, seed: u64) -> Result<Vec<TokenSequence>> {
        if n == 0 {
            return Err(LspError::Usage("dataset size must be at least 1".into()));
        }
        Ok(self.draw_split(n, &mut stream_at(seed, "dataset", 0), Split::Train))
    }

    /// `n` evaluation queries from the `eval` stream and the eval side of the
    /// split, so they never coincide with generated training data.
    pub fn held_out_set(&self, n: usize, seed: u64) -> Result<Vec<TokenSequence>> {
        if n == 0 {
            return Err(LspError::Usage("evaluation set size must be at least 1".into()));
        }
        Ok(self.draw_split(n, &mut stream_at(seed, "eval", 0), Split::Eval))
    }
}

impl World for TaskGrammar {
    fn task_reward(&self, query: &TokenSequence, answer: &TokenSequence) -> f64 {
        TaskGrammar::task_reward(self, query, answer)
    }

    fn quality(&self, query: &TokenSequence, answer: &TokenSequence) -> QualityScore {
        self.quality_score(query, answer)
    }

    fn well_formed(&self, query: &TokenSequence) -> bool {
        self.parse_query(query).well_formed()
    }
}

const DATASET_MAGIC: &str = "# lsp-dataset v1";

/// Writes one query per line in glyph form after a header recording the seed
/// and grammar.
pub fn write_dataset(
    path: &Path,
    queries: &[TokenSequence],
    vocab: &Vocabulary,
    grammar: &TaskGrammar,
    seed: u64,
) -> Result<()> {
    let io = |e| LspError::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let ops: Vec<&str> = grammar.opcodes().iter().map(|o| o.glyph()).collect();
    let (lo, hi) = grammar.arity_range();
    writeln!(
        f,
        "{DATASET_MAGIC} seed={seed} n={} opcodes={} arity={lo}-{hi}",
        queries.len(),
        ops.join(",")
    )
    .map_err(io)?;
    for q in queries {
        writeln!(f, "{}", q.to_text(vocab)).map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_dataset(path: &Path, vocab: &Vocabulary) -> Result<Vec<TokenSequence>> {
    let file = std::fs::File::open(path).map_err(|e| LspError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| LspError::io(path, e))?
        .unwrap_or_default();
    if !header.starts_with(DATASET_MAGIC) {
        return Err(LspError::format(path, "missing dataset header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| LspError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q = TokenSequence::from_text(vocab, &line, Role::Query)
            .map_err(|e| LspError::format(path, format!("line {}: {e}", i + 2)))?;
        out.push(q);
    }
    if out.is_empty() {
        return Err(LspError::format(path, "dataset has no queries"));
    }
    Ok(out)
}
