//! The shared policy: a fixed-window MLP over token embeddings.
//!
//! The next-token distribution reads the last `context_window` tokens of the
//! history (left-padded with a dedicated PAD embedding row), concatenates
//! their embeddings, applies one tanh hidden layer and projects onto the
//! vocabulary. The challenger token is masked out of every output
//! distribution. Both roles run on the same parameters:
//!
//! * challenger: history starts with `[<cp>]`
//! * solver: history starts with `query ++ [<sep>]`

mod checkpoint;

use std::sync::Arc;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};

use crate::autodiff::{ParameterLayout, ParameterVector, SliceId, Tape, Var};
use crate::rng::SeededStream;
use crate::sequence::{Role, TokenSequence};
use crate::vocab::{ReservedTokens, TokenId};
use crate::{LspError, Result};

pub const EMBEDDING: SliceId = SliceId(0);
pub const HIDDEN_WEIGHT: SliceId = SliceId(1);
pub const HIDDEN_BIAS: SliceId = SliceId(2);
pub const OUTPUT_WEIGHT: SliceId = SliceId(3);
pub const OUTPUT_BIAS: SliceId = SliceId(4);

/// Half-width of the uniform initialization of embeddings and weights.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyArchitecture {
    /// Total ids, reserved tokens included.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_window: usize,
    pub hidden_dim: usize,
}

impl PolicyArchitecture {
    pub fn validate(&self, max_arity: usize) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(LspError::Config(format!(
                "vocab_size {} leaves no ordinary tokens",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.context_window == 0 {
            return Err(LspError::Config("policy dimensions must be positive".into()));
        }
        if self.context_window < max_arity + 2 {
            return Err(LspError::Config(format!(
                "context_window {} is shorter than max arity {max_arity} + 2",
                self.context_window
            )));
        }
        Ok(())
    }

    pub fn reserved(&self) -> ReservedTokens {
        ReservedTokens::for_vocab_size(self.vocab_size)
    }

    /// Row of the embedding table used for left padding.
    pub fn pad_row(&self) -> usize {
        self.vocab_size
    }

    pub fn layout(&self) -> ParameterLayout {
        let input = self.context_window * self.embed_dim;
        ParameterLayout::new(&[
            ("embedding", self.vocab_size + 1, self.embed_dim),
            ("hidden.weight", self.hidden_dim, input),
            ("hidden.bias", 1, self.hidden_dim),
            ("output.weight", self.vocab_size, self.hidden_dim),
            ("output.bias", 1, self.vocab_size),
        ])
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub sequence: TokenSequence,
    /// Log-probabilities under the tempered sampling distribution.
    pub per_token_logprobs: Vec<f64>,
    pub total_logprob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    arch: PolicyArchitecture,
    params: ParameterVector,
}

/// Reusable buffers for the allocation-free forward pass.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    input: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Policy {
    /// Embeddings and weights uniform in `(-INIT_SCALE, INIT_SCALE)`, biases 0.
    pub fn init(arch: PolicyArchitecture, rng: &mut SeededStream) -> Self {
        let mut policy = Self::zeros(arch);
        for id in [EMBEDDING, HIDDEN_WEIGHT, OUTPUT_WEIGHT] {
            for v in policy.params.slice_mut(id) {
                *v = rng.uniform_in(-INIT_SCALE, INIT_SCALE);
            }
        }
        policy
    }

    /// All-zero parameters: every unmasked token is equally likely.
    pub fn zeros(arch: PolicyArchitecture) -> Self {
        Policy {
            arch,
            params: ParameterVector::zeros(Arc::new(arch.layout())),
        }
    }

    pub fn from_params(arch: PolicyArchitecture, params: ParameterVector) -> Result<Self> {
        if **params.layout() != arch.layout() {
            return Err(LspError::ArchitectureMismatch(
                "parameter layout does not match the architecture".into(),
            ));
        }
        Ok(Policy { arch, params })
    }

    pub fn architecture(&self) -> &PolicyArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    pub fn reserved(&self) -> ReservedTokens {
        self.arch.reserved()
    }

    fn check_token(&self, t: TokenId) -> Result<()> {
        if (t as usize) < self.arch.vocab_size {
            Ok(())
        } else {
            Err(LspError::Usage(format!(
                "token id {t} out of range for vocabulary of {}",
                self.arch.vocab_size
            )))
        }
    }

    /// Embedding rows of the window ending at the end of `history`.
    fn window_rows(&self, history: &[TokenId]) -> Vec<usize> {
        let k = self.arch.context_window;
        let tail = &history[history.len().saturating_sub(k)..];
        let mut rows = vec![self.arch.pad_row(); k - tail.len()];
        rows.extend(tail.iter().map(|&t| t as usize));
        rows
    }

    /// Raw logits of the next token after `history`.
    pub fn logits<'s>(&self, history: &[TokenId], scratch: &'s mut Scratch) -> &'s [f64] {
        let a = &self.arch;
        let p = &self.params;
        let (emb, w1, b1, w2, b2) = (
            p.slice(EMBEDDING),
            p.slice(HIDDEN_WEIGHT),
            p.slice(HIDDEN_BIAS),
            p.slice(OUTPUT_WEIGHT),
            p.slice(OUTPUT_BIAS),
        );
        let d = a.embed_dim;
        scratch.input.clear();
        for row in self.window_rows(history) {
            scratch.input.extend_from_slice(&emb[row * d..(row + 1) * d]);
        }
        let cols = scratch.input.len();
        scratch.hidden.clear();
        scratch.hidden.extend((0..a.hidden_dim).map(|r| {
            let w = &w1[r * cols..(r + 1) * cols];
            (b1[r] + dot(w, &scratch.input)).tanh()
        }));
        let h = a.hidden_dim;
        scratch.logits.clear();
        scratch
            .logits
            .extend((0..a.vocab_size).map(|r| b2[r] + dot(&w2[r * h..(r + 1) * h], &scratch.hidden)));
        &scratch.logits
    }

    /// `softmax(logits / temperature)` with the challenger token forced to 0.
    pub fn next_token_distribution(&self, history: &[TokenId], temperature: f64) -> Result<Vec<f64>> {
        let mut scratch = Scratch::default();
        let mut probs = Vec::new();
        self.distribution_into(history, temperature, &mut scratch, &mut probs)?;
        Ok(probs)
    }

    fn distribution_into(
        &self,
        history: &[TokenId],
        temperature: f64,
        scratch: &mut Scratch,
        probs: &mut Vec<f64>,
    ) -> Result<()> {
        if !(temperature > 0.0) {
            return Err(LspError::Usage(format!("temperature {temperature} must be positive")));
        }
        let cp = self.reserved().cp as usize;
        let logits = self.logits(history, scratch);
        let max = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != cp)
            .fold(f64::NEG_INFINITY, |m, (_, &z)| m.max(z));
        probs.clear();
        probs.extend(logits.iter().enumerate().map(|(j, &z)| {
            if j == cp {
                0.0
            } else {
                ((z - max) / temperature).exp()
            }
        }));
        let total: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= total;
        }
        Ok(())
    }

    /// Samples autoregressively after `prefix` until EOS or `max_len` tokens.
    pub fn sample_sequence(
        &self,
        prefix: &[TokenId],
        role: Role,
        sampling: &SamplingConfig,
        rng: &mut SeededStream,
    ) -> Result<SampledSequence> {
        let reserved = self.reserved();
        match role {
            Role::Query if prefix != [reserved.cp] => {
                return Err(LspError::Usage("query prefix must be the challenger token".into()))
            }
            Role::Answer if prefix.last() != Some(&reserved.sep) => {
                return Err(LspError::Usage("answer prefix must end with the separator".into()))
            }
            _ => {}
        }
        for &t in prefix {
            self.check_token(t)?;
        }
        let mut history = prefix.to_vec();
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut scratch = Scratch::default();
        let mut probs = Vec::new();
        while tokens.len() < sampling.max_len {
            self.distribution_into(&history, sampling.temperature, &mut scratch, &mut probs)?;
            let token = draw(&probs, rng.uniform());
            logprobs.push(probs[token].ln());
            let token = token as TokenId;
            tokens.push(token);
            history.push(token);
            if token == reserved.eos {
                break;
            }
        }
        let total_logprob = logprobs.iter().sum();
        Ok(SampledSequence {
            sequence: TokenSequence::from_parts(tokens, role, reserved.eos),
            per_token_logprobs: logprobs,
            total_logprob,
        })
    }

    /// `log pi(tokens | prefix)` at temperature 1.
    pub fn sequence_logprob(&self, prefix: &[TokenId], tokens: &[TokenId]) -> Result<f64> {
        self.check_scorable(prefix, tokens)?;
        let cp = self.reserved().cp as usize;
        let mut history = prefix.to_vec();
        let mut scratch = Scratch::default();
        let mut total = 0.0;
        for &t in tokens {
            let logits = self.logits(&history, &mut scratch);
            total += log_softmax_at(logits, cp, t as usize);
            history.push(t);
        }
        Ok(total)
    }

    fn check_scorable(&self, prefix: &[TokenId], tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(LspError::Usage("cannot score an empty sequence".into()));
        }
        for &t in prefix.iter().chain(tokens) {
            self.check_token(t)?;
        }
        if tokens.contains(&self.reserved().cp) {
            return Err(LspError::Usage("the challenger token is never emitted".into()));
        }
        Ok(())
    }

    /// Records `log pi(tokens | prefix)` on `tape` and returns its node.
    pub fn record_logprob(&self, tape: &mut Tape, prefix: &[TokenId], tokens: &[TokenId]) -> Result<Var> {
        self.check_scorable(prefix, tokens)?;
        record_logprob(&self.arch, tape, prefix, tokens)
    }
}

/// Records `log pi(tokens | prefix)` for any parameters of this architecture.
pub fn record_logprob(
    arch: &PolicyArchitecture,
    tape: &mut Tape,
    prefix: &[TokenId],
    tokens: &[TokenId],
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(LspError::Usage("cannot score an empty sequence".into()));
    }
    let cp = arch.reserved().cp as usize;
    let k = arch.context_window;
    let mut history = prefix.to_vec();
    let mut terms = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let tail = &history[history.len().saturating_sub(k)..];
        let mut rows = vec![arch.pad_row(); k - tail.len()];
        rows.extend(tail.iter().map(|&x| x as usize));
        let x = tape.embed_rows(EMBEDDING, rows);
        let pre = tape.affine(x, HIDDEN_WEIGHT, HIDDEN_BIAS);
        let h = tape.tanh(pre);
        let z = tape.affine(h, OUTPUT_WEIGHT, OUTPUT_BIAS);
        let ls = tape.log_softmax(z, &[cp]);
        terms.push(tape.gather(ls, t as usize));
        history.push(t);
    }
    Ok(tape.sum(&terms))
}

/// Solver conditioning: the query followed by the separator.
pub fn answer_prefix(query: &TokenSequence, reserved: ReservedTokens) -> Vec<TokenId> {
    let mut prefix = query.tokens().to_vec();
    prefix.push(reserved.sep);
    prefix
}

/// Challenger conditioning.
pub fn challenger_prefix(reserved: ReservedTokens) -> Vec<TokenId> {
    vec![reserved.cp]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_softmax_at(logits: &[f64], masked: usize, index: usize) -> f64 {
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != masked)
        .fold(f64::NEG_INFINITY, |m, (_, &z)| m.max(z));
    let sum: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != masked)
        .map(|(_, &z)| (z - max).exp())
        .sum();
    logits[index] - (max + sum.ln())
}

/// Inverse-CDF draw; zero-probability entries are never selected.
fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Frozen copy of the policy that anchors the KL penalty.
#[derive(Debug, Clone)]
pub struct ReferenceSnapshot {
    policy: Arc<Policy>,
}

pub fn snapshot_reference(policy: &Policy) -> ReferenceSnapshot {
    ReferenceSnapshot {
        policy: Arc::new(policy.clone()),
    }
}

impl ReferenceSnapshot {
    pub fn from_policy(policy: Policy) -> Self {
        ReferenceSnapshot {
            policy: Arc::new(policy),
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn sequence_logprob(&self, prefix: &[TokenId], tokens: &[TokenId]) -> Result<f64> {
        self.policy.sequence_logprob(prefix, tokens)
    }

    pub fn fingerprint(&self) -> u64 {
        self.policy.params().fingerprint()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_checkpoint(&self.policy)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_policy(decode_checkpoint(bytes, "<memory>")?))
    }
}
