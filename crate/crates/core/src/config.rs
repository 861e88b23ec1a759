//! Run configuration and its flat `key = value` file format.
//!
//! One assignment per line, `#` starts a comment line, blank lines are
//! ignored. Unknown or repeated keys are errors. Optional keys that are unset
//! are simply absent.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::policy::{PolicyArchitecture, SamplingConfig};
use crate::task::{Opcode, TaskGrammar};
use crate::vocab::{build_vocabulary, Vocabulary};
use crate::{LspError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Self-play with the quality self-reward.
    Lsp,
    /// Zero-sum self-play, quality computed for logging only.
    LspZero,
    /// Solver-only training on a fixed query dataset.
    Grpo,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Lsp => "LSP",
            Mode::LspZero => "LSP-Zero",
            Mode::Grpo => "GRPO",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = LspError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LSP" => Ok(Mode::Lsp),
            "LSP-Zero" => Ok(Mode::LspZero),
            "GRPO" => Ok(Mode::Grpo),
            other => Err(LspError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = LspError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(LspError::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Queries per epoch (`N`).
    pub n_queries: usize,
    /// Answers per query (`G`).
    pub group_size: usize,
    /// KL coefficient.
    pub beta: f64,
    /// Weight of the challenger loss in the total loss.
    pub alpha_ch: f64,
    /// Step size.
    pub eta: f64,
    /// Epoch count (`T`).
    pub epochs: u64,
    pub mode: Mode,
    pub seed: u64,
    /// Sampling temperature for training rollouts (both roles).
    pub temperature: f64,
    /// Sampling temperature for held-out evaluation.
    pub eval_temperature: f64,
    pub max_len: usize,
    pub ordinary_size: usize,
    pub embed_dim: usize,
    pub context_window: usize,
    pub hidden_dim: usize,
    pub opcodes: Vec<Opcode>,
    pub min_arity: usize,
    pub max_arity: usize,
    /// Query dataset, required in GRPO mode.
    pub dataset: Option<PathBuf>,
    pub optimizer: OptimizerKind,
    /// Checkpoint cadence in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Held-out evaluation cadence in epochs; 0 disables it.
    pub eval_every: u64,
    pub eval_size: usize,
    /// Seed of the held-out set; defaults to `seed`.
    pub eval_seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Anchor the KL term to this checkpoint instead of the initial params.
    pub reference_checkpoint: Option<PathBuf>,
    /// When false the solver loss is masked and only the challenger trains.
    pub train_solver: bool,
    /// When false `wall_ms` is logged as 0, making metrics logs reproducible.
    pub log_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_queries: 16,
            group_size: 8,
            beta: 0.05,
            alpha_ch: 1.0,
            eta: 3e-3,
            epochs: 2000,
            mode: Mode::Lsp,
            seed: 0,
            temperature: 1.0,
            eval_temperature: 0.01,
            max_len: 24,
            ordinary_size: 16,
            embed_dim: 32,
            context_window: 8,
            hidden_dim: 64,
            opcodes: Opcode::ALL.to_vec(),
            min_arity: 2,
            max_arity: 6,
            dataset: None,
            optimizer: OptimizerKind::Adam,
            checkpoint_every: 500,
            eval_every: 100,
            eval_size: 256,
            eval_seed: None,
            output_dir: PathBuf::from("run"),
            reference_checkpoint: None,
            train_solver: true,
            log_wall_time: true,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| LspError::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(LspError::Config(format!(
            "invalid value {value:?} for key {key}, expected true or false"
        ))),
    }
}

fn parse_opcodes(value: &str) -> Result<Vec<Opcode>> {
    value
        .split(',')
        .map(|s| s.trim().parse::<Opcode>())
        .collect()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                LspError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(LspError::Config(format!(
                    "line {}: duplicate key {key}",
                    lineno + 1
                )));
            }
            cfg.set(key, value)
                .map_err(|e| LspError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LspError::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            LspError::Config(msg) => LspError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| LspError::io(path, e))
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_queries" => self.n_queries = parse_value(key, value)?,
            "group_size" => self.group_size = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "alpha_ch" => self.alpha_ch = parse_value(key, value)?,
            "eta" => self.eta = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "mode" => self.mode = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "temperature" => self.temperature = parse_value(key, value)?,
            "eval_temperature" => self.eval_temperature = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "ordinary_size" => self.ordinary_size = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "context_window" => self.context_window = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "opcodes" => self.opcodes = parse_opcodes(value)?,
            "min_arity" => self.min_arity = parse_value(key, value)?,
            "max_arity" => self.max_arity = parse_value(key, value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "optimizer" => self.optimizer = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "eval_size" => self.eval_size = parse_value(key, value)?,
            "eval_seed" => self.eval_seed = Some(parse_value(key, value)?),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "reference_checkpoint" => self.reference_checkpoint = Some(PathBuf::from(value)),
            "train_solver" => self.train_solver = parse_bool(key, value)?,
            "log_wall_time" => self.log_wall_time = parse_bool(key, value)?,
            _ => return Err(LspError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Serializes every key. Floats use the shortest representation that
    /// parses back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("n_queries", self.n_queries.to_string());
        put("group_size", self.group_size.to_string());
        put("beta", format!("{:?}", self.beta));
        put("alpha_ch", format!("{:?}", self.alpha_ch));
        put("eta", format!("{:?}", self.eta));
        put("epochs", self.epochs.to_string());
        put("mode", self.mode.to_string());
        put("seed", self.seed.to_string());
        put("temperature", format!("{:?}", self.temperature));
        put("eval_temperature", format!("{:?}", self.eval_temperature));
        put("max_len", self.max_len.to_string());
        put("ordinary_size", self.ordinary_size.to_string());
        put("embed_dim", self.embed_dim.to_string());
        put("context_window", self.context_window.to_string());
        put("hidden_dim", self.hidden_dim.to_string());
        put(
            "opcodes",
            self.opcodes
                .iter()
                .map(|o| o.glyph())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("min_arity", self.min_arity.to_string());
        put("max_arity", self.max_arity.to_string());
        if let Some(p) = &self.dataset {
            put("dataset", p.display().to_string());
        }
        put("optimizer", self.optimizer.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("eval_every", self.eval_every.to_string());
        put("eval_size", self.eval_size.to_string());
        if let Some(s) = self.eval_seed {
            put("eval_seed", s.to_string());
        }
        put("output_dir", self.output_dir.display().to_string());
        if let Some(p) = &self.reference_checkpoint {
            put("reference_checkpoint", p.display().to_string());
        }
        put("train_solver", self.train_solver.to_string());
        put("log_wall_time", self.log_wall_time.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LspError::Config(msg));
        if self.n_queries < 2 {
            return fail(format!("n_queries must be at least 2, got {}", self.n_queries));
        }
        if self.group_size < 2 {
            return fail(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.alpha_ch >= 0.0 && self.alpha_ch.is_finite()) {
            return fail(format!("alpha_ch must be finite and >= 0, got {}", self.alpha_ch));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be finite and > 0, got {}", self.eta));
        }
        for (name, t) in [
            ("temperature", self.temperature),
            ("eval_temperature", self.eval_temperature),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return fail(format!("{name} must be finite and > 0, got {t}"));
            }
        }
        if self.max_len == 0 {
            return fail("max_len must be positive".into());
        }
        if self.mode == Mode::Grpo && self.dataset.is_none() {
            return fail("GRPO mode requires a dataset path".into());
        }
        if self.eval_size == 0 && self.eval_every > 0 {
            return fail("eval_size must be positive when evaluation is enabled".into());
        }
        self.architecture().validate(self.max_arity)?;
        self.grammar()?;
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        build_vocabulary(self.ordinary_size)
    }

    pub fn grammar(&self) -> Result<TaskGrammar> {
        TaskGrammar::new(
            &self.vocabulary()?,
            &self.opcodes,
            self.min_arity,
            self.max_arity,
        )
    }

    pub fn architecture(&self) -> PolicyArchitecture {
        PolicyArchitecture {
            vocab_size: self.ordinary_size + 3,
            embed_dim: self.embed_dim,
            context_window: self.context_window,
            hidden_dim: self.hidden_dim,
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            max_len: self.max_len,
        }
    }

    pub fn eval_sampling(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.eval_temperature,
            max_len: self.max_len,
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval_seed.unwrap_or(self.seed)
    }
}
