//! Command line front end. Every failure prints one JSON line
//! `{"error": <kind>, "message": <text>}` on stderr; exit status is 0 on
//! success, 1 on failure and 2 on a usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use super::{evaluate_checkpoints, export_curves, gradcheck, GRADCHECK_TOLERANCE};
use crate::config::RunConfig;
use crate::policy::load_checkpoint;
use crate::task::{write_dataset, Opcode, TaskGrammar};
use crate::trainer::{run, RunStart};
use crate::vocab::build_vocabulary;
use crate::{LspError, Result};

#[derive(Parser, Debug)]
#[command(name = "lsp", version, about = "Language self-play on a verifiable token world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train according to a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Start from these parameters (reference snapshotted from them).
        #[arg(long, conflicts_with = "resume")]
        init: Option<PathBuf>,
        /// Continue from a resume file written next to a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Win rate of checkpoint A against checkpoint B on held-out queries.
    Eval {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        temperature: f64,
        #[arg(long, default_value_t = 24)]
        max_len: usize,
        /// Take the grammar from this config instead of the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare loss gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write a query dataset for the GRPO baseline.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Convert a metrics log into a CSV of training curves.
    Export {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs the command line with process stdio.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    dispatch_to(args, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Runs the command line writing to the given streams; returns the exit code.
pub fn dispatch_to<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let line = json!({ "error": e.kind(), "message": e.to_string() });
            let _ = writeln!(err, "{line}");
            if matches!(e, LspError::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

fn emit(out: &mut dyn Write, value: serde_json::Value) -> Result<()> {
    writeln!(out, "{value}").map_err(|e| LspError::io("<stdout>", e))
}

fn grammar_for_vocab(vocab_size: usize) -> Result<TaskGrammar> {
    let ordinary = vocab_size.saturating_sub(3);
    let vocab = build_vocabulary(ordinary)?;
    let ops: Vec<Opcode> = Opcode::ALL
        .into_iter()
        .filter(|op| (op.token() as usize) < ordinary)
        .collect();
    TaskGrammar::new(&vocab, &ops, 2, 6)
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train {
            config,
            init,
            resume,
        } => {
            let cfg = RunConfig::load(&config)?;
            let start = match (init, resume) {
                (_, Some(r)) => RunStart::Resume(r),
                (Some(i), None) => RunStart::Checkpoint(i),
                (None, None) => RunStart::Fresh,
            };
            let s = run(&cfg, start)?;
            emit(
                out,
                json!({
                    "epochs": s.epochs,
                    "final_checkpoint": s.final_checkpoint,
                    "metrics": s.metrics_path,
                    "failed_epochs": s.failures,
                    "final_heldout_reward": s.heldout.last().map(|h| h.1),
                }),
            )?;
            Ok(0)
        }
        Command::Eval {
            a,
            b,
            n,
            seed,
            temperature,
            max_len,
            config,
        } => {
            let grammar = match config {
                Some(path) => RunConfig::load(&path)?.grammar()?,
                None => grammar_for_vocab(load_checkpoint(&a)?.architecture().vocab_size)?,
            };
            let r = evaluate_checkpoints(&a, &b, &grammar, n, seed, temperature, max_len)?;
            let per_opcode: serde_json::Map<String, serde_json::Value> = r
                .per_opcode
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        json!({"wins": t.wins, "losses": t.losses, "ties": t.ties, "win_rate": t.win_rate()}),
                    )
                })
                .collect();
            emit(
                out,
                json!({
                    "win_rate": r.win_rate,
                    "wins": r.wins,
                    "losses": r.losses,
                    "ties": r.ties,
                    "n": r.eval_n,
                    "seed": r.eval_seed,
                    "per_opcode": per_opcode,
                }),
            )?;
            Ok(0)
        }
        Command::Gradcheck { seed } => {
            let r = gradcheck(seed)?;
            for c in &r.cases {
                emit(
                    out,
                    json!({"loss": c.loss, "beta": c.beta, "coordinates": c.coordinates, "max_rel_error": c.max_rel_error}),
                )?;
            }
            emit(
                out,
                json!({"seed": seed, "params": r.params, "max_rel_error": r.max_rel_error(), "tolerance": GRADCHECK_TOLERANCE, "pass": r.passed()}),
            )?;
            Ok(if r.passed() { 0 } else { 1 })
        }
        Command::GenData {
            out: path,
            n,
            seed,
            config,
        } => {
            let cfg = match config {
                Some(c) => RunConfig::load(&c)?,
                None => RunConfig::default(),
            };
            let grammar = cfg.grammar()?;
            let data = grammar.generate_dataset(n, seed)?;
            write_dataset(&path, &data, &cfg.vocabulary()?, &grammar, seed)?;
            emit(out, json!({"dataset": path, "n": n, "seed": seed}))?;
            Ok(0)
        }
        Command::Export { metrics, out: csv } => {
            let e = export_curves(&metrics, &csv)?;
            for w in &e.warnings {
                let line = json!({"warning": "malformed metrics line", "line": w.line, "detail": w.detail});
                writeln!(err, "{line}").map_err(|e| LspError::io("<stderr>", e))?;
            }
            emit(out, json!({"csv": csv, "rows": e.rows.len(), "warnings": e.warnings.len()}))?;
            Ok(0)
        }
    }
}
