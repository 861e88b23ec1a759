use std::collections::BTreeMap;
use std::path::Path;

use crate::exec::Exec;
use crate::policy::{answer_prefix, load_checkpoint, Policy, PolicyArchitecture, SamplingConfig};
use crate::rng::{stream_at, SeededStream};
use crate::sequence::{Role, TokenSequence};
use crate::task::TaskGrammar;
use crate::{LspError, Result};

/// Anything that can answer a query.
pub trait Answerer: Sync {
    fn answer(
        &self,
        query: &TokenSequence,
        sampling: &SamplingConfig,
        rng: &mut SeededStream,
    ) -> Result<TokenSequence>;

    /// Architecture to compare against the opponent; `None` skips the check.
    fn architecture(&self) -> Option<PolicyArchitecture>;
}

impl Answerer for Policy {
    fn answer(
        &self,
        query: &TokenSequence,
        sampling: &SamplingConfig,
        rng: &mut SeededStream,
    ) -> Result<TokenSequence> {
        let prefix = answer_prefix(query, self.reserved());
        Ok(self.sample_sequence(&prefix, Role::Answer, sampling, rng)?.sequence)
    }

    fn architecture(&self) -> Option<PolicyArchitecture> {
        Some(*Policy::architecture(self))
    }
}

/// Answers every well-formed query correctly and malformed ones with a bare
/// EOS. A stand-in for a perfect checkpoint in tests.
pub struct OracleAnswerer {
    pub grammar: TaskGrammar,
}

impl Answerer for OracleAnswerer {
    fn answer(&self, query: &TokenSequence, _: &SamplingConfig, _: &mut SeededStream) -> Result<TokenSequence> {
        let eos = self.grammar.reserved().eos;
        Ok(self
            .grammar
            .correct_answer(query)
            .unwrap_or_else(|| TokenSequence::from_parts(vec![eos], Role::Answer, eos)))
    }

    fn architecture(&self) -> Option<PolicyArchitecture> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

impl Tally {
    pub fn n(&self) -> usize {
        self.wins + self.losses + self.ties
    }

    /// `(wins + ties / 2) / n`.
    pub fn win_rate(&self) -> f64 {
        (self.wins as f64 + 0.5 * self.ties as f64) / self.n() as f64
    }

    fn record(&mut self, ra: f64, rb: f64) {
        if ra > rb {
            self.wins += 1;
        } else if ra < rb {
            self.losses += 1;
        } else {
            self.ties += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinRateReport {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub win_rate: f64,
    /// Keyed by opcode glyph; malformed queries fall under `malformed`.
    pub per_opcode: BTreeMap<String, Tally>,
    pub eval_seed: u64,
    pub eval_n: usize,
}

impl WinRateReport {
    pub fn from_tally(tally: Tally, eval_seed: u64) -> Self {
        WinRateReport {
            wins: tally.wins,
            losses: tally.losses,
            ties: tally.ties,
            win_rate: tally.win_rate(),
            per_opcode: BTreeMap::new(),
            eval_seed,
            eval_n: tally.n(),
        }
    }
}

/// Compares `a` against `b` on `queries`: both answer query `i` from stream
/// `("eval-answer", i)` under `seed`, and the higher task reward wins.
pub fn evaluate_win_rate(
    a: &dyn Answerer,
    b: &dyn Answerer,
    grammar: &TaskGrammar,
    queries: &[TokenSequence],
    sampling: &SamplingConfig,
    seed: u64,
    exec: Exec,
) -> Result<WinRateReport> {
    if queries.is_empty() {
        return Err(LspError::Usage("evaluation set is empty".into()));
    }
    if let (Some(x), Some(y)) = (a.architecture(), b.architecture()) {
        if x != y {
            return Err(LspError::ArchitectureMismatch(format!("{x:?} vs {y:?}")));
        }
    }
    let rewards = exec.try_map(queries.len(), |i| -> Result<(f64, f64)> {
        let q = &queries[i];
        let ans_a = a.answer(q, sampling, &mut stream_at(seed, "eval-answer", i as u64))?;
        let ans_b = b.answer(q, sampling, &mut stream_at(seed, "eval-answer", i as u64))?;
        Ok((grammar.task_reward(q, &ans_a), grammar.task_reward(q, &ans_b)))
    })?;
    let mut total = Tally::default();
    let mut per_opcode: BTreeMap<String, Tally> = BTreeMap::new();
    for (q, (ra, rb)) in queries.iter().zip(rewards) {
        total.record(ra, rb);
        let key = grammar
            .parse_query(q)
            .opcode
            .map_or("malformed".to_string(), |op| op.glyph().to_string());
        per_opcode.entry(key).or_default().record(ra, rb);
    }
    let mut report = WinRateReport::from_tally(total, seed);
    report.per_opcode = per_opcode;
    Ok(report)
}

/// Loads two checkpoints and compares them on `n` held-out queries drawn
/// with `seed`.
pub fn evaluate_checkpoints(
    path_a: &Path,
    path_b: &Path,
    grammar: &TaskGrammar,
    n: usize,
    seed: u64,
    temperature: f64,
    max_len: usize,
) -> Result<WinRateReport> {
    let a = load_checkpoint(path_a)?;
    let b = load_checkpoint(path_b)?;
    let queries = grammar.held_out_set(n, seed)?;
    let sampling = SamplingConfig {
        temperature,
        max_len,
    };
    evaluate_win_rate(&a, &b, grammar, &queries, &sampling, seed, Exec::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::save_checkpoint;
    use crate::task::Opcode;
    use crate::vocab::build_vocabulary;

    fn setup() -> (TaskGrammar, PolicyArchitecture) {
        let v = build_vocabulary(16).unwrap();
        let g = TaskGrammar::new(&v, &Opcode::ALL, 2, 6).unwrap();
        let arch = PolicyArchitecture {
            vocab_size: 19,
            embed_dim: 4,
            context_window: 8,
            hidden_dim: 8,
        };
        (g, arch)
    }

    fn sampling() -> SamplingConfig {
        SamplingConfig {
            temperature: 0.01,
            max_len: 24,
        }
    }

    #[test]
    fn formula_example() {
        let t = Tally {
            wins: 3,
            losses: 1,
            ties: 1,
        };
        assert!((WinRateReport::from_tally(t, 0).win_rate - 0.7).abs() < 1e-15);
    }

    #[test]
    fn self_play_is_all_ties() {
        let (g, arch) = setup();
        let p = Policy::init(arch, &mut stream_at(1, "init", 0));
        let qs = g.held_out_set(64, 3).unwrap();
        let r = evaluate_win_rate(&p, &p, &g, &qs, &sampling(), 3, Exec::default()).unwrap();
        assert_eq!(r.ties, 64);
        assert_eq!(r.win_rate, 0.5);
        assert_eq!(r.per_opcode.values().map(Tally::n).sum::<usize>(), 64);
    }

    #[test]
    fn swapping_sides_complements_the_rate() {
        let (g, arch) = setup();
        let a = Policy::init(arch, &mut stream_at(1, "init", 0));
        let b = Policy::init(arch, &mut stream_at(2, "init", 0));
        let qs = g.held_out_set(64, 4).unwrap();
        let s = SamplingConfig {
            temperature: 1.0,
            max_len: 6,
        };
        let ab = evaluate_win_rate(&a, &b, &g, &qs, &s, 4, Exec::default()).unwrap();
        let ba = evaluate_win_rate(&b, &a, &g, &qs, &s, 4, Exec::default()).unwrap();
        assert_eq!(ab.win_rate + ba.win_rate, 1.0);
        assert_eq!(ab.wins, ba.losses);
    }

    #[test]
    fn oracle_beats_random_policy() {
        let (g, arch) = setup();
        let oracle = OracleAnswerer { grammar: g.clone() };
        let random = Policy::init(arch, &mut stream_at(5, "init", 0));
        let qs = g.held_out_set(256, 5).unwrap();
        let r = evaluate_win_rate(&oracle, &random, &g, &qs, &sampling(), 5, Exec::default()).unwrap();
        assert!(r.win_rate >= 0.95, "{}", r.win_rate);
    }

    #[test]
    fn mismatched_architectures_are_refused() {
        let (g, arch) = setup();
        let a = Policy::zeros(arch);
        let b = Policy::zeros(PolicyArchitecture {
            hidden_dim: 9,
            ..arch
        });
        let qs = g.held_out_set(4, 0).unwrap();
        assert!(matches!(
            evaluate_win_rate(&a, &b, &g, &qs, &sampling(), 0, Exec::default()),
            Err(LspError::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn checkpoints_are_not_modified() {
        let (g, arch) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&Policy::init(arch, &mut stream_at(6, "init", 0)), &path).unwrap();
        let before = std::fs::read(&path).unwrap();
        let r = evaluate_checkpoints(&path, &path, &g, 16, 1, 0.01, 24).unwrap();
        assert_eq!(r.win_rate, 0.5);
        assert_eq!(std::fs::read(&path).unwrap(), before);
    }
}
