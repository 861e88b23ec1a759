use std::sync::Arc;

use lsp_core::config::{Mode, OptimizerKind, RunConfig};
use lsp_core::policy::answer_prefix;
use lsp_core::rng::stream_at;
use lsp_core::sequence::{Role, TokenSequence};
use lsp_core::task::{write_dataset, Opcode, QualityScore, World};
use lsp_core::trainer::Trainer;

fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

fn small_config(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        embed_dim: 16,
        hidden_dim: 64,
        context_window: 16,
        max_len: 24,
        eval_every: 0,
        checkpoint_every: 0,
        log_wall_time: false,
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

fn with_dataset_file(mut cfg: RunConfig, queries: &[TokenSequence]) -> RunConfig {
    let path = cfg.output_dir.join("dataset.txt");
    let grammar = cfg.grammar().unwrap();
    write_dataset(&path, queries, &cfg.vocabulary().unwrap(), &grammar, cfg.seed).unwrap();
    cfg.dataset = Some(path);
    cfg
}

/// Rewards every answer with the share of odd token ids in the query body.
struct OddShareWorld;

impl World for OddShareWorld {
    fn task_reward(&self, query: &TokenSequence, _: &TokenSequence) -> f64 {
        let body = query.content();
        if body.is_empty() {
            return 0.0;
        }
        body.iter().filter(|&&t| t % 2 == 1).count() as f64 / body.len() as f64
    }
    fn quality(&self, _: &TokenSequence, _: &TokenSequence) -> QualityScore {
        QualityScore { criteria: [false; 7] }
    }
    fn well_formed(&self, _: &TokenSequence) -> bool {
        true
    }
}

#[test]
fn frozen_solver_challenger_drives_group_value_down() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        mode: Mode::LspZero,
        train_solver: false,
        beta: 0.0,
        alpha_ch: 1.0,
        seed: 3,
        ..small_config(dir.path())
    };
    let mut t = Trainer::new(cfg, None).unwrap().with_world(Arc::new(OddShareWorld));
    let values: Vec<f64> = (0..60)
        .map(|_| t.step().unwrap().mean_solver_reward)
        .collect();
    let avg = moving_average(&values, 10);
    let floor = avg.iter().position(|&v| v < 0.01).expect("value never reached the floor");
    for pair in avg[..=floor].windows(2) {
        assert!(pair[1] < pair[0], "moving average did not fall: {avg:?}");
    }
}

#[test]
fn single_query_reward_never_falls_under_plain_descent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        mode: Mode::Grpo,
        opcodes: vec![Opcode::Rev],
        n_queries: 4,
        group_size: 8,
        beta: 0.0,
        eta: 0.05,
        optimizer: OptimizerKind::Sgd,
        ..small_config(dir.path())
    };
    let grammar = cfg.grammar().unwrap();
    let query = grammar.make_query(Opcode::Rev, &[2, 7, 4]);
    let cfg = with_dataset_file(cfg, std::slice::from_ref(&query));
    let mut t = Trainer::new(cfg, None).unwrap();
    let held = [query];
    let mut rewards = vec![t.held_out_reward(&held).unwrap()];
    for _ in 0..100 {
        t.step().unwrap();
        rewards.push(t.held_out_reward(&held).unwrap());
    }
    let avg = moving_average(&rewards, 10);
    for pair in avg.windows(2) {
        assert!(pair[1] >= pair[0], "moving average fell: {avg:?}");
    }
    assert!(avg.last() > avg.first(), "no progress: {rewards:?}");
}

#[test]
fn trained_policy_is_nearly_deterministic_at_low_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        mode: Mode::Grpo,
        opcodes: vec![Opcode::Sort, Opcode::Rev],
        beta: 0.0,
        eta: 0.01,
        ..small_config(dir.path())
    };
    let grammar = cfg.grammar().unwrap();
    let data = grammar.generate_dataset(2000, 0).unwrap();
    let cfg = with_dataset_file(cfg, &data);
    let mut t = Trainer::new(cfg.clone(), None).unwrap();
    for _ in 0..1000 {
        t.step().unwrap();
    }
    let policy = t.policy();
    let sampling = cfg.eval_sampling();
    let mut prefixes = grammar.held_out_set(400, 11).unwrap();
    let mut seen = std::collections::HashSet::new();
    prefixes.retain(|q| seen.insert(q.tokens().to_vec()));
    prefixes.truncate(100);
    assert_eq!(prefixes.len(), 100);
    let stable = prefixes
        .iter()
        .enumerate()
        .filter(|(i, q)| {
            let prefix = answer_prefix(q, policy.reserved());
            let draws: Vec<TokenSequence> = (0..100)
                .map(|k| {
                    let mut rng = stream_at(5, "redraw", (*i as u64) * 100 + k);
                    policy
                        .sample_sequence(&prefix, Role::Answer, &sampling, &mut rng)
                        .unwrap()
                        .sequence
                })
                .collect();
            draws.iter().all(|d| d == &draws[0])
        })
        .count();
    assert!(stable >= 99, "only {stable} of 100 prefixes were stable");
}
