//! Shared fixtures for unit tests.

use crate::batch::{PlayoutBatch, PlayoutGroup};
use crate::policy::{answer_prefix, challenger_prefix, Policy, PolicyArchitecture, SamplingConfig};
use crate::rng::{seeded_stream, stream_at};
use crate::sequence::Role;

pub fn tiny_arch() -> PolicyArchitecture {
    PolicyArchitecture {
        vocab_size: 19,
        embed_dim: 4,
        context_window: 8,
        hidden_dim: 8,
    }
}

pub fn random_policy(arch: PolicyArchitecture, seed: u64, scale: f64) -> Policy {
    let mut p = Policy::zeros(arch);
    let mut rng = seeded_stream(seed, "fixture-policy");
    for v in p.params_mut().values_mut() {
        *v = rng.uniform_in(-scale, scale);
    }
    p
}

/// Samples `n` queries and `g` answers each from `policy`, with random task
/// rewards and quality scores attached.
pub fn sample_batch(policy: &Policy, n: usize, g: usize, seed: u64, max_len: usize) -> PlayoutBatch {
    let sampling = SamplingConfig {
        temperature: 1.0,
        max_len,
    };
    let reserved = policy.reserved();
    let mut rng = stream_at(seed, "fixture-batch", 0);
    let groups = (0..n)
        .map(|_| {
            let query = policy
                .sample_sequence(&challenger_prefix(reserved), Role::Query, &sampling, &mut rng)
                .unwrap()
                .sequence;
            let prefix = answer_prefix(&query, reserved);
            let answers: Vec<_> = (0..g)
                .map(|_| {
                    policy
                        .sample_sequence(&prefix, Role::Answer, &sampling, &mut rng)
                        .unwrap()
                        .sequence
                })
                .collect();
            PlayoutGroup {
                query,
                task_rewards: (0..g).map(|_| rng.uniform()).collect(),
                quality_scores: (0..g).map(|_| rng.below(8) as f64 / 7.0).collect(),
                answers,
            }
        })
        .collect();
    PlayoutBatch { groups }
}
