use crate::autodiff::finite_diff_check;
use crate::batch::{PlayoutBatch, PlayoutGroup};
use crate::config::Mode;
use crate::exec::Exec;
use crate::objective::{advantage_set, PolicyLoss};
use crate::policy::{
    answer_prefix, challenger_prefix, snapshot_reference, Policy, PolicyArchitecture, SamplingConfig,
};
use crate::rng::stream_at;
use crate::sequence::Role;
use crate::task::{Opcode, TaskGrammar};
use crate::vocab::build_vocabulary;
use crate::Result;

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const STEP: f64 = 1e-5;
/// Coordinates whose analytic gradient is below this are not sampled: their
/// central differences are dominated by rounding rather than the gradient.
const MIN_GRADIENT: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckCase {
    pub loss: &'static str,
    pub beta: f64,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub params: usize,
    pub cases: Vec<GradcheckCase>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < GRADCHECK_TOLERANCE
    }
}

fn seeded_policy(arch: PolicyArchitecture, seed: u64, label: &str) -> Policy {
    let mut p = Policy::zeros(arch);
    let mut rng = stream_at(seed, label, 0);
    for v in p.params_mut().values_mut() {
        *v = rng.uniform_in(-0.5, 0.5);
    }
    p
}

/// Checks the solver and challenger loss gradients (with and without the KL
/// term) of a seeded 1187-parameter policy against central differences.
pub fn gradcheck(seed: u64) -> Result<GradcheckReport> {
    let vocab = build_vocabulary(16)?;
    let grammar = TaskGrammar::new(&vocab, &Opcode::ALL, 2, 6)?;
    let arch = PolicyArchitecture {
        vocab_size: vocab.size(),
        embed_dim: 8,
        context_window: 8,
        hidden_dim: 12,
    };
    let policy = seeded_policy(arch, seed, "gradcheck-policy");
    let reference = snapshot_reference(&seeded_policy(arch, seed, "gradcheck-reference"));
    let sampling = SamplingConfig {
        temperature: 1.0,
        max_len: 8,
    };
    let reserved = policy.reserved();
    let mut rng = stream_at(seed, "gradcheck-batch", 0);
    let mut groups = Vec::new();
    for _ in 0..3 {
        let query = policy
            .sample_sequence(&challenger_prefix(reserved), Role::Query, &sampling, &mut rng)?
            .sequence;
        let prefix = answer_prefix(&query, reserved);
        let mut answers = Vec::new();
        for _ in 0..4 {
            answers.push(policy.sample_sequence(&prefix, Role::Answer, &sampling, &mut rng)?.sequence);
        }
        groups.push(PlayoutGroup {
            task_rewards: answers.iter().map(|a| grammar.task_reward(&query, a)).collect(),
            quality_scores: answers
                .iter()
                .map(|a| grammar.quality_score(&query, a).scaled())
                .collect(),
            query,
            answers,
        });
    }
    let batch = PlayoutBatch { groups };
    let adv = advantage_set(&batch, Mode::Lsp)?;

    let mut cases = Vec::new();
    for beta in [0.0, 0.05] {
        for (name, loss) in [
            ("solver", PolicyLoss::solver(&batch, &adv, &reference, beta)?),
            ("challenger", PolicyLoss::challenger(&batch, &adv, &reference, beta)?),
        ] {
            let eval = loss.evaluate(&policy, Exec::Sequential)?;
            let sample: Vec<usize> = (0..eval.gradient.len())
                .filter(|&k| eval.gradient.values()[k].abs() > MIN_GRADIENT)
                .collect();
            let mut frozen = loss.frozen(&policy)?;
            let err = if sample.is_empty() {
                0.0
            } else {
                finite_diff_check(
                    |p| frozen.value_at(p),
                    &eval.gradient,
                    policy.params(),
                    STEP,
                    &sample,
                )?
            };
            cases.push(GradcheckCase {
                loss: name,
                beta,
                coordinates: sample.len(),
                max_rel_error: err,
            });
        }
    }
    Ok(GradcheckReport {
        seed,
        params: policy.params().len(),
        cases,
    })
}
