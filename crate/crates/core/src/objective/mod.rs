//! Group values, advantages, the KL estimator and the two policy losses.
//!
//! Each sequence contributes `-w * A * exp(logpi - stop(logpi)) + beta * w * k3`
//! where `w` is `1/(N*G)` for answers and `1/N` for queries. The ratio has
//! value 1 and gradient `grad logpi`, so the loss value is
//! `-sum(w * A) + beta * sum(w * k3)` while the gradient is the
//! score-function estimator plus the KL gradient.

use crate::autodiff::{Gradient, ParameterVector, Tape};
use crate::batch::PlayoutBatch;
use crate::config::Mode;
use crate::exec::Exec;
use crate::policy::{answer_prefix, challenger_prefix, Policy, ReferenceSnapshot};
use crate::vocab::TokenId;
use crate::{LspError, Result};

/// Sequences per tape-evaluation chunk. Chunks are summed in index order, so
/// the gradient does not depend on how chunks are scheduled.
const CHUNK: usize = 8;

/// `V(q) = mean_j R(q, a_j)`.
pub fn group_value(rewards: &[f64]) -> Result<f64> {
    if rewards.len() < 2 {
        return Err(LspError::Config(format!(
            "group value needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    Ok(mean(rewards))
}

/// Mean computed as an offset from the first element, so a constant list
/// returns that constant exactly and its advantages are exactly zero.
fn mean(xs: &[f64]) -> f64 {
    let first = xs[0];
    first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64
}

/// `A_Sol(q, a_j) = R(q, a_j) - V(q)`.
pub fn solver_advantages(rewards: &[f64], value: f64) -> Vec<f64> {
    rewards.iter().map(|r| r - value).collect()
}

/// `A_Ch(q_i) = V - V(q_i)` with `V` the batch mean of the group values.
pub fn challenger_advantages(group_values: &[f64]) -> Result<Vec<f64>> {
    if group_values.len() < 2 {
        return Err(LspError::Config(format!(
            "challenger advantages need at least 2 groups, got {}",
            group_values.len()
        )));
    }
    let baseline = mean(group_values);
    Ok(group_values.iter().map(|v| baseline - v).collect())
}

/// The rewards each player actually optimizes.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRewards {
    /// Per answer: `R + R_Q` under LSP, `R` otherwise.
    pub solver_rewards: Vec<Vec<f64>>,
    /// Per group: `-V(q) + V_Q(q)` under LSP, `-V(q)` otherwise.
    pub challenger_scores: Vec<f64>,
    /// `V(q)` on raw task reward.
    pub group_values: Vec<f64>,
    /// `V_Q(q)`, the group mean of the scaled quality scores.
    pub quality_means: Vec<f64>,
}

/// Adds the quality self-reward to both players under LSP. Other modes get
/// the quality means for logging but unchanged rewards.
pub fn apply_quality(batch: &PlayoutBatch, mode: Mode) -> Result<AugmentedRewards> {
    let n = batch.groups.len();
    let mut out = AugmentedRewards {
        solver_rewards: Vec::with_capacity(n),
        challenger_scores: Vec::with_capacity(n),
        group_values: Vec::with_capacity(n),
        quality_means: Vec::with_capacity(n),
    };
    for g in &batch.groups {
        let v = group_value(&g.task_rewards)?;
        let vq = group_value(&g.quality_scores)?;
        if mode == Mode::Lsp {
            out.solver_rewards.push(
                g.task_rewards
                    .iter()
                    .zip(&g.quality_scores)
                    .map(|(r, q)| r + q)
                    .collect(),
            );
            out.challenger_scores.push(-v + vq);
        } else {
            out.solver_rewards.push(g.task_rewards.clone());
            out.challenger_scores.push(-v);
        }
        out.group_values.push(v);
        out.quality_means.push(vq);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    /// `V(q_i)` on raw task reward.
    pub group_values: Vec<f64>,
    /// Mean of `group_values`.
    pub baseline: f64,
    pub quality_means: Vec<f64>,
    /// Rewards that entered the solver advantages.
    pub solver_rewards: Vec<Vec<f64>>,
    pub challenger_scores: Vec<f64>,
    /// `N x G` matrix, each row zero-sum.
    pub solver_adv: Vec<Vec<f64>>,
    /// Zero-sum over the batch.
    pub challenger_adv: Vec<f64>,
}

pub fn advantage_set(batch: &PlayoutBatch, mode: Mode) -> Result<AdvantageSet> {
    let aug = apply_quality(batch, mode)?;
    let solver_adv = aug
        .solver_rewards
        .iter()
        .map(|r| Ok(solver_advantages(r, group_value(r)?)))
        .collect::<Result<Vec<_>>>()?;
    // Challenger score s_i enters as the negated "value" -s_i, which gives
    // A_Ch = s_i - mean(s) and reduces to V - V(q_i) when s_i = -V(q_i).
    let negated: Vec<f64> = aug.challenger_scores.iter().map(|s| -s).collect();
    let challenger_adv = challenger_advantages(&negated)?;
    let baseline = aug.group_values.iter().sum::<f64>() / aug.group_values.len() as f64;
    Ok(AdvantageSet {
        group_values: aug.group_values,
        baseline,
        quality_means: aug.quality_means,
        solver_rewards: aug.solver_rewards,
        challenger_scores: aug.challenger_scores,
        solver_adv,
        challenger_adv,
    })
}

/// `k3 = r - log r - 1` for `log r = log pi_ref - log pi`.
pub fn k3(log_ratio: f64) -> f64 {
    log_ratio.exp_m1() - log_ratio
}

/// Per-sequence KL estimate of `pi || pi_ref` on `tokens` after `prefix`.
pub fn kl_estimate(
    policy: &Policy,
    reference: &ReferenceSnapshot,
    prefix: &[TokenId],
    tokens: &[TokenId],
) -> Result<f64> {
    let lp = policy.sequence_logprob(prefix, tokens)?;
    let lr = reference.sequence_logprob(prefix, tokens)?;
    Ok(k3(lr - lp))
}

/// One scored sequence of a policy loss.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub prefix: Vec<TokenId>,
    pub tokens: Vec<TokenId>,
    pub advantage: f64,
    /// Averaging weight: `1/(N*G)` for answers, `1/N` for queries.
    pub weight: f64,
    pub ref_logprob: f64,
}

/// A solver or challenger loss over one batch, ready to differentiate.
#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub terms: Vec<LossTerm>,
    pub beta: f64,
}

/// Value and gradient of a [`PolicyLoss`].
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// `-sum(w * A * ratio)`.
    pub pg: f64,
    /// `beta * sum(w * k3)`.
    pub kl: f64,
    /// Unweighted `k3` per term, in term order.
    pub k3: Vec<f64>,
    /// Ratio node values, in term order.
    pub ratios: Vec<f64>,
    pub gradient: Gradient,
}

struct Recorded {
    tape: Tape,
    pg: crate::autodiff::Var,
    kl: crate::autodiff::Var,
    k3: crate::autodiff::Var,
    ratio: crate::autodiff::Var,
}

impl PolicyLoss {
    /// `L_Sol` terms: every answer, conditioned on its query and SEP.
    pub fn solver(
        batch: &PlayoutBatch,
        adv: &AdvantageSet,
        reference: &ReferenceSnapshot,
        beta: f64,
    ) -> Result<Self> {
        let reserved = reference.policy().reserved();
        let total: usize = batch.groups.iter().map(|g| g.answers.len()).sum();
        let weight = 1.0 / total as f64;
        let mut terms = Vec::with_capacity(total);
        for (i, g) in batch.groups.iter().enumerate() {
            let prefix = answer_prefix(&g.query, reserved);
            for (j, a) in g.answers.iter().enumerate() {
                terms.push(LossTerm {
                    ref_logprob: reference.sequence_logprob(&prefix, a.tokens())?,
                    prefix: prefix.clone(),
                    tokens: a.tokens().to_vec(),
                    advantage: adv.solver_adv[i][j],
                    weight,
                });
            }
        }
        Self::checked(terms, beta)
    }

    /// `L_Ch` terms: every query, conditioned on the challenger token.
    pub fn challenger(
        batch: &PlayoutBatch,
        adv: &AdvantageSet,
        reference: &ReferenceSnapshot,
        beta: f64,
    ) -> Result<Self> {
        let prefix = challenger_prefix(reference.policy().reserved());
        let weight = 1.0 / batch.groups.len() as f64;
        let terms = batch
            .groups
            .iter()
            .zip(&adv.challenger_adv)
            .map(|(g, &a)| {
                Ok(LossTerm {
                    ref_logprob: reference.sequence_logprob(&prefix, g.query.tokens())?,
                    prefix: prefix.clone(),
                    tokens: g.query.tokens().to_vec(),
                    advantage: a,
                    weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::checked(terms, beta)
    }

    fn checked(terms: Vec<LossTerm>, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(LspError::Config(format!("beta {beta} must be nonnegative")));
        }
        if terms.is_empty() {
            return Err(LspError::Usage("a policy loss needs at least one sequence".into()));
        }
        Ok(PolicyLoss { terms, beta })
    }

    fn record(&self, policy: &Policy, term: &LossTerm) -> Result<Recorded> {
        let mut tape = Tape::new(policy.params().layout().clone());
        let logp = policy.record_logprob(&mut tape, &term.prefix, &term.tokens)?;
        let stopped = tape.detach(logp);
        let diff = tape.sub(logp, stopped);
        let ratio = tape.exp(diff);
        let pg = tape.scale(ratio, -term.weight * term.advantage);
        let neg = tape.scale(logp, -1.0);
        let log_r = tape.add_const(neg, term.ref_logprob);
        let r = tape.exp(log_r);
        let r_minus = tape.sub(r, log_r);
        let k3 = tape.add_const(r_minus, -1.0);
        let kl = tape.scale(k3, self.beta * term.weight);
        tape.sum(&[pg, kl]);
        Ok(Recorded {
            tape,
            pg,
            kl,
            k3,
            ratio,
        })
    }

    /// Loss value and exact gradient at the policy's parameters.
    pub fn evaluate(&self, policy: &Policy, exec: Exec) -> Result<LossEval> {
        struct Part {
            value: f64,
            pg: f64,
            kl: f64,
            k3: Vec<f64>,
            ratios: Vec<f64>,
            gradient: Gradient,
        }
        let layout = policy.params().layout().clone();
        let chunks = self.terms.len().div_ceil(CHUNK);
        let parts = exec.try_map(chunks, |c| -> Result<Part> {
            let terms = &self.terms[c * CHUNK..((c + 1) * CHUNK).min(self.terms.len())];
            let mut part = Part {
                value: 0.0,
                pg: 0.0,
                kl: 0.0,
                k3: Vec::with_capacity(terms.len()),
                ratios: Vec::with_capacity(terms.len()),
                gradient: Gradient::zeros(layout.clone()),
            };
            for term in terms {
                let mut rec = self.record(policy, term)?;
                part.value += rec.tape.forward(policy.params())?;
                part.pg += rec.tape.scalar_value(rec.pg)?;
                part.kl += rec.tape.scalar_value(rec.kl)?;
                part.k3.push(rec.tape.scalar_value(rec.k3)?);
                part.ratios.push(rec.tape.scalar_value(rec.ratio)?);
                rec.tape.backward_into(&mut part.gradient)?;
            }
            Ok(part)
        })?;
        let mut out = LossEval {
            value: 0.0,
            pg: 0.0,
            kl: 0.0,
            k3: Vec::with_capacity(self.terms.len()),
            ratios: Vec::with_capacity(self.terms.len()),
            gradient: Gradient::zeros(layout),
        };
        for part in parts {
            out.value += part.value;
            out.pg += part.pg;
            out.kl += part.kl;
            out.k3.extend(part.k3);
            out.ratios.extend(part.ratios);
            out.gradient.add_scaled(&part.gradient, 1.0)?;
        }
        Ok(out)
    }

    /// The loss as an ordinary function of the parameters, with every
    /// stop-gradient pinned at the policy's current values. Its gradient at
    /// the current parameters equals [`PolicyLoss::evaluate`]'s, which makes
    /// it the function to hand to a finite-difference check.
    pub fn frozen(&self, policy: &Policy) -> Result<FrozenLoss> {
        let tapes = self
            .terms
            .iter()
            .map(|term| {
                let mut rec = self.record(policy, term)?;
                rec.tape.forward(policy.params())?;
                rec.tape.freeze_detached()?;
                Ok(rec.tape)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrozenLoss { tapes })
    }
}

pub struct FrozenLoss {
    tapes: Vec<Tape>,
}

impl FrozenLoss {
    pub fn value_at(&mut self, params: &ParameterVector) -> Result<f64> {
        let mut total = 0.0;
        for tape in &mut self.tapes {
            total += tape.forward(params)?;
        }
        Ok(total)
    }
}

/// The four loss components and `L = L_Sol + alpha_Ch * L_Ch`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub solver_pg: f64,
    pub solver_kl: f64,
    pub challenger_pg: f64,
    pub challenger_kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(
        solver_pg: f64,
        solver_kl: f64,
        challenger_pg: f64,
        challenger_kl: f64,
        alpha_ch: f64,
    ) -> Result<Self> {
        if !(alpha_ch >= 0.0) {
            return Err(LspError::Config(format!("alpha_ch {alpha_ch} must be nonnegative")));
        }
        Ok(LossBreakdown {
            solver_pg,
            solver_kl,
            challenger_pg,
            challenger_kl,
            total: (solver_pg + solver_kl) + alpha_ch * (challenger_pg + challenger_kl),
        })
    }
}

/// Combines evaluated solver and challenger losses.
pub fn total_loss(solver: &LossEval, challenger: &LossEval, alpha_ch: f64) -> Result<LossBreakdown> {
    LossBreakdown::combine(solver.pg, solver.kl, challenger.pg, challenger.kl, alpha_ch)
}
