//! Playout containers: `N` query groups of `G` answers each.

use std::fmt;

use crate::config::RunConfig;
use crate::sequence::{Role, TokenSequence};

#[derive(Debug, Clone)]
pub struct PlayoutGroup {
    pub query: TokenSequence,
    pub answers: Vec<TokenSequence>,
    /// Task reward `R(q, a)` per answer, in `[0, 1]`.
    pub task_rewards: Vec<f64>,
    /// Scaled quality score `R_Q(q, a)` per answer, in `[0, 1]`.
    pub quality_scores: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct PlayoutBatch {
    pub groups: Vec<PlayoutGroup>,
}

impl PlayoutBatch {
    pub fn group_size(&self) -> usize {
        self.groups.first().map_or(0, |g| g.answers.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    TooFewGroups,
    GroupCount,
    TooFewAnswers,
    AnswerCount,
    RewardCount,
    QualityCount,
    RewardRange,
    QualityRange,
    QueryRole,
    AnswerRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchViolation {
    /// Offending group, when the violation is local to one.
    pub group: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for BatchViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.group {
            Some(g) => write!(f, "group {g}: {:?}", self.kind),
            None => write!(f, "batch: {:?}", self.kind),
        }
    }
}

/// Checks the batch shape against `config` (`N` groups of `G` answers) and
/// the reward ranges. Returns the first violation found.
pub fn validate_batch(batch: &PlayoutBatch, config: &RunConfig) -> Result<(), BatchViolation> {
    validate_shape(batch, config.n_queries, config.group_size)
}

pub fn validate_shape(batch: &PlayoutBatch, n: usize, g: usize) -> Result<(), BatchViolation> {
    let whole = |kind| BatchViolation { group: None, kind };
    if n < 2 {
        return Err(whole(ViolationKind::TooFewGroups));
    }
    if g < 2 {
        return Err(whole(ViolationKind::TooFewAnswers));
    }
    if batch.groups.len() != n {
        return Err(whole(ViolationKind::GroupCount));
    }
    for (i, group) in batch.groups.iter().enumerate() {
        let at = |kind| BatchViolation {
            group: Some(i),
            kind,
        };
        if group.query.role() != Role::Query {
            return Err(at(ViolationKind::QueryRole));
        }
        if group.answers.len() != g {
            return Err(at(ViolationKind::AnswerCount));
        }
        if group.answers.iter().any(|a| a.role() != Role::Answer) {
            return Err(at(ViolationKind::AnswerRole));
        }
        if group.task_rewards.len() != g {
            return Err(at(ViolationKind::RewardCount));
        }
        if group.quality_scores.len() != g {
            return Err(at(ViolationKind::QualityCount));
        }
        if !group.task_rewards.iter().all(|r| (0.0..=1.0).contains(r)) {
            return Err(at(ViolationKind::RewardRange));
        }
        if !group.quality_scores.iter().all(|r| (0.0..=1.0).contains(r)) {
            return Err(at(ViolationKind::QualityRange));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::ReservedTokens;

    fn group(g: usize, reward: f64) -> PlayoutGroup {
        let r = ReservedTokens::for_vocab_size(19);
        PlayoutGroup {
            query: TokenSequence::new(vec![11, 3, 1, 10, r.eos], Role::Query, r, 24).unwrap(),
            answers: (0..g)
                .map(|_| TokenSequence::new(vec![1, r.eos], Role::Answer, r, 24).unwrap())
                .collect(),
            task_rewards: vec![reward; g],
            quality_scores: vec![0.5; g],
        }
    }

    #[test]
    fn well_formed_batch() {
        let batch = PlayoutBatch {
            groups: vec![group(4, 0.5), group(4, 1.0)],
        };
        assert_eq!(validate_shape(&batch, 2, 4), Ok(()));
    }

    #[test]
    fn short_group() {
        let batch = PlayoutBatch {
            groups: vec![group(3, 0.5), group(4, 0.5)],
        };
        assert_eq!(
            validate_shape(&batch, 2, 4),
            Err(BatchViolation {
                group: Some(0),
                kind: ViolationKind::AnswerCount
            })
        );
    }

    #[test]
    fn reward_out_of_range() {
        let batch = PlayoutBatch {
            groups: vec![group(4, 0.5), group(4, 1.3)],
        };
        assert_eq!(
            validate_shape(&batch, 2, 4),
            Err(BatchViolation {
                group: Some(1),
                kind: ViolationKind::RewardRange
            })
        );
    }

    #[test]
    fn degenerate_sizes() {
        let batch = PlayoutBatch {
            groups: vec![group(4, 0.5)],
        };
        assert_eq!(
            validate_shape(&batch, 1, 4).unwrap_err().kind,
            ViolationKind::TooFewGroups
        );
        assert_eq!(
            validate_shape(&batch, 2, 1).unwrap_err().kind,
            ViolationKind::TooFewAnswers
        );
    }
}
