//! The training loop: self-play epochs (LSP and LSP-Zero), data-driven
//! solver-only epochs (GRPO), held-out evaluation and run orchestration.
//!
//! Random streams, all keyed by the run seed:
//!
//! | label        | index                  | draws                         |
//! |--------------|------------------------|-------------------------------|
//! | `init`       | 0                      | initial parameters            |
//! | `challenger` | `epoch * N + i`        | query `i` of an epoch         |
//! | `solver`     | `(epoch * N + i) * G + j` | answer `j` to query `i`    |
//! | `dataset`    | `epoch`                | dataset rows of a GRPO epoch  |
//! | `heldout`    | query index            | held-out answers (eval seed)  |
//!
//! Every stream is a pure function of the run seed and the epoch counter, so
//! evaluation never advances training randomness and resumed runs replay
//! exactly.

mod metrics;
mod state;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

pub use metrics::{
    read_jsonl, EvalRecord, FailureRecord, JsonlSink, MetricsRecord, METRIC_COLUMNS,
};
pub use state::{decode_state, encode_state, load_state, save_state, ResumeState};

use crate::autodiff::{apply_update, Gradient, OptimizerState};
use crate::batch::{validate_shape, PlayoutBatch, PlayoutGroup};
use crate::config::{Mode, RunConfig};
use crate::exec::Exec;
use crate::objective::{advantage_set, AdvantageSet, LossBreakdown, LossEval, PolicyLoss};
use crate::policy::{
    answer_prefix, challenger_prefix, load_checkpoint, save_checkpoint, snapshot_reference, Policy,
    ReferenceSnapshot, SamplingConfig,
};
use crate::rng::stream_at;
use crate::sequence::{Role, TokenSequence};
use crate::task::{read_dataset, World};
use crate::{LspError, Result};

/// Summary of one completed epoch.
#[derive(Debug, Clone)]
pub struct EpochReport {
    /// Epochs completed, this one included.
    pub epoch: u64,
    pub mode: Mode,
    /// Mean raw task reward over the `N * G` answers.
    pub mean_solver_reward: f64,
    /// Mean scaled quality score over the `N * G` answers.
    pub mean_quality: f64,
    /// Mean challenger score over the `N` groups; 0 in GRPO mode.
    pub mean_challenger_score: f64,
    pub loss: LossBreakdown,
    pub kl_solver: f64,
    pub kl_challenger: f64,
    /// Mean per-sequence KL estimate over every scored sequence.
    pub kl_mean: f64,
    pub wellformed_rate: f64,
    pub wall_ms: u64,
    /// Fingerprint of the reference parameters during this epoch.
    pub reference_fingerprint: u64,
    pub batch: PlayoutBatch,
    pub advantages: AdvantageSet,
    /// The gradient the update step used.
    pub gradient: Gradient,
}

impl EpochReport {
    pub fn metrics(&self) -> MetricsRecord {
        MetricsRecord {
            epoch: self.epoch,
            mode: self.mode.as_str().to_string(),
            mean_solver_reward: self.mean_solver_reward,
            mean_quality: self.mean_quality,
            mean_challenger_score: self.mean_challenger_score,
            loss_total: self.loss.total,
            loss_solver_pg: self.loss.solver_pg,
            loss_solver_kl: self.loss.solver_kl,
            loss_challenger_pg: self.loss.challenger_pg,
            loss_challenger_kl: self.loss.challenger_kl,
            kl_mean: self.kl_mean,
            wellformed_rate: self.wellformed_rate,
            wall_ms: self.wall_ms,
        }
    }
}

/// Live state of one training run.
pub struct Trainer {
    config: RunConfig,
    world: Arc<dyn World>,
    policy: Policy,
    reference: ReferenceSnapshot,
    optimizer: OptimizerState,
    epoch: u64,
    dataset: Vec<TokenSequence>,
    exec: Exec,
}

impl Trainer {
    /// Starts a run at epoch 0 from `initial` (or a fresh seeded
    /// initialization). The reference is a snapshot of the starting
    /// parameters unless `config.reference_checkpoint` names another one.
    pub fn new(config: RunConfig, initial: Option<Policy>) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture();
        let policy = match initial {
            Some(p) => {
                check_architecture(&p, &config)?;
                p
            }
            None => Policy::init(arch, &mut stream_at(config.seed, "init", 0)),
        };
        let reference = match &config.reference_checkpoint {
            Some(path) => {
                let r = load_checkpoint(path)?;
                check_architecture(&r, &config)?;
                ReferenceSnapshot::from_policy(r)
            }
            None => snapshot_reference(&policy),
        };
        let optimizer = OptimizerState::new(config.optimizer, policy.params().len());
        let dataset = match (&config.dataset, config.mode) {
            (Some(path), Mode::Grpo) => read_dataset(path, &config.vocabulary()?)?,
            _ => Vec::new(),
        };
        let grammar = config.grammar()?;
        Ok(Trainer {
            config,
            world: Arc::new(grammar),
            policy,
            reference,
            optimizer,
            epoch: 0,
            dataset,
            exec: Exec::default(),
        })
    }

    /// Continues a run from a resume file.
    pub fn resume(config: RunConfig, state: ResumeState) -> Result<Self> {
        let mut t = Trainer::new(config, Some(state.policy))?;
        check_architecture(state.reference.policy(), &t.config)?;
        if let (OptimizerState::Adam(a), OptimizerState::Adam(_)) = (&state.optimizer, &t.optimizer) {
            if a.m.len() != t.policy.params().len() {
                return Err(LspError::ArchitectureMismatch(
                    "optimizer state does not match the policy".into(),
                ));
            }
        } else if std::mem::discriminant(&state.optimizer) != std::mem::discriminant(&t.optimizer) {
            return Err(LspError::Config("resume file was written by another optimizer".into()));
        }
        t.reference = state.reference;
        t.optimizer = state.optimizer;
        t.epoch = state.epoch;
        Ok(t)
    }

    /// Replaces the task world (rewards, quality, well-formedness).
    pub fn with_world(mut self, world: Arc<dyn World>) -> Self {
        self.world = world;
        self
    }

    /// Replaces the query dataset used in GRPO mode.
    pub fn with_dataset(mut self, dataset: Vec<TokenSequence>) -> Self {
        self.dataset = dataset;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn reference(&self) -> &ReferenceSnapshot {
        &self.reference
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn resume_state(&self) -> ResumeState {
        ResumeState {
            epoch: self.epoch,
            policy: self.policy.clone(),
            reference: self.reference.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// One epoch of the configured mode.
    pub fn step(&mut self) -> Result<EpochReport> {
        match self.config.mode {
            Mode::Grpo => self.train_grpo_epoch(),
            Mode::Lsp | Mode::LspZero => self.train_epoch(),
        }
    }

    /// Advances the epoch counter without touching parameters, moving past
    /// a batch whose update failed.
    pub fn skip_epoch(&mut self) {
        self.epoch += 1;
    }

    /// One self-play epoch: `N` challenger queries, `G` solver answers each,
    /// rewards, advantages, both losses and a single optimizer step.
    pub fn train_epoch(&mut self) -> Result<EpochReport> {
        if self.config.mode == Mode::Grpo {
            return Err(LspError::Usage("train_epoch needs LSP or LSP-Zero mode".into()));
        }
        let started = Instant::now();
        let queries = self.challenger_queries()?;
        let batch = self.playouts(queries)?;
        self.finish_epoch(batch, true, started)
    }

    /// One GRPO epoch: `N` dataset queries, solver loss only.
    pub fn train_grpo_epoch(&mut self) -> Result<EpochReport> {
        if self.config.mode != Mode::Grpo {
            return Err(LspError::Usage("train_grpo_epoch needs GRPO mode".into()));
        }
        if self.dataset.is_empty() {
            return Err(LspError::Usage("GRPO needs a nonempty dataset".into()));
        }
        let started = Instant::now();
        let mut rng = stream_at(self.config.seed, "dataset", self.epoch);
        let queries = (0..self.config.n_queries)
            .map(|_| self.dataset[rng.below(self.dataset.len())].clone())
            .collect();
        let batch = self.playouts(queries)?;
        self.finish_epoch(batch, false, started)
    }

    fn challenger_queries(&self) -> Result<Vec<TokenSequence>> {
        let n = self.config.n_queries as u64;
        let prefix = challenger_prefix(self.policy.reserved());
        let sampling = self.config.sampling();
        let base = self.epoch * n;
        self.exec.try_map(self.config.n_queries, |i| {
            let mut rng = stream_at(self.config.seed, "challenger", base + i as u64);
            Ok(self
                .policy
                .sample_sequence(&prefix, Role::Query, &sampling, &mut rng)?
                .sequence)
        })
    }

    /// Samples `G` answers per query and scores them.
    pub fn playouts(&self, queries: Vec<TokenSequence>) -> Result<PlayoutBatch> {
        let g = self.config.group_size as u64;
        let n = self.config.n_queries as u64;
        let reserved = self.policy.reserved();
        let sampling = self.config.sampling();
        let world = &*self.world;
        let groups = self.exec.try_map(queries.len(), |i| -> Result<PlayoutGroup> {
            let query = &queries[i];
            let prefix = answer_prefix(query, reserved);
            let mut answers = Vec::with_capacity(g as usize);
            for j in 0..g {
                let index = (self.epoch * n + i as u64) * g + j;
                let mut rng = stream_at(self.config.seed, "solver", index);
                answers.push(
                    self.policy
                        .sample_sequence(&prefix, Role::Answer, &sampling, &mut rng)?
                        .sequence,
                );
            }
            let task_rewards = answers.iter().map(|a| world.task_reward(query, a)).collect();
            let quality_scores = answers
                .iter()
                .map(|a| world.quality(query, a).scaled())
                .collect();
            Ok(PlayoutGroup {
                query: query.clone(),
                answers,
                task_rewards,
                quality_scores,
            })
        })?;
        Ok(PlayoutBatch { groups })
    }

    fn finish_epoch(
        &mut self,
        batch: PlayoutBatch,
        self_play: bool,
        started: Instant,
    ) -> Result<EpochReport> {
        let epoch = self.epoch + 1;
        let fail = |detail: String| LspError::EpochFailed { epoch, detail };
        validate_shape(&batch, self.config.n_queries, self.config.group_size)
            .map_err(|v| fail(format!("invalid playout batch: {v}")))?;
        let cfg = &self.config;
        let adv = advantage_set(&batch, cfg.mode).map_err(|e| fail(e.to_string()))?;

        let solver = if cfg.train_solver {
            let loss = PolicyLoss::solver(&batch, &adv, &self.reference, cfg.beta)?;
            Some(loss.evaluate(&self.policy, self.exec).map_err(|e| fail(e.to_string()))?)
        } else {
            None
        };
        let challenger = if self_play {
            let loss = PolicyLoss::challenger(&batch, &adv, &self.reference, cfg.beta)?;
            Some(loss.evaluate(&self.policy, self.exec).map_err(|e| fail(e.to_string()))?)
        } else {
            None
        };
        let parts = |e: &Option<LossEval>| e.as_ref().map_or((0.0, 0.0), |e| (e.pg, e.kl));
        let (spg, skl) = parts(&solver);
        let (cpg, ckl) = parts(&challenger);
        let alpha = if self_play { cfg.alpha_ch } else { 0.0 };
        let loss = LossBreakdown::combine(spg, skl, cpg, ckl, alpha)?;

        let mut gradient = Gradient::zeros(self.policy.params().layout().clone());
        if let Some(s) = &solver {
            gradient.add_scaled(&s.gradient, 1.0)?;
        }
        if let Some(c) = &challenger {
            if alpha != 0.0 {
                gradient.add_scaled(&c.gradient, alpha)?;
            }
        }
        if !loss.total.is_finite() || !gradient.all_finite() {
            return Err(fail("non-finite loss or gradient".into()));
        }

        let saved_params = self.policy.params().clone();
        let saved_optimizer = self.optimizer.clone();
        apply_update(self.policy.params_mut(), &gradient, &mut self.optimizer, cfg.eta)?;
        if !self.policy.params().all_finite() {
            *self.policy.params_mut() = saved_params;
            self.optimizer = saved_optimizer;
            return Err(fail("update produced non-finite parameters".into()));
        }
        self.epoch = epoch;

        let mean_k3 = |e: &Option<LossEval>| {
            e.as_ref()
                .map_or(0.0, |e| e.k3.iter().sum::<f64>() / e.k3.len() as f64)
        };
        let all_k3: Vec<f64> = [&solver, &challenger]
            .into_iter()
            .flatten()
            .flat_map(|e| e.k3.iter().copied())
            .collect();
        let kl_mean = if all_k3.is_empty() {
            0.0
        } else {
            all_k3.iter().sum::<f64>() / all_k3.len() as f64
        };
        let n = batch.groups.len() as f64;
        let mean_solver_reward = adv.group_values.iter().sum::<f64>() / n;
        let mean_quality = adv.quality_means.iter().sum::<f64>() / n;
        let mean_challenger_score = if self_play {
            adv.challenger_scores.iter().sum::<f64>() / n
        } else {
            0.0
        };
        let wellformed = batch
            .groups
            .iter()
            .filter(|g| self.world.well_formed(&g.query))
            .count();
        let wall_ms = if cfg.log_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        Ok(EpochReport {
            epoch,
            mode: cfg.mode,
            mean_solver_reward,
            mean_quality,
            mean_challenger_score,
            loss,
            kl_solver: mean_k3(&solver),
            kl_challenger: mean_k3(&challenger),
            kl_mean,
            wellformed_rate: wellformed as f64 / n,
            wall_ms,
            reference_fingerprint: self.reference.fingerprint(),
            batch,
            advantages: adv,
            gradient,
        })
    }

    /// Mean task reward of the current policy on `queries`, answering at the
    /// evaluation temperature. Does not touch training state.
    pub fn held_out_reward(&self, queries: &[TokenSequence]) -> Result<f64> {
        held_out_reward(
            &self.policy,
            &*self.world,
            queries,
            &self.config.eval_sampling(),
            self.config.eval_seed(),
            self.exec,
        )
    }
}

/// Mean task reward of `policy` on `queries`. Query `i` is answered with
/// stream `("heldout", i)` under `seed`.
pub fn held_out_reward(
    policy: &Policy,
    world: &dyn World,
    queries: &[TokenSequence],
    sampling: &SamplingConfig,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(LspError::Usage("held-out set is empty".into()));
    }
    let reserved = policy.reserved();
    let rewards = exec.try_map(queries.len(), |i| -> Result<f64> {
        let q = &queries[i];
        let mut rng = stream_at(seed, "heldout", i as u64);
        let a = policy.sample_sequence(&answer_prefix(q, reserved), Role::Answer, sampling, &mut rng)?;
        Ok(world.task_reward(q, &a.sequence))
    })?;
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

fn check_architecture(policy: &Policy, config: &RunConfig) -> Result<()> {
    let want = config.architecture();
    if *policy.architecture() != want {
        return Err(LspError::ArchitectureMismatch(format!(
            "checkpoint has {:?}, config expects {:?}",
            policy.architecture(),
            want
        )));
    }
    Ok(())
}

/// How a run obtains its starting state.
#[derive(Debug, Clone)]
pub enum RunStart {
    /// Seeded initialization.
    Fresh,
    /// Parameters from a checkpoint; reference snapshotted from them.
    Checkpoint(PathBuf),
    /// Full state from a resume file; logs are appended to.
    Resume(PathBuf),
}

/// What a finished run left behind.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub epochs: u64,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub eval_path: PathBuf,
    /// `(epoch, reward)` for every held-out evaluation of this invocation.
    pub heldout: Vec<(u64, f64)>,
    /// Epochs whose update was rolled back.
    pub failures: Vec<u64>,
    pub reference_fingerprint: u64,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CONFIG_FILE: &str = "config.cfg";

pub fn checkpoint_name(epoch: u64) -> String {
    format!("ckpt-{epoch}.ckpt")
}

pub fn state_name(epoch: u64) -> String {
    format!("state-{epoch}.bin")
}

/// Runs `config.epochs` epochs in total (counting epochs already done in a
/// resumed run), writing metrics, held-out evaluations, periodic checkpoints
/// with resume files, and `final.ckpt` into `config.output_dir`.
pub fn run(config: &RunConfig, start: RunStart) -> Result<RunSummary> {
    let trainer = match &start {
        RunStart::Fresh => Trainer::new(config.clone(), None)?,
        RunStart::Checkpoint(path) => Trainer::new(config.clone(), Some(load_checkpoint(path)?))?,
        RunStart::Resume(path) => Trainer::resume(config.clone(), load_state(path)?)?,
    };
    run_trainer(trainer, matches!(start, RunStart::Resume(_)), |_| Ok(()))
}

/// Drives `trainer` to `config.epochs`, calling `observe` after every
/// successful epoch.
pub fn run_trainer(
    mut trainer: Trainer,
    append: bool,
    mut observe: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<RunSummary> {
    let config = trainer.config.clone();
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| LspError::io(&dir, e))?;
    config.save(&dir.join(CONFIG_FILE))?;
    let metrics_path = dir.join(METRICS_FILE);
    let eval_path = dir.join(EVAL_FILE);
    let mut metrics = JsonlSink::create(&metrics_path, append)?;
    let mut evals = JsonlSink::create(&eval_path, append)?;
    let mut failures_sink: Option<JsonlSink> = None;

    let held_out = if config.eval_every > 0 {
        config.grammar()?.held_out_set(config.eval_size, config.eval_seed())?
    } else {
        Vec::new()
    };
    let mut summary = RunSummary {
        epochs: trainer.epoch,
        final_checkpoint: dir.join(FINAL_CHECKPOINT),
        metrics_path,
        eval_path,
        heldout: Vec::new(),
        failures: Vec::new(),
        reference_fingerprint: trainer.reference.fingerprint(),
    };
    let evaluate = |trainer: &Trainer, evals: &mut JsonlSink, summary: &mut RunSummary| -> Result<()> {
        let reward = trainer.held_out_reward(&held_out)?;
        evals.write(&EvalRecord {
            epoch: trainer.epoch,
            heldout_reward: reward,
        })?;
        summary.heldout.push((trainer.epoch, reward));
        Ok(())
    };
    if config.eval_every > 0 && !append {
        evaluate(&trainer, &mut evals, &mut summary)?;
    }
    while trainer.epoch < config.epochs {
        match trainer.step() {
            Ok(report) => {
                metrics.write(&report.metrics())?;
                observe(&report)?;
            }
            Err(LspError::EpochFailed { epoch, detail }) => {
                let sink = match &mut failures_sink {
                    Some(s) => s,
                    None => failures_sink.insert(JsonlSink::create(&dir.join(FAILURES_FILE), append)?),
                };
                sink.write(&FailureRecord {
                    epoch,
                    error: detail,
                })?;
                summary.failures.push(epoch);
                trainer.skip_epoch();
            }
            Err(e) => return Err(e),
        }
        let e = trainer.epoch;
        if config.eval_every > 0 && e.is_multiple_of(config.eval_every) {
            evaluate(&trainer, &mut evals, &mut summary)?;
        }
        if config.checkpoint_every > 0 && e.is_multiple_of(config.checkpoint_every) {
            save_checkpoint(&trainer.policy, &dir.join(checkpoint_name(e)))?;
            save_state(&trainer.resume_state(), &dir.join(state_name(e)))?;
            metrics.flush()?;
            evals.flush()?;
        }
    }
    metrics.flush()?;
    evals.flush()?;
    if let Some(s) = &mut failures_sink {
        s.flush()?;
    }
    save_checkpoint(&trainer.policy, &summary.final_checkpoint)?;
    summary.epochs = trainer.epoch;
    if trainer.reference.fingerprint() != summary.reference_fingerprint {
        return Err(LspError::Usage("reference changed during the run".into()));
    }
    Ok(summary)
}
