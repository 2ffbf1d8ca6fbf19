//! The lifelong training loop and its baselines.
//!
//! Only the parameters, the replay buffer and (for EWC) the accumulated
//! anchors carry over between tasks; the optimizer is rebuilt per task.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consolidation::{bc_loss, experience_weights, Divergence, ExperienceBatch, ReservoirBuffer};
use crate::drl::rollout_and_backward;
use crate::error::{Error, Result};
use crate::policy::{evaluate_set, Adam, ArchConfig, PolicyParams};
use crate::profile::Profile;
use crate::rng::{names, Seeds, Stream};
use crate::tasks::{generate_instance, ProblemInstance, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Method {
    #[serde(rename = "llr-bc")]
    LlrBc,
    #[serde(rename = "finetune")]
    FineTune,
    #[serde(rename = "restart")]
    Restart,
    #[serde(rename = "ewc")]
    Ewc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::LlrBc, Method::FineTune, Method::Restart, Method::Ewc];

    pub fn name(&self) -> &'static str {
        match self {
            Method::LlrBc => "llr-bc",
            Method::FineTune => "finetune",
            Method::Restart => "restart",
            Method::Ewc => "ewc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "llr-bc" | "llrbc" => Ok(Method::LlrBc),
            "finetune" | "fine-tune" | "ft" => Ok(Method::FineTune),
            "restart" => Ok(Method::Restart),
            "ewc" => Ok(Method::Ewc),
            other => Err(Error::config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub method: Method,
    pub profile: Profile,
    pub epochs_per_task: usize,
    /// Overrides the profile's per-scale instances per epoch.
    pub instances_per_epoch: Option<usize>,
    /// Overrides the profile's per-scale batch size.
    pub batch_size: Option<usize>,
    /// Buffer capacity |B| in experience batches.
    pub buffer_capacity: usize,
    /// Batches |E| sampled from the buffer per update.
    pub sample_count: usize,
    pub alpha: f64,
    pub divergence: Divergence,
    /// Replace confidence-aware weights by uniform ones.
    pub uniform_weights: bool,
    pub learning_rate: f64,
    pub ewc_lambda: f64,
    /// Instances used to estimate the diagonal Fisher after each task.
    pub fisher_instances: usize,
    /// Offer every batch to the buffer instead of final-epoch batches only.
    pub continuous_buffering: bool,
    /// Test instances per task evaluated after every epoch for the learning curves.
    pub curve_instances: usize,
    pub arch: ArchConfig,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn new(profile: Profile, method: Method, seed: u64) -> Self {
        Self {
            method,
            profile,
            epochs_per_task: profile.epochs_per_task(),
            instances_per_epoch: None,
            batch_size: None,
            buffer_capacity: profile.buffer_capacity(),
            sample_count: profile.sample_count(),
            alpha: 100.0,
            divergence: Divergence::Rkld,
            uniform_weights: false,
            learning_rate: 1e-4,
            ewc_lambda: 10.0,
            fisher_instances: 64,
            continuous_buffering: false,
            curve_instances: 50,
            arch: ArchConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a finite value >= 0");
        }
        if !(self.ewc_lambda >= 0.0 && self.ewc_lambda.is_finite()) {
            return bad("ewc_lambda must be a finite value >= 0");
        }
        if self.sample_count == 0 {
            return bad("sample_count must be at least 1");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be at least 1");
        }
        if self.epochs_per_task == 0 {
            return bad("epochs_per_task must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == Some(0) || self.instances_per_epoch == Some(0) {
            return bad("batch_size and instances_per_epoch must be positive");
        }
        if self.fisher_instances == 0 {
            return bad("fisher_instances must be at least 1");
        }
        Ok(())
    }

    pub fn batch_size_for(&self, scale: usize) -> usize {
        self.batch_size.unwrap_or_else(|| self.profile.batch_size(scale))
    }

    /// Updates per epoch: instances per epoch over batch size, at least one.
    pub fn batches_per_epoch(&self, scale: usize) -> usize {
        let inst = self
            .instances_per_epoch
            .unwrap_or_else(|| self.profile.instances_per_epoch(scale));
        (inst / self.batch_size_for(scale)).max(1)
    }
}

/// One EWC anchor: diagonal Fisher, the parameters after the task, and λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcState {
    pub fisher_diag: Vec<f64>,
    pub anchor_params: Vec<f64>,
    pub lambda: f64,
}

/// Σ_states (λ/2) Σ_i F_i (θ_i − θ*_i)².
pub fn ewc_penalty(theta: &[f64], states: &[EwcState]) -> Result<f64> {
    let mut total = 0.0;
    for s in states {
        if s.fisher_diag.len() != theta.len() || s.anchor_params.len() != theta.len() {
            return Err(Error::Shape("EWC state does not match the parameter vector".into()));
        }
        let q: f64 = theta
            .iter()
            .zip(&s.anchor_params)
            .zip(&s.fisher_diag)
            .map(|((t, a), f)| f * (t - a) * (t - a))
            .sum();
        total += 0.5 * s.lambda * q;
    }
    Ok(total)
}

/// Adds Σ_states λ F ⊙ (θ − θ*) into `grad`.
pub fn ewc_penalty_grad(theta: &[f64], states: &[EwcState], grad: &mut [f64]) -> Result<()> {
    for s in states {
        if s.fisher_diag.len() != theta.len() || s.anchor_params.len() != theta.len() || grad.len() != theta.len() {
            return Err(Error::Shape("EWC state does not match the parameter vector".into()));
        }
        for i in 0..theta.len() {
            grad[i] += s.lambda * s.fisher_diag[i] * (theta[i] - s.anchor_params[i]);
        }
    }
    Ok(())
}

/// Mean over instances of the squared per-instance REINFORCE gradient.
pub fn fisher_estimate(params: &PolicyParams, instances: &[ProblemInstance], rng: &mut Stream) -> Result<Vec<f64>> {
    if instances.is_empty() {
        return Err(Error::contract("fisher estimate needs at least one instance"));
    }
    let mut fisher = vec![0.0; params.len()];
    let mut g = vec![0.0; params.len()];
    for inst in instances {
        g.iter_mut().for_each(|v| *v = 0.0);
        rollout_and_backward(params, vec![inst.clone()], rng, 1.0, &mut g)?;
        for (f, v) in fisher.iter_mut().zip(&g) {
            *f += v * v;
        }
    }
    let m = instances.len() as f64;
    fisher.iter_mut().for_each(|f| *f /= m);
    Ok(fisher)
}

/// What persists across tasks.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub params: PolicyParams,
    pub buffer: ReservoirBuffer,
    pub ewc: Vec<EwcState>,
}

impl LearnerState {
    pub fn initial(cfg: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            params: initial_params(cfg)?,
            buffer: ReservoirBuffer::new(cfg.buffer_capacity)?,
            ewc: Vec::new(),
        })
    }
}

/// The run's initial model; identical for every method sharing a seed.
pub fn initial_params(cfg: &TrainingConfig) -> Result<PolicyParams> {
    PolicyParams::init(cfg.arch, &mut Seeds::new(cfg.seed).stream(names::INIT))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub task: usize,
    pub epoch: usize,
    pub batch: usize,
    pub drl_loss: f64,
    pub bc_loss: Option<f64>,
    pub ewc_penalty: Option<f64>,
    pub mean_length: f64,
    pub buffer_len: usize,
    pub buffer_offered: u64,
}

/// Trains on one task. `after_epoch` is called with the epoch index and
/// current parameters after every epoch.
pub fn train_one_task(
    state: &mut LearnerState,
    task: &TaskSpec,
    task_index: usize,
    cfg: &TrainingConfig,
    after_epoch: &mut dyn FnMut(usize, &PolicyParams) -> Result<()>,
) -> Result<Vec<BatchLog>> {
    cfg.validate()?;
    task.validate()?;
    let seeds = Seeds::new(cfg.seed);
    let idx = task_index as u64;
    let mut task_rng = seeds.indexed(names::TASK_GEN, idx);
    let mut rollout_rng = seeds.indexed(names::ROLLOUT, idx);
    let mut buffer_rng = seeds.indexed(names::BUFFER, idx);
    let mut sampling_rng = seeds.indexed(names::SAMPLING, idx);

    if cfg.method == Method::Restart {
        state.params = initial_params(cfg)?;
    }
    let use_bc = cfg.method == Method::LlrBc && cfg.alpha > 0.0;
    let use_ewc = cfg.method == Method::Ewc && cfg.ewc_lambda > 0.0;
    let batch_size = cfg.batch_size_for(task.scale);
    let batches = cfg.batches_per_epoch(task.scale);
    let mut adam = Adam::new(state.params.len(), cfg.learning_rate);
    let mut grad = vec![0.0; state.params.len()];
    let mut logs = Vec::with_capacity(cfg.epochs_per_task * batches);

    for epoch in 0..cfg.epochs_per_task {
        let final_epoch = epoch + 1 == cfg.epochs_per_task;
        for b in 0..batches {
            let instances = (0..batch_size)
                .map(|_| generate_instance(task, &mut task_rng))
                .collect::<Result<Vec<_>>>()?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (rollouts, drl) = rollout_and_backward(&state.params, instances, &mut rollout_rng, 1.0, &mut grad)?;
            let mut total = drl;

            let mut bc = None;
            if use_bc && !state.buffer.is_empty() {
                let sampled = state.buffer.sample(cfg.sample_count, &mut sampling_rng)?;
                let weights = experience_weights(&sampled, cfg.uniform_weights)?;
                let l = bc_loss(&state.params, &sampled, &weights, cfg.divergence, cfg.alpha, Some(&mut grad))?;
                total += cfg.alpha * l;
                bc = Some(l);
            }
            let mut pen = None;
            if use_ewc && !state.ewc.is_empty() {
                let p = ewc_penalty(&state.params.theta, &state.ewc)?;
                ewc_penalty_grad(&state.params.theta, &state.ewc, &mut grad)?;
                total += p;
                pen = Some(p);
            }
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical {
                    tensor: format!(
                        "training loss (task {task_index}, epoch {epoch}, batch {b}: drl {drl}, bc {bc:?}, ewc {pen:?})"
                    ),
                });
            }
            adam.step(&mut state.params.theta, &grad);

            let mean_length = rollouts
                .entries
                .iter()
                .flat_map(|e| &e.trajectories)
                .map(|t| t.total_length)
                .sum::<f64>()
                / rollouts.entries.iter().map(|e| e.trajectories.len()).sum::<usize>() as f64;
            if cfg.method == Method::LlrBc && (final_epoch || cfg.continuous_buffering) {
                state.buffer.update(ExperienceBatch::from_rollouts(&rollouts), &mut buffer_rng);
            }
            logs.push(BatchLog {
                task: task_index,
                epoch,
                batch: b,
                drl_loss: drl,
                bc_loss: bc,
                ewc_penalty: pen,
                mean_length,
                buffer_len: state.buffer.len(),
                buffer_offered: state.buffer.offered(),
            });
        }
        log::debug!(
            "task {task_index} epoch {epoch}: mean length {:.4}",
            logs.last().map_or(f64::NAN, |l| l.mean_length)
        );
        after_epoch(epoch, &state.params)?;
    }

    if cfg.method == Method::Ewc {
        let mut rng = seeds.indexed(names::FISHER, idx);
        let instances = (0..cfg.fisher_instances)
            .map(|_| generate_instance(task, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let fisher_diag = fisher_estimate(&state.params, &instances, &mut rng)?;
        state.ewc.push(EwcState {
            fisher_diag,
            anchor_params: state.params.theta.clone(),
            lambda: cfg.ewc_lambda,
        });
    }
    Ok(logs)
}

/// Mean test length of one task after a given epoch of training task `trained`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub trained: usize,
    pub epoch: usize,
    pub evaluated: usize,
    pub mean_length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaskRecord {
    row: Vec<f64>,
    curves: Vec<CurvePoint>,
    logs: Vec<BatchLog>,
}

#[derive(Debug, Clone)]
pub struct LifelongOutcome {
    /// raw[i][j]: mean greedy best-of-n length on test set j after training task i.
    pub raw: Vec<Vec<f64>>,
    pub curves: Vec<CurvePoint>,
    pub logs: Vec<BatchLog>,
    pub checkpoints: Vec<PolicyParams>,
    pub state: LearnerState,
    /// Tasks restored from the store instead of being trained.
    pub resumed_tasks: usize,
}

fn task_dir(store: &Path, i: usize) -> PathBuf {
    store.join(format!("task_{i}"))
}

fn save_task(store: &Path, i: usize, state: &LearnerState, record: &TaskRecord) -> Result<()> {
    let dir = task_dir(store, i);
    state.params.save(&dir.join("policy.json"))?;
    state.buffer.save(&dir.join("buffer.bin"))?;
    crate::io::write_atomic(&dir.join("ewc.bin"), &bincode::serialize(&state.ewc)?)?;
    let mut log = String::new();
    for l in &record.logs {
        log.push_str(&serde_json::to_string(l)?);
        log.push('\n');
    }
    crate::io::write_atomic(&dir.join("train_log.jsonl"), log.as_bytes())?;
    // Written last: its presence marks the task as complete.
    crate::io::write_atomic(&dir.join("record.json"), serde_json::to_string(record)?.as_bytes())
}

fn load_task(store: &Path, i: usize) -> Result<Option<(LearnerState, TaskRecord)>> {
    let dir = task_dir(store, i);
    let rec_path = dir.join("record.json");
    if !rec_path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&rec_path).map_err(|e| Error::io(&rec_path, e))?;
    let record: TaskRecord = serde_json::from_str(&text)?;
    let ewc_path = dir.join("ewc.bin");
    let ewc_bytes = fs::read(&ewc_path).map_err(|e| Error::io(&ewc_path, e))?;
    let state = LearnerState {
        params: PolicyParams::load(&dir.join("policy.json"))?,
        buffer: ReservoirBuffer::load(&dir.join("buffer.bin"))?,
        ewc: bincode::deserialize(&ewc_bytes)?,
    };
    Ok(Some((state, record)))
}

/// Performance rows of the tasks completed so far in a checkpoint store.
pub fn stored_rows(store: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    loop {
        let path = task_dir(store, rows.len()).join("record.json");
        if !path.exists() {
            return Ok(rows);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let record: TaskRecord = serde_json::from_str(&text)?;
        rows.push(record.row);
    }
}

/// Trains on `order` in sequence, evaluating on every test set after each
/// task. With a `store` directory every finished task is checkpointed and a
/// rerun resumes after the last finished task.
pub fn lifelong_learn(
    order: &[TaskSpec],
    test_sets: &[Vec<ProblemInstance>],
    cfg: &TrainingConfig,
    store: Option<&Path>,
) -> Result<LifelongOutcome> {
    if order.is_empty() {
        return Err(Error::config("task order is empty"));
    }
    if test_sets.len() != order.len() {
        return Err(Error::config("one test set per task is required"));
    }
    cfg.validate()?;
    let mut state = LearnerState::initial(cfg)?;
    let mut raw = Vec::new();
    let mut curves = Vec::new();
    let mut logs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut resumed = 0;

    for (i, task) in order.iter().enumerate() {
        if let Some(store) = store {
            if resumed == i {
                if let Some((st, rec)) = load_task(store, i)? {
                    state = st;
                    raw.push(rec.row);
                    curves.extend(rec.curves);
                    logs.extend(rec.logs);
                    checkpoints.push(state.params.clone());
                    resumed += 1;
                    log::info!("resumed task {i} ({}) from {}", task.label(), store.display());
                    continue;
                }
            }
        }
        log::info!("training task {i} ({}) with {}", task.label(), cfg.method);
        let mut task_curves = Vec::new();
        let task_logs = {
            let mut hook = |epoch: usize, p: &PolicyParams| -> Result<()> {
                if cfg.curve_instances == 0 {
                    return Ok(());
                }
                for (j, set) in test_sets.iter().enumerate().take(i + 1) {
                    let n = cfg.curve_instances.min(set.len());
                    task_curves.push(CurvePoint {
                        trained: i,
                        epoch,
                        evaluated: j,
                        mean_length: evaluate_set(p, &set[..n])?,
                    });
                }
                Ok(())
            };
            train_one_task(&mut state, task, i, cfg, &mut hook)?
        };
        let row = test_sets
            .iter()
            .map(|set| evaluate_set(&state.params, set))
            .collect::<Result<Vec<_>>>()?;
        let record = TaskRecord {
            row,
            curves: task_curves,
            logs: task_logs,
        };
        if let Some(store) = store {
            save_task(store, i, &state, &record)?;
        }
        raw.push(record.row);
        curves.extend(record.curves);
        logs.extend(record.logs);
        checkpoints.push(state.params.clone());
    }
    Ok(LifelongOutcome {
        raw,
        curves,
        logs,
        checkpoints,
        state,
        resumed_tasks: resumed,
    })
}
