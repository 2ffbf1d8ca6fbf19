//! Multi-start REINFORCE with a shared per-instance mean baseline.

use crate::autodiff::{Tape, Var};
use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::policy::{decode, encode, rollout_on_tape, DecodeMode, Keep, PolicyParams};
use crate::rng::Stream;
use crate::tasks::ProblemInstance;

const KEEP_ALL: Keep = Keep { graph: true, steps: true };

/// The N trajectories rolled out on one instance.
#[derive(Debug, Clone)]
pub struct InstanceRollouts {
    pub instance: ProblemInstance,
    pub trajectories: Vec<Trajectory>,
}

/// Rollouts of one training step.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub entries: Vec<InstanceRollouts>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Advantages R_i − mean_j R_j of one instance's trajectories.
pub fn advantages(trajectories: &[Trajectory]) -> Vec<f64> {
    let n = trajectories.len() as f64;
    let baseline = trajectories.iter().map(Trajectory::reward).sum::<f64>() / n;
    trajectories.iter().map(|t| t.reward() - baseline).collect()
}

/// −(1/(B·N)) Σ_instances Σ_i (R_i − b) Σ_t log P_θ(a_t | s_t), with the
/// log-probabilities recomputed under `params`.
///
/// When `grad` is given, `scale` times the loss gradient is added into it.
pub fn drl_loss(params: &PolicyParams, batch: &RolloutBatch, scale: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    drl_loss_with_advantages(params, batch, None, scale, grad)
}

/// As [`drl_loss`], optionally with caller-supplied advantages per instance.
pub fn drl_loss_with_advantages(
    params: &PolicyParams,
    batch: &RolloutBatch,
    advantages_override: Option<&[Vec<f64>]>,
    scale: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if batch.is_empty() || batch.entries.iter().any(|e| e.trajectories.is_empty()) {
        return Err(Error::contract("drl_loss needs a non-empty batch"));
    }
    let b = batch.len() as f64;
    let mut total = 0.0;
    for (k, entry) in batch.entries.iter().enumerate() {
        let adv = match advantages_override {
            Some(a) => a[k].clone(),
            None => advantages(&entry.trajectories),
        };
        let n = entry.trajectories.len() as f64;
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut weights = Vec::new();
        for (t, a) in entry.trajectories.iter().zip(&adv) {
            for s in &t.steps {
                states.push(&s.state);
                actions.push(s.action);
                weights.push(-a / (b * n));
            }
        }
        if states.is_empty() {
            continue;
        }
        let mut tape = Tape::new(&params.theta);
        let enc = encode(&mut tape, params, &entry.instance);
        let (logp, _) = decode(&mut tape, params, &enc, &entry.instance, &states);
        let pick = tape.pick_weighted(logp, actions, weights);
        total += tape.scalar(pick);
        if let Some(g) = grad.as_deref_mut() {
            let loss = tape.sum_scalars(vec![(pick, scale)]);
            tape.backward(loss, g)?;
        }
    }
    Ok(total)
}

/// Samples N = n trajectories on every instance and adds `scale` times the
/// gradient of the loss into `grad`, reusing the rollout's forward pass.
/// Returns the rollouts and the loss value.
pub fn rollout_and_backward(
    params: &PolicyParams,
    instances: Vec<ProblemInstance>,
    rng: &mut Stream,
    scale: f64,
    grad: &mut [f64],
) -> Result<(RolloutBatch, f64)> {
    if instances.is_empty() {
        return Err(Error::contract("drl_loss needs a non-empty batch"));
    }
    let b = instances.len() as f64;
    let mut batch = RolloutBatch::default();
    let mut total = 0.0;
    for instance in instances {
        let mut tape = Tape::new(&params.theta);
        let enc = encode(&mut tape, params, &instance);
        let (trajectories, rows) =
            rollout_on_tape(&mut tape, &enc, params, &instance, DecodeMode::Sample, instance.len(), rng, KEEP_ALL)?;
        let adv = advantages(&trajectories);
        let n = trajectories.len() as f64;
        let terms: Vec<(Var, f64)> = rows
            .into_iter()
            .map(|r| {
                let w = r.trajectories.iter().map(|&i| -adv[i] / (b * n)).collect();
                (tape.pick_weighted(r.logp, r.actions, w), 1.0)
            })
            .collect();
        if !terms.is_empty() {
            let loss = tape.sum_scalars(terms);
            total += tape.scalar(loss);
            let scaled = tape.sum_scalars(vec![(loss, scale)]);
            tape.backward(scaled, grad)?;
        }
        batch.entries.push(InstanceRollouts { instance, trajectories });
    }
    Ok((batch, total))
}
