use rand::Rng;

use crate::env::{self, LengthConvention, StepRecord, Trajectory};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tasks::ProblemInstance;

use crate::autodiff::{Tape, Var};

use super::model::{decode, encode, Encoded};
use super::params::PolicyParams;
use super::Behavior;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Sample,
    Greedy,
}

fn sample(b: &Behavior, rng: &mut Stream) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, (&p, &m)) in b.probs.iter().zip(&b.mask).enumerate() {
        if !m || p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    last.expect("behavior without feasible action")
}

/// Log-probability rows produced by one decoding step.
pub(crate) struct StepRows {
    pub logp: Var,
    pub trajectories: Vec<usize>,
    pub actions: Vec<usize>,
}

/// What a rollout keeps besides the routes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Keep {
    /// Leave every decoding step on the tape for a later backward pass.
    pub graph: bool,
    /// Store per-step states and behaviors in the trajectories.
    pub steps: bool,
}

/// Decodes `starts` trajectories on an already encoded instance.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rollout_on_tape(
    tape: &mut Tape,
    enc: &Encoded,
    params: &PolicyParams,
    inst: &ProblemInstance,
    mode: DecodeMode,
    starts: usize,
    rng: &mut Stream,
    keep: Keep,
) -> Result<(Vec<Trajectory>, Vec<StepRows>)> {
    if starts == 0 || starts > inst.len() {
        return Err(Error::contract(format!(
            "starts must lie in 1..={}, got {starts}",
            inst.len()
        )));
    }
    let c = inst.num_actions();
    let mut states = Vec::with_capacity(starts);
    for s in 0..starts {
        let mut st = env::reset(inst, s)?;
        if let Some(a) = env::forced_first_action(inst, s) {
            env::apply(inst, &mut st, a)?;
        }
        states.push(st);
    }
    let mut steps: Vec<Vec<StepRecord>> = vec![Vec::new(); starts];
    let mut rows = Vec::new();
    loop {
        let active: Vec<usize> = (0..starts).filter(|&i| !env::is_terminal(inst, &states[i])).collect();
        if active.is_empty() {
            break;
        }
        let snaps: Vec<_> = active.iter().map(|&i| states[i].snapshot()).collect();
        let refs: Vec<_> = snaps.iter().collect();
        let mark = tape.len();
        let (logp, mask) = decode(tape, params, enc, inst, &refs);
        let mut actions = Vec::with_capacity(active.len());
        for (r, (&i, snap)) in active.iter().zip(snaps).enumerate() {
            let behavior = {
                let data = tape.data(logp);
                Behavior::from_log_probs(&data[r * c..(r + 1) * c], &mask[r * c..(r + 1) * c])
            };
            let action = match mode {
                DecodeMode::Greedy => behavior.argmax(),
                DecodeMode::Sample => sample(&behavior, rng),
            };
            let log_prob = behavior.probs[action].ln();
            env::apply(inst, &mut states[i], action)?;
            actions.push(action);
            if keep.steps {
                steps[i].push(StepRecord {
                    state: snap,
                    behavior,
                    action,
                    log_prob,
                });
            }
        }
        if keep.graph {
            rows.push(StepRows {
                logp,
                trajectories: active,
                actions,
            });
        } else {
            tape.truncate(mark);
        }
    }
    let trajectories = states
        .into_iter()
        .zip(steps)
        .enumerate()
        .map(|(start, (st, steps))| {
            let total_length = env::tour_length(&st.route, inst, LengthConvention::Euclidean)?;
            Ok(Trajectory {
                steps,
                route: st.route,
                total_length,
                start_node: start,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((trajectories, rows))
}

/// One trajectory per start node `0..starts`, decoded in parallel.
/// `rng` is only consumed in sample mode.
pub fn rollout(
    params: &PolicyParams,
    inst: &ProblemInstance,
    mode: DecodeMode,
    starts: usize,
    rng: &mut Stream,
) -> Result<Vec<Trajectory>> {
    let mut tape = Tape::new(&params.theta);
    let enc = encode(&mut tape, params, inst);
    let keep = Keep { graph: false, steps: true };
    Ok(rollout_on_tape(&mut tape, &enc, params, inst, mode, starts, rng, keep)?.0)
}

/// Greedy multi-start decoding; returns the shortest trajectory.
pub fn best_of_starts(params: &PolicyParams, inst: &ProblemInstance) -> Result<Trajectory> {
    let mut unused = crate::rng::Seeds::new(0).stream("unused");
    let mut tape = Tape::new(&params.theta);
    let enc = encode(&mut tape, params, inst);
    let keep = Keep { graph: false, steps: false };
    let (trajs, _) = rollout_on_tape(&mut tape, &enc, params, inst, DecodeMode::Greedy, inst.len(), &mut unused, keep)?;
    Ok(trajs
        .into_iter()
        .min_by(|a, b| a.total_length.total_cmp(&b.total_length))
        .expect("at least one start"))
}

/// Mean greedy best-of-n length over a test set.
pub fn evaluate_set(params: &PolicyParams, instances: &[ProblemInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::config("empty test set"));
    }
    let mut total = 0.0;
    for inst in instances {
        total += best_of_starts(params, inst)?.total_length;
    }
    Ok(total / instances.len() as f64)
}
