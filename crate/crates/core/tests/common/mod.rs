#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use llrbc::env::{self, ConstructionState};
use llrbc::policy::{ArchConfig, PolicyParams};
use llrbc::profile::Profile;
use llrbc::rng::Seeds;
use llrbc::tasks::{generate_instance, Distribution, ProblemInstance, ProblemKind, TaskSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn policy(seed: u64) -> PolicyParams {
    PolicyParams::init(ArchConfig::default(), &mut Seeds::new(seed).stream("init")).unwrap()
}

pub fn spec(d: Distribution, kind: ProblemKind, scale: usize, seed: u64) -> TaskSpec {
    match kind {
        ProblemKind::Tsp => TaskSpec::tsp(d, scale, seed),
        ProblemKind::Cvrp => TaskSpec::cvrp(d, scale, Profile::Desk.capacity_for(scale), seed),
    }
}

pub fn instance(d: Distribution, kind: ProblemKind, scale: usize, seed: u64) -> ProblemInstance {
    let s = spec(d, kind, scale, seed);
    generate_instance(&s, &mut rng(seed)).unwrap()
}

/// Initial state for `start`, with the forced first move applied.
pub fn start_state(inst: &ProblemInstance, start: usize) -> ConstructionState {
    let mut st = env::reset(inst, start).unwrap();
    if let Some(a) = env::forced_first_action(inst, start) {
        env::apply(inst, &mut st, a).unwrap();
    }
    st
}

/// Walks uniformly random feasible actions to the end, returning every
/// visited non-terminal state and the final one.
pub fn random_walk(inst: &ProblemInstance, start: usize, rng: &mut impl Rng) -> (Vec<ConstructionState>, ConstructionState) {
    let mut st = start_state(inst, start);
    let mut seen = Vec::new();
    while !env::is_terminal(inst, &st) {
        let mask = env::feasible_actions(inst, &st).unwrap();
        let options: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
        assert!(!options.is_empty(), "no feasible action on a non-terminal state");
        seen.push(st.clone());
        let a = options[rng.gen_range(0..options.len())];
        env::apply(inst, &mut st, a).unwrap();
    }
    (seen, st)
}

pub fn random_distribution(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3) + 1e-6).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Direct transcription of the lifelong metric definitions, 1-based.
pub struct OracleMetrics {
    pub ap: f64,
    pub af: f64,
    pub amf: f64,
    pub apl: f64,
    pub ag: f64,
}

pub fn oracle_metrics(d: &[Vec<f64>], k: usize) -> OracleMetrics {
    let at = |i: usize, j: usize| d[i - 1][j - 1];
    let mut ap = 0.0;
    let mut apl = 0.0;
    for i in 1..=k {
        ap += at(k, i);
        apl += at(i, i);
    }
    let mut af = 0.0;
    let mut amf = 0.0;
    let mut ag = 0.0;
    for i in 1..k {
        af += f64::max(0.0, at(k, i) - at(i, i));
        let mut worst = 0.0;
        for j in (i + 1)..=k {
            let f = f64::max(0.0, at(j, i) - at(i, i));
            if f > worst {
                worst = f;
            }
        }
        amf += worst;
        ag += at(i, i + 1);
    }
    let m = (k as f64 - 1.0).max(1.0);
    OracleMetrics {
        ap: ap / k as f64,
        af: af / m,
        amf: amf / m,
        apl: apl / k as f64,
        ag: ag / m,
    }
}

/// Σ w·D(q‖p) (reverse) or Σ w·D(p‖q) (forward) by plain summation over
/// unmasked entries.
pub fn oracle_divergence(q: &[f64], p: &[f64], mask: &[bool], reverse: bool) -> f64 {
    let mut d = 0.0;
    for i in 0..q.len() {
        if !mask[i] {
            continue;
        }
        let pi = p[i].max(1e-12);
        d += if reverse { q[i] * (q[i] / pi).ln() } else { pi * (pi / q[i]).ln() };
    }
    d
}
