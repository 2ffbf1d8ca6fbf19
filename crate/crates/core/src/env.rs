//! The constructive routing MDP.
//!
//! Actions index nodes. For TSP action `i` is city `i`; for CVRP action 0 is
//! the depot and action `i + 1` is customer `i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Behavior;
use crate::tasks::{ProblemInstance, ProblemKind};

/// How edge lengths are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthConvention {
    /// Exact Euclidean distance between normalized coordinates.
    Euclidean,
    /// TSPLIB EUC_2D: nearest integer of the Euclidean distance between raw coordinates.
    TsplibNint,
}

/// What a stored experience needs to re-evaluate the policy at a state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub visited: Vec<bool>,
    pub current: usize,
    pub remaining: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstructionState {
    pub route: Vec<usize>,
    pub visited: Vec<bool>,
    pub current: usize,
    pub remaining: u32,
    pub step: usize,
    visited_count: usize,
}

impl ConstructionState {
    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            visited: self.visited.clone(),
            current: self.current,
            remaining: self.remaining,
        }
    }

    pub fn all_visited(&self) -> bool {
        self.visited_count == self.visited.len()
    }
}

/// Per-step record of a constructed solution.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub state: StateSnapshot,
    pub behavior: Behavior,
    pub action: usize,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub route: Vec<usize>,
    pub total_length: f64,
    pub start_node: usize,
}

impl Trajectory {
    pub fn reward(&self) -> f64 {
        -self.total_length
    }

    pub fn log_prob_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.log_prob).sum()
    }
}

/// Initial state. For TSP the tour starts at `start_node`; for CVRP the
/// vehicle sits at the depot and `start_node` names the customer the first
/// move is forced to (see [`forced_first_action`]).
pub fn reset(inst: &ProblemInstance, start_node: usize) -> Result<ConstructionState> {
    let n = inst.len();
    if start_node >= n {
        return Err(Error::contract(format!("start node {start_node} out of range for {n} nodes")));
    }
    let mut visited = vec![false; n];
    Ok(match inst.kind {
        ProblemKind::Tsp => {
            visited[start_node] = true;
            ConstructionState {
                route: vec![start_node],
                visited,
                current: start_node,
                remaining: 0,
                step: 1,
                visited_count: 1,
            }
        }
        ProblemKind::Cvrp => ConstructionState {
            route: vec![0],
            visited,
            current: 0,
            remaining: inst.capacity(),
            step: 0,
            visited_count: 0,
        },
    })
}

/// The action taken before any policy decision for a given start node, if any.
pub fn forced_first_action(inst: &ProblemInstance, start_node: usize) -> Option<usize> {
    match inst.kind {
        ProblemKind::Tsp => None,
        ProblemKind::Cvrp => Some(start_node + 1),
    }
}

pub fn is_terminal(inst: &ProblemInstance, state: &ConstructionState) -> bool {
    match inst.kind {
        ProblemKind::Tsp => state.all_visited(),
        ProblemKind::Cvrp => state.all_visited() && state.current == 0 && state.step > 0,
    }
}

/// Feasibility mask over actions for a snapshot.
pub fn snapshot_mask(inst: &ProblemInstance, s: &StateSnapshot) -> Vec<bool> {
    match inst.kind {
        ProblemKind::Tsp => s.visited.iter().map(|v| !v).collect(),
        ProblemKind::Cvrp => {
            let mut mask = Vec::with_capacity(inst.len() + 1);
            mask.push(s.current != 0);
            for (i, &v) in s.visited.iter().enumerate() {
                mask.push(!v && inst.demand(i) <= s.remaining);
            }
            mask
        }
    }
}

pub fn feasible_actions(inst: &ProblemInstance, state: &ConstructionState) -> Result<Vec<bool>> {
    if is_terminal(inst, state) {
        return Err(Error::contract("feasible_actions called on a terminal state"));
    }
    let mask = snapshot_mask(
        inst,
        &StateSnapshot {
            visited: state.visited.clone(),
            current: state.current,
            remaining: state.remaining,
        },
    );
    debug_assert!(mask.iter().any(|&m| m));
    Ok(mask)
}

/// Applies `action` in place.
pub fn apply(inst: &ProblemInstance, state: &mut ConstructionState, action: usize) -> Result<()> {
    let mask = feasible_actions(inst, state)?;
    if action >= mask.len() || !mask[action] {
        return Err(Error::contract(format!("action {action} is not feasible")));
    }
    match inst.kind {
        ProblemKind::Tsp => {
            state.visited[action] = true;
            state.visited_count += 1;
        }
        ProblemKind::Cvrp => {
            if action == 0 {
                state.remaining = inst.capacity();
            } else {
                state.visited[action - 1] = true;
                state.visited_count += 1;
                state.remaining -= inst.demand(action - 1);
            }
        }
    }
    state.route.push(action);
    state.current = action;
    state.step += 1;
    Ok(())
}

/// Pure transition: returns the successor state.
pub fn step(inst: &ProblemInstance, state: &ConstructionState, action: usize) -> Result<ConstructionState> {
    let mut next = state.clone();
    apply(inst, &mut next, action)?;
    Ok(next)
}

fn edge(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Checks that `route` is a complete feasible solution of `inst`.
pub fn validate_route(inst: &ProblemInstance, route: &[usize]) -> Result<()> {
    let n = inst.len();
    let mut seen = vec![false; n];
    match inst.kind {
        ProblemKind::Tsp => {
            if route.len() != n {
                return Err(Error::contract(format!("route visits {} of {n} cities", route.len())));
            }
            for &c in route {
                if c >= n || std::mem::replace(&mut seen[c], true) {
                    return Err(Error::contract(format!("city {c} invalid or repeated")));
                }
            }
        }
        ProblemKind::Cvrp => {
            if route.first() != Some(&0) || route.last() != Some(&0) {
                return Err(Error::contract("CVRP route must start and end at the depot"));
            }
            let mut load = 0u32;
            let mut prev = 0usize;
            for &a in &route[1..] {
                if a == 0 {
                    if prev == 0 {
                        return Err(Error::contract("depot-to-depot move"));
                    }
                    load = 0;
                } else {
                    let c = a - 1;
                    if c >= n || std::mem::replace(&mut seen[c], true) {
                        return Err(Error::contract(format!("customer {c} invalid or repeated")));
                    }
                    load += inst.demand(c);
                    if load > inst.capacity() {
                        return Err(Error::contract("vehicle capacity exceeded"));
                    }
                }
                prev = a;
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::contract("not every customer is visited"));
            }
        }
    }
    Ok(())
}

/// Length of a complete route. TSP tours close the cycle; CVRP routes list
/// every depot visit explicitly.
pub fn tour_length(route: &[usize], inst: &ProblemInstance, convention: LengthConvention) -> Result<f64> {
    let n = inst.len();
    let complete = match inst.kind {
        ProblemKind::Tsp => route.len() == n,
        ProblemKind::Cvrp => {
            route.len() >= 2
                && route[0] == 0
                && route[route.len() - 1] == 0
                && route.iter().filter(|&&a| a != 0).count() == n
        }
    };
    if !complete {
        return Err(Error::contract("tour_length needs a complete route"));
    }
    let point = |a: usize| -> Result<[f64; 2]> {
        match convention {
            LengthConvention::Euclidean => Ok(inst.action_point(a)),
            LengthConvention::TsplibNint => inst
                .raw_action_point(a)
                .ok_or_else(|| Error::contract("instance has no raw coordinates")),
        }
    };
    let dist = |a: usize, b: usize| -> Result<f64> {
        let d = edge(point(a)?, point(b)?);
        Ok(match convention {
            LengthConvention::Euclidean => d,
            LengthConvention::TsplibNint => (d + 0.5).floor(),
        })
    };
    let mut total = 0.0;
    for w in route.windows(2) {
        total += dist(w[0], w[1])?;
    }
    if inst.kind == ProblemKind::Tsp {
        total += dist(route[n - 1], route[0])?;
    }
    Ok(total)
}
