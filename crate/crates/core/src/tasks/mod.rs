//! Task distributions, problem instances and benchmark ingestion.

mod samplers;
mod tsplib;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use samplers::{
    compress_point, explode_point, grid_dimensions, sample_compression, sample_explosion,
    sample_gaussian_mixture, sample_grid, sample_ring, sample_ring_radius, sample_uniform,
    Sampled, EXPLOSION_RADIUS, EXPLOSION_RATE,
};
pub use tsplib::{parse_cvrplib, parse_tour, parse_tsplib, write_cvrplib, write_tsplib};

pub type Point = [f64; 2];

/// Largest demand any generator produces.
pub const MAX_DEMAND: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Distribution {
    U,
    GM,
    E,
    C,
    G,
    R,
}

impl Distribution {
    pub const ALL: [Distribution; 6] = [
        Distribution::U,
        Distribution::GM,
        Distribution::E,
        Distribution::C,
        Distribution::G,
        Distribution::R,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Distribution::U => "U",
            Distribution::GM => "GM",
            Distribution::E => "E",
            Distribution::C => "C",
            Distribution::G => "G",
            Distribution::R => "R",
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "U" => Ok(Distribution::U),
            "GM" => Ok(Distribution::GM),
            "E" => Ok(Distribution::E),
            "C" => Ok(Distribution::C),
            "G" => Ok(Distribution::G),
            "R" => Ok(Distribution::R),
            other => Err(Error::config(format!(
                "unknown distribution id `{other}` (expected one of U, GM, E, C, G, R)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Tsp,
    Cvrp,
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tsp" => Ok(ProblemKind::Tsp),
            "cvrp" => Ok(ProblemKind::Cvrp),
            other => Err(Error::config(format!("unknown problem kind `{other}`"))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Tsp => "tsp",
            ProblemKind::Cvrp => "cvrp",
        })
    }
}

/// A problem-generating process: distribution, problem kind and scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub distribution: Distribution,
    pub kind: ProblemKind,
    pub scale: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u32>,
    pub seed: u64,
}

impl TaskSpec {
    pub fn tsp(distribution: Distribution, scale: usize, seed: u64) -> Self {
        Self {
            distribution,
            kind: ProblemKind::Tsp,
            scale,
            capacity: None,
            seed,
        }
    }

    pub fn cvrp(distribution: Distribution, scale: usize, capacity: u32, seed: u64) -> Self {
        Self {
            distribution,
            kind: ProblemKind::Cvrp,
            scale,
            capacity: Some(capacity),
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(Error::config(format!("scale must be >= 2, got {}", self.scale)));
        }
        match (self.kind, self.capacity) {
            (ProblemKind::Tsp, Some(_)) => Err(Error::config("TSP tasks carry no capacity")),
            (ProblemKind::Cvrp, None) => Err(Error::config("CVRP tasks require a capacity")),
            (ProblemKind::Cvrp, Some(c)) if c < MAX_DEMAND => Err(Error::config(format!(
                "capacity {c} is below the largest possible demand {MAX_DEMAND}"
            ))),
            _ => Ok(()),
        }
    }

    /// Short label such as `U-tsp-10`.
    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.distribution, self.kind, self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Generated(TaskSpec),
    Benchmark(String),
}

/// One routing problem. Coordinates are always in the unit square; benchmark
/// instances additionally keep their original coordinates for lengths in the
/// benchmark's own convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub coords: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depot: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demands: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u32>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_coords: Option<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_depot: Option<Point>,
}

impl ProblemInstance {
    pub fn tsp(coords: Vec<Point>, source: Source) -> Self {
        Self {
            kind: ProblemKind::Tsp,
            coords,
            depot: None,
            demands: None,
            capacity: None,
            source,
            raw_coords: None,
            raw_depot: None,
        }
    }

    pub fn cvrp(
        depot: Point,
        coords: Vec<Point>,
        demands: Vec<u32>,
        capacity: u32,
        source: Source,
    ) -> Self {
        Self {
            kind: ProblemKind::Cvrp,
            coords,
            depot: Some(depot),
            demands: Some(demands),
            capacity: Some(capacity),
            source,
            raw_coords: None,
            raw_depot: None,
        }
    }

    /// Number of cities (TSP) or customers (CVRP).
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Size of the action space: cities for TSP, depot + customers for CVRP.
    pub fn num_actions(&self) -> usize {
        match self.kind {
            ProblemKind::Tsp => self.coords.len(),
            ProblemKind::Cvrp => self.coords.len() + 1,
        }
    }

    pub fn name(&self) -> String {
        match &self.source {
            Source::Generated(spec) => spec.label(),
            Source::Benchmark(name) => name.clone(),
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity.unwrap_or(0)
    }

    pub fn demand(&self, customer: usize) -> u32 {
        self.demands.as_ref().map_or(0, |d| d[customer])
    }

    /// Coordinates of an action index (depot is action 0 for CVRP).
    pub fn action_point(&self, action: usize) -> Point {
        match self.kind {
            ProblemKind::Tsp => self.coords[action],
            ProblemKind::Cvrp if action == 0 => self.depot.expect("CVRP instance without depot"),
            ProblemKind::Cvrp => self.coords[action - 1],
        }
    }

    pub(crate) fn raw_action_point(&self, action: usize) -> Option<Point> {
        let raw = self.raw_coords.as_ref()?;
        Some(match self.kind {
            ProblemKind::Tsp => raw[action],
            ProblemKind::Cvrp if action == 0 => self.raw_depot?,
            ProblemKind::Cvrp => raw[action - 1],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |p: &Point| p.iter().all(|c| (0.0..=1.0).contains(c));
        if self.coords.len() < 2 {
            return Err(Error::config("an instance needs at least two nodes"));
        }
        if !self.coords.iter().all(in_unit) {
            return Err(Error::config("coordinates must lie in the unit square"));
        }
        match self.kind {
            ProblemKind::Tsp => {
                if self.depot.is_some() || self.demands.is_some() || self.capacity.is_some() {
                    return Err(Error::config("TSP instances carry no depot, demands or capacity"));
                }
            }
            ProblemKind::Cvrp => {
                let depot = self.depot.ok_or_else(|| Error::config("CVRP instance without depot"))?;
                if !in_unit(&depot) {
                    return Err(Error::config("depot must lie in the unit square"));
                }
                let demands = self
                    .demands
                    .as_ref()
                    .ok_or_else(|| Error::config("CVRP instance without demands"))?;
                let capacity = self
                    .capacity
                    .ok_or_else(|| Error::config("CVRP instance without capacity"))?;
                if demands.len() != self.coords.len() {
                    return Err(Error::config("one demand per customer required"));
                }
                if !demands.iter().any(|&d| d > 0) {
                    return Err(Error::config("at least one customer needs positive demand"));
                }
                if let Some(&d) = demands.iter().find(|&&d| d > capacity) {
                    return Err(Error::config(format!("demand {d} exceeds capacity {capacity}")));
                }
            }
        }
        Ok(())
    }
}

/// Draws one instance of `spec` from `rng`.
pub fn generate_instance(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<ProblemInstance> {
    spec.validate()?;
    let n = spec.scale;
    let depot = match spec.kind {
        ProblemKind::Cvrp => Some(samplers::uniform_point(rng)),
        ProblemKind::Tsp => None,
    };
    let sampled = match spec.distribution {
        Distribution::U => sample_uniform(n, depot, rng),
        Distribution::GM => sample_gaussian_mixture(n, depot, rng),
        Distribution::E => sample_explosion(n, depot, rng),
        Distribution::C => sample_compression(n, depot, rng),
        Distribution::G => sample_grid(n, depot, rng),
        Distribution::R => sample_ring(n, depot, rng),
    };
    let source = Source::Generated(*spec);
    Ok(match (spec.kind, depot) {
        (ProblemKind::Cvrp, Some(depot)) => ProblemInstance::cvrp(
            depot,
            sampled.coords,
            sampled.demands,
            spec.capacity.expect("validated"),
            source,
        ),
        _ => ProblemInstance::tsp(sampled.coords, source),
    })
}

/// A fixed set of `count` instances drawn from a stream seeded by `spec.seed`.
pub fn generate_set(spec: &TaskSpec, count: usize) -> Result<Vec<ProblemInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..count).map(|_| generate_instance(spec, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_tsp_has_requested_size() {
        let spec = TaskSpec::tsp(Distribution::U, 20, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let inst = generate_instance(&spec, &mut rng).unwrap();
        assert_eq!(inst.len(), 20);
        assert!(inst.demands.is_none() && inst.depot.is_none());
        inst.validate().unwrap();
    }

    #[test]
    fn uniform_cvrp_demands_in_one_to_ten() {
        let spec = TaskSpec::cvrp(Distribution::U, 20, 30, 7);
        let set = generate_set(&spec, 50).unwrap();
        for inst in &set {
            assert_eq!(inst.len(), 20);
            assert_eq!(inst.capacity, Some(30));
            assert!(inst.demands.as_ref().unwrap().iter().all(|&d| (1..=10).contains(&d)));
        }
    }

    #[test]
    fn same_spec_and_seed_gives_identical_bytes() {
        for d in Distribution::ALL {
            let spec = TaskSpec::cvrp(d, 20, 40, 11);
            let a = serde_json::to_string(&generate_set(&spec, 3).unwrap()).unwrap();
            let b = serde_json::to_string(&generate_set(&spec, 3).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(TaskSpec::tsp(Distribution::U, 1, 0).validate().is_err());
        assert!(TaskSpec::cvrp(Distribution::U, 10, 5, 0).validate().is_err());
        let mut s = TaskSpec::tsp(Distribution::U, 10, 0);
        s.capacity = Some(30);
        assert!(s.validate().is_err());
        assert!(matches!("X".parse::<Distribution>(), Err(Error::Config(_))));
        assert_eq!("gm".parse::<Distribution>().unwrap(), Distribution::GM);
    }

    #[test]
    fn json_record_omits_absent_fields() {
        let spec = TaskSpec::tsp(Distribution::U, 3, 1);
        let inst = generate_set(&spec, 1).unwrap().remove(0);
        let v: serde_json::Value = serde_json::to_value(&inst).unwrap();
        assert_eq!(v["kind"], "tsp");
        assert!(v.get("depot").is_none());
        assert!(v["source"]["generated"].is_object());
        let back: ProblemInstance = serde_json::from_value(v).unwrap();
        assert_eq!(back, inst);
    }
}
