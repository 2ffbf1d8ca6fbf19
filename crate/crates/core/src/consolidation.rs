//! Experience replay with reservoir sampling, confidence-aware experience
//! weighting and divergence-based behavior consolidation.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DivergenceKind, Tape};
use crate::drl::RolloutBatch;
use crate::env::StateSnapshot;
use crate::error::{Error, Result};
use crate::policy::{decode, encode, Behavior, PolicyParams, PROB_FLOOR};
use crate::rng::Stream;
use crate::tasks::{Point, ProblemInstance, ProblemKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    /// Σ P_θ log(P_θ / P): mode seeking.
    #[default]
    Rkld,
    /// Σ P log(P / P_θ).
    Kld,
}

impl std::str::FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rkld" => Ok(Divergence::Rkld),
            "kld" => Ok(Divergence::Kld),
            other => Err(Error::config(format!("unknown divergence `{other}`"))),
        }
    }
}

/// A stored state together with the behavior the solver showed there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: StateSnapshot,
    pub behavior: Behavior,
}

/// Experiences sharing one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceGroup {
    pub instance: ProblemInstance,
    pub experiences: Vec<Experience>,
}

/// All experiences produced by one training step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperienceBatch {
    pub groups: Vec<ExperienceGroup>,
}

impl ExperienceBatch {
    pub fn from_rollouts(batch: &RolloutBatch) -> Self {
        let groups = batch
            .entries
            .iter()
            .map(|e| ExperienceGroup {
                instance: e.instance.clone(),
                experiences: e
                    .trajectories
                    .iter()
                    .flat_map(|t| &t.steps)
                    .map(|s| Experience {
                        state: s.state.clone(),
                        behavior: s.behavior.clone(),
                    })
                    .collect(),
            })
            .collect();
        Self { groups }
    }

    /// Number of experiences.
    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.experiences.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn experiences(&self) -> impl Iterator<Item = &Experience> {
        self.groups.iter().flat_map(|g| &g.experiences)
    }
}

/// Population variance of a probability vector over `n` actions is at most
/// (n − 1)/n², attained by a one-hot vector.
pub fn max_variance(n: usize) -> f64 {
    (n as f64 - 1.0) / (n as f64 * n as f64)
}

/// w = 1 − var(P)/var_max(|P|), over the full action vector.
pub fn confidence_weight(behavior: &Behavior) -> Result<f64> {
    let n = behavior.probs.len();
    if n < 2 {
        return Err(Error::contract("confidence weight needs at least two actions"));
    }
    let mean = 1.0 / n as f64;
    let var = behavior.probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n as f64;
    Ok((1.0 - var / max_variance(n)).clamp(0.0, 1.0))
}

/// Rescales raw weights to sum to one; all-zero weights become uniform.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::contract("cannot normalize an empty weight list"));
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Ok(vec![1.0 / raw.len() as f64; raw.len()]);
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// Normalized weights for every experience of `batches`, in iteration order.
/// With `uniform` each experience gets the same weight.
pub fn experience_weights(batches: &[&ExperienceBatch], uniform: bool) -> Result<Vec<f64>> {
    let raw: Vec<f64> = batches
        .iter()
        .flat_map(|b| b.experiences())
        .map(|e| if uniform { Ok(1.0) } else { confidence_weight(&e.behavior) })
        .collect::<Result<_>>()?;
    normalize_weights(&raw)
}

/// Σ_e w̄(e) D(P_θ(·|s_e), P_e) over unmasked actions, with P_θ recomputed
/// under `params`. When `grad` is given, `scale` times the gradient is added.
pub fn bc_loss(
    params: &PolicyParams,
    batches: &[&ExperienceBatch],
    weights: &[f64],
    divergence: Divergence,
    scale: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let count: usize = batches.iter().map(|b| b.len()).sum();
    if weights.len() != count {
        return Err(Error::Shape(format!("{} weights for {count} experiences", weights.len())));
    }
    let kind = match divergence {
        Divergence::Rkld => DivergenceKind::Reverse,
        Divergence::Kld => DivergenceKind::Forward,
    };
    let mut total = 0.0;
    let mut offset = 0;
    for group in batches.iter().flat_map(|b| &b.groups) {
        let m = group.experiences.len();
        if m == 0 {
            continue;
        }
        let w = weights[offset..offset + m].to_vec();
        offset += m;
        let inst = &group.instance;
        let c = inst.num_actions();
        let mut target = Vec::with_capacity(m * c);
        for e in &group.experiences {
            if e.behavior.probs.len() != c || e.behavior.mask.len() != c || e.state.visited.len() != inst.len() {
                return Err(Error::DataCorruption("experience does not match its instance".into()));
            }
            target.extend(
                e.behavior
                    .probs
                    .iter()
                    .zip(&e.behavior.mask)
                    .map(|(&p, &k)| if k { p.max(PROB_FLOOR) } else { 0.0 }),
            );
        }
        let states: Vec<&StateSnapshot> = group.experiences.iter().map(|e| &e.state).collect();
        let mut tape = Tape::new(&params.theta);
        let enc = encode(&mut tape, params, inst);
        let (logq, mask) = decode(&mut tape, params, &enc, inst, &states);
        for (r, e) in group.experiences.iter().enumerate() {
            if e.behavior.mask[..] != mask[r * c..(r + 1) * c] {
                return Err(Error::DataCorruption(format!(
                    "buffered mask disagrees with recomputed feasibility on `{}`",
                    inst.name()
                )));
            }
        }
        let div = tape.divergence(logq, target, mask, w, kind);
        total += tape.scalar(div);
        if let Some(g) = grad.as_deref_mut() {
            let loss = tape.sum_scalars(vec![(div, scale)]);
            tape.backward(loss, g)?;
        }
    }
    Ok(total)
}

/// Fixed-capacity reservoir over experience batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirBuffer {
    capacity: usize,
    entries: Vec<ExperienceBatch>,
    offered: u64,
}

impl ReservoirBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            entries: Vec::new(),
            offered: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of batches offered so far.
    pub fn offered(&self) -> u64 {
        self.offered
    }

    pub fn entries(&self) -> &[ExperienceBatch] {
        &self.entries
    }

    /// Offers a batch: kept outright while there is room, afterwards it
    /// replaces a uniformly chosen entry with probability capacity/offered.
    pub fn update(&mut self, batch: ExperienceBatch, rng: &mut Stream) {
        self.offered += 1;
        if self.entries.len() < self.capacity {
            self.entries.push(batch);
        } else {
            let j = rng.gen_range(0..self.offered);
            if (j as usize) < self.capacity {
                self.entries[j as usize] = batch;
            }
        }
    }

    /// Indices of `count` entries: without replacement when the buffer holds
    /// at least `count` entries, with replacement otherwise.
    pub fn sample_indices(&self, count: usize, rng: &mut Stream) -> Result<Vec<usize>> {
        if self.entries.is_empty() {
            return Err(Error::contract("cannot sample from an empty buffer"));
        }
        let len = self.entries.len();
        Ok(if count > len {
            (0..count).map(|_| rng.gen_range(0..len)).collect()
        } else {
            index::sample(rng, len, count).into_vec()
        })
    }

    pub fn sample(&self, count: usize, rng: &mut Stream) -> Result<Vec<&ExperienceBatch>> {
        Ok(self
            .sample_indices(count, rng)?
            .into_iter()
            .map(|i| &self.entries[i])
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let stored = StoredBuffer {
            capacity: self.capacity as u64,
            offered: self.offered,
            entries: self
                .entries
                .iter()
                .map(|b| {
                    b.groups
                        .iter()
                        .map(|g| {
                            Ok(StoredGroup {
                                instance: StoredInstance::from_instance(&g.instance)?,
                                experiences: g.experiences.clone(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?,
        };
        let mut out = Vec::from(&MAGIC[..]);
        out.extend_from_slice(&BUFFER_VERSION.to_le_bytes());
        out.extend(bincode::serialize(&stored)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || bytes[..MAGIC.len()] != MAGIC[..] {
            return Err(Error::DataCorruption("not a buffer checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 4].try_into().expect("4 bytes"));
        if version != BUFFER_VERSION {
            return Err(Error::DataCorruption(format!("unsupported buffer version {version}")));
        }
        let stored: StoredBuffer = bincode::deserialize(&bytes[MAGIC.len() + 4..])?;
        let capacity = stored.capacity as usize;
        if capacity == 0 || stored.entries.len() > capacity || (stored.entries.len() as u64) > stored.offered {
            return Err(Error::DataCorruption("buffer header is inconsistent".into()));
        }
        let entries = stored
            .entries
            .into_iter()
            .map(|groups| {
                Ok(ExperienceBatch {
                    groups: groups
                        .into_iter()
                        .map(|g| {
                            Ok(ExperienceGroup {
                                instance: g.instance.into_instance()?,
                                experiences: g.experiences,
                            })
                        })
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            capacity,
            entries,
            offered: stored.offered,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

const MAGIC: [u8; 8] = *b"LLRBCBUF";
const BUFFER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredBuffer {
    capacity: u64,
    offered: u64,
    entries: Vec<Vec<StoredGroup>>,
}

#[derive(Serialize, Deserialize)]
struct StoredGroup {
    instance: StoredInstance,
    experiences: Vec<Experience>,
}

/// Self-describing-free mirror of [`ProblemInstance`] for the binary format.
#[derive(Serialize, Deserialize)]
struct StoredInstance {
    kind: ProblemKind,
    coords: Vec<Point>,
    depot: Option<Point>,
    demands: Option<Vec<u32>>,
    capacity: Option<u32>,
    source: String,
    raw_coords: Option<Vec<Point>>,
    raw_depot: Option<Point>,
}

impl StoredInstance {
    fn from_instance(i: &ProblemInstance) -> Result<Self> {
        Ok(Self {
            kind: i.kind,
            coords: i.coords.clone(),
            depot: i.depot,
            demands: i.demands.clone(),
            capacity: i.capacity,
            source: serde_json::to_string(&i.source)?,
            raw_coords: i.raw_coords.clone(),
            raw_depot: i.raw_depot,
        })
    }

    fn into_instance(self) -> Result<ProblemInstance> {
        Ok(ProblemInstance {
            kind: self.kind,
            coords: self.coords,
            depot: self.depot,
            demands: self.demands,
            capacity: self.capacity,
            source: serde_json::from_str(&self.source)?,
            raw_coords: self.raw_coords,
            raw_depot: self.raw_depot,
        })
    }
}
