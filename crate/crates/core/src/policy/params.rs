use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub clip: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            layers: 3,
            heads: 4,
            ff_dim: 128,
            clip: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of input features of the CVRP lift: customer (x, y, demand/capacity),
/// depot (x, y) and one indicator per node type acting as a per-type bias.
pub(crate) const CVRP_FEATURES: usize = 7;

fn layout(arch: &ArchConfig) -> Vec<(ParamEntry, Init)> {
    let d = arch.embed_dim;
    let f = arch.ff_dim;
    let mut out = Vec::new();
    let mut offset = 0;
    let mut add = |name: String, rows: usize, cols: usize, init: Init| {
        out.push((ParamEntry { name, rows, cols, offset }, init));
        offset += rows * cols;
    };
    add("embed.tsp.w".into(), 2, d, Init::Uniform { fan_in: 2 });
    add("embed.tsp.b".into(), 1, d, Init::Uniform { fan_in: 2 });
    add("embed.cvrp.w".into(), CVRP_FEATURES, d, Init::Uniform { fan_in: 3 });
    for l in 0..arch.layers {
        for p in ["wq", "wk", "wv", "wo"] {
            add(format!("enc.{l}.{p}"), d, d, Init::Uniform { fan_in: d });
        }
        add(format!("enc.{l}.bo"), 1, d, Init::Uniform { fan_in: d });
        add(format!("enc.{l}.ln1.g"), 1, d, Init::Ones);
        add(format!("enc.{l}.ln1.b"), 1, d, Init::Zeros);
        add(format!("enc.{l}.ff1.w"), d, f, Init::Uniform { fan_in: d });
        add(format!("enc.{l}.ff1.b"), 1, f, Init::Uniform { fan_in: d });
        add(format!("enc.{l}.ff2.w"), f, d, Init::Uniform { fan_in: f });
        add(format!("enc.{l}.ff2.b"), 1, d, Init::Uniform { fan_in: f });
        add(format!("enc.{l}.ln2.g"), 1, d, Init::Ones);
        add(format!("enc.{l}.ln2.b"), 1, d, Init::Zeros);
    }
    add("dec.graph".into(), d, d, Init::Uniform { fan_in: d });
    add("dec.node".into(), d, d, Init::Uniform { fan_in: d });
    add("dec.cap".into(), 1, d, Init::Uniform { fan_in: 1 });
    add("dec.key".into(), d, d, Init::Uniform { fan_in: d });
    out
}

/// Flat parameter vector plus the registry naming its slices.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: ArchConfig,
    pub registry: Vec<ParamEntry>,
    pub theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    arch: ArchConfig,
    registry: Vec<ParamEntry>,
    theta: Vec<f64>,
}

const FORMAT: &str = "llrbc-policy";
/// Version of the checkpoint file format.
pub const FORMAT_VERSION: u32 = 1;

impl PolicyParams {
    /// Uniform(±1/√fan_in) weights; layer-norm gains 1 and biases 0.
    pub fn init(arch: ArchConfig, rng: &mut Stream) -> Result<Self> {
        if arch.embed_dim == 0 || arch.heads == 0 || arch.embed_dim % arch.heads != 0 {
            return Err(Error::config("embedding dim must be a positive multiple of heads"));
        }
        let entries = layout(&arch);
        let total: usize = entries.iter().map(|(e, _)| e.len()).sum();
        let mut theta = Vec::with_capacity(total);
        for (e, init) in &entries {
            for _ in 0..e.len() {
                theta.push(match init {
                    Init::Uniform { fan_in } => {
                        let b = 1.0 / (*fan_in as f64).sqrt();
                        rng.gen_range(-b..=b)
                    }
                    Init::Ones => 1.0,
                    Init::Zeros => 0.0,
                });
            }
        }
        Ok(Self {
            arch,
            registry: entries.into_iter().map(|(e, _)| e).collect(),
            theta,
        })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn entry(&self, name: &str) -> &ParamEntry {
        self.registry
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn validate(&self) -> Result<()> {
        let expected: Vec<ParamEntry> = layout(&self.arch).into_iter().map(|(e, _)| e).collect();
        if expected != self.registry {
            return Err(Error::Shape("registry does not match the architecture".into()));
        }
        let total: usize = self.registry.iter().map(ParamEntry::len).sum();
        if total != self.theta.len() {
            return Err(Error::Shape(format!(
                "registry covers {total} values but theta has {}",
                self.theta.len()
            )));
        }
        if let Some(i) = self.theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical { tensor: format!("theta[{i}]") });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointFile {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            arch: self.arch,
            registry: self.registry.clone(),
            theta: self.theta.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != FORMAT_VERSION {
            return Err(Error::DataCorruption(format!(
                "unexpected checkpoint format {} v{}",
                file.format, file.version
            )));
        }
        let p = Self {
            arch: file.arch,
            registry: file.registry,
            theta: file.theta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seeds;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = PolicyParams::init(ArchConfig::default(), &mut Seeds::new(3).stream("init")).unwrap();
        p.validate().unwrap();
        let q = PolicyParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p.theta.len(), q.theta.len());
        assert!(p.theta.iter().zip(&q.theta).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(p.registry, q.registry);
    }

    #[test]
    fn init_bounds() {
        let p = PolicyParams::init(ArchConfig::default(), &mut Seeds::new(1).stream("init")).unwrap();
        let e = p.entry("enc.0.wq");
        let bound = 1.0 / 8.0;
        assert!(p.theta[e.offset..e.offset + e.len()].iter().all(|v| v.abs() <= bound));
        let g = p.entry("enc.2.ln2.g");
        assert!(p.theta[g.offset..g.offset + g.len()].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn tampered_checkpoint_is_rejected() {
        let p = PolicyParams::init(ArchConfig::default(), &mut Seeds::new(1).stream("init")).unwrap();
        let mut q = p.clone();
        q.theta.pop();
        assert!(PolicyParams::from_json(&q.to_json().unwrap()).is_err());
    }
}
