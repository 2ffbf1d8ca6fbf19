//! Experiment configs and the run orchestrator.
//!
//! A run directory looks like
//!
//! ```text
//! manifest.json
//! test_sets/<task>.json
//! runs/<order>/<method>/checkpoints/task_<i>/...
//! runs/<order>/<method>/matrix.csv
//! runs/<order>/<method>/curves.csv
//! metrics.csv, report.md, charts/*.svg
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consolidation::Divergence;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::lifelong::{lifelong_learn, CurvePoint, Method, TrainingConfig};
use crate::metrics::PerformanceMatrix;
use crate::profile::Profile;
use crate::rng::{names, Seeds};
use crate::tasks::{generate_set, Distribution, ProblemInstance, ProblemKind, TaskSpec};

/// The five task orders used in the evaluation.
pub const PRESET_ORDERS: [(&str, [Distribution; 6]); 5] = {
    use Distribution::*;
    [
        ("order1", [E, C, G, U, R, GM]),
        ("order2", [U, GM, E, R, G, C]),
        ("order3", [E, G, R, C, U, GM]),
        ("order4", [G, GM, E, U, R, C]),
        ("order5", [G, C, R, U, GM, E]),
    ]
};

pub fn preset_order(name: &str) -> Result<Vec<Distribution>> {
    PRESET_ORDERS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, o)| o.to_vec())
        .ok_or_else(|| Error::config(format!("unknown order preset `{name}` (expected order1..order5)")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderSpec {
    Preset(String),
    Custom { name: String, tasks: Vec<Distribution> },
}

impl OrderSpec {
    pub fn name(&self) -> &str {
        match self {
            OrderSpec::Preset(n) => n,
            OrderSpec::Custom { name, .. } => name,
        }
    }

    pub fn tasks(&self) -> Result<Vec<Distribution>> {
        match self {
            OrderSpec::Preset(n) => preset_order(n),
            OrderSpec::Custom { tasks, .. } => Ok(tasks.clone()),
        }
    }
}

/// Flat overrides of the profile's training settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub buffer_capacity: Option<usize>,
    pub sample_count: Option<usize>,
    pub epochs_per_task: Option<usize>,
    pub instances_per_epoch: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub divergence: Option<Divergence>,
    pub uniform_weights: Option<bool>,
    pub ewc_lambda: Option<f64>,
    pub fisher_instances: Option<usize>,
    pub continuous_buffering: Option<bool>,
    pub curve_instances: Option<usize>,
    pub test_instances: Option<usize>,
    /// Use one node count for every task instead of the profile's scale map.
    pub scale: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub orders: Vec<OrderSpec>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub overrides: Overrides,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.orders.is_empty() {
            return Err(Error::config("orders: at least one task order is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods: at least one method is required"));
        }
        let mut seen = BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(m) {
                return Err(Error::config(format!("methods: `{m}` listed twice")));
            }
        }
        let mut names = BTreeSet::new();
        for o in &self.orders {
            let tasks = o.tasks().map_err(|e| prefixed("orders", e))?;
            if tasks.is_empty() {
                return Err(Error::config(format!("orders: `{}` has no tasks", o.name())));
            }
            if !names.insert(o.name().to_string()) {
                return Err(Error::config(format!("orders: name `{}` used twice", o.name())));
            }
            if o.name().is_empty() || o.name().contains(['/', '\\']) || o.name().starts_with('.') {
                return Err(Error::config(format!("orders: `{}` is not a valid directory name", o.name())));
            }
        }
        if self.overrides.test_instances == Some(0) {
            return Err(Error::config("overrides.test_instances must be positive"));
        }
        for spec in self.all_tasks()? {
            spec.validate().map_err(|e| prefixed(&format!("task {}", spec.label()), e))?;
        }
        for m in &self.methods {
            self.training_config(*m)
                .validate()
                .map_err(|e| prefixed("overrides", e))?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn test_instances(&self) -> usize {
        self.overrides.test_instances.unwrap_or_else(|| self.profile.test_instances())
    }

    /// The task of distribution `d` under this config's profile and problem kind.
    /// Its seed fixes the frozen test set.
    pub fn task(&self, d: Distribution) -> TaskSpec {
        let scale = self.overrides.scale.unwrap_or_else(|| self.profile.scale_for(d));
        let stream = format!("{}/{}-{}-{}", names::TEST_GEN, d, self.problem, scale);
        let seed = Seeds::new(self.seed).stream(&stream).next_u64();
        match self.problem {
            ProblemKind::Tsp => TaskSpec::tsp(d, scale, seed),
            ProblemKind::Cvrp => TaskSpec::cvrp(d, scale, self.profile.capacity_for(scale), seed),
        }
    }

    pub fn order_tasks(&self, order: &OrderSpec) -> Result<Vec<TaskSpec>> {
        Ok(order.tasks()?.into_iter().map(|d| self.task(d)).collect())
    }

    fn all_tasks(&self) -> Result<Vec<TaskSpec>> {
        let mut out: Vec<TaskSpec> = Vec::new();
        for o in &self.orders {
            for t in self.order_tasks(o)? {
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
        Ok(out)
    }

    pub fn training_config(&self, method: Method) -> TrainingConfig {
        let mut c = TrainingConfig::new(self.profile, method, self.seed);
        let o = &self.overrides;
        if let Some(v) = o.alpha {
            c.alpha = v;
        }
        if let Some(v) = o.buffer_capacity {
            c.buffer_capacity = v;
        }
        if let Some(v) = o.sample_count {
            c.sample_count = v;
        }
        if let Some(v) = o.epochs_per_task {
            c.epochs_per_task = v;
        }
        if o.instances_per_epoch.is_some() {
            c.instances_per_epoch = o.instances_per_epoch;
        }
        if o.batch_size.is_some() {
            c.batch_size = o.batch_size;
        }
        if let Some(v) = o.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = o.divergence {
            c.divergence = v;
        }
        if let Some(v) = o.uniform_weights {
            c.uniform_weights = v;
        }
        if let Some(v) = o.ewc_lambda {
            c.ewc_lambda = v;
        }
        if let Some(v) = o.fisher_instances {
            c.fisher_instances = v;
        }
        if let Some(v) = o.continuous_buffering {
            c.continuous_buffering = v;
        }
        if let Some(v) = o.curve_instances {
            c.curve_instances = v;
        }
        c
    }
}

fn prefixed(field: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{field}: {m}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub llrbc: String,
    pub policy_format: u32,
}

/// Where one (order, method) run keeps its artifacts.
pub fn run_dir(root: &Path, order: &str, method: Method) -> PathBuf {
    root.join("runs").join(order).join(method.name())
}

pub fn test_set_path(root: &Path, task: &TaskSpec) -> PathBuf {
    root.join("test_sets").join(format!("{}.json", task.label()))
}

/// Loads the frozen test set of `task`, generating and storing it first if absent.
pub fn frozen_test_set(root: &Path, task: &TaskSpec, count: usize) -> Result<Vec<ProblemInstance>> {
    let path = test_set_path(root, task);
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let set: Vec<ProblemInstance> = serde_json::from_str(&text)?;
        if set.len() != count || set.iter().any(|i| i.kind != task.kind || i.len() != task.scale) {
            return Err(Error::DataCorruption(format!(
                "{} does not match task {} with {count} instances",
                path.display(),
                task.label()
            )));
        }
        return Ok(set);
    }
    let set = generate_set(task, count)?;
    write_atomic(&path, serde_json::to_string(&set)?.as_bytes())?;
    Ok(set)
}

fn write_curves(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in curves {
        w.serialize(c).map_err(|e| Error::DataCorruption(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::DataCorruption(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_curves(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::DataCorruption(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|c| c.map_err(|e| Error::DataCorruption(format!("{}: {e}", path.display()))))
        .collect()
}

fn check_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = root.join("manifest.json");
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let old: Manifest = serde_json::from_str(&text)?;
        if old.config_hash != manifest.config_hash {
            return Err(Error::config(format!(
                "{} already holds an experiment with a different config (hash {})",
                root.display(),
                old.config_hash
            )));
        }
    }
    write_atomic(&path, serde_json::to_string_pretty(manifest)?.as_bytes())
}

/// Runs every (order, method) pair, resuming finished tasks from their
/// checkpoints, then writes the suite-wide metrics and report.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<crate::report::Report> {
    cfg.validate()?;
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        versions: Versions {
            llrbc: env!("CARGO_PKG_VERSION").to_string(),
            policy_format: crate::policy::FORMAT_VERSION,
        },
        config: cfg.clone(),
    };
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    check_manifest(root, &manifest)?;
    let count = cfg.test_instances();
    for order in &cfg.orders {
        let tasks = cfg.order_tasks(order)?;
        let tests = tasks
            .iter()
            .map(|t| frozen_test_set(root, t, count))
            .collect::<Result<Vec<_>>>()?;
        for &method in &cfg.methods {
            let dir = run_dir(root, order.name(), method);
            log::info!("run {} / {method}", order.name());
            let tcfg = cfg.training_config(method);
            let outcome = lifelong_learn(&tasks, &tests, &tcfg, Some(&dir.join("checkpoints")))?;
            let matrix = PerformanceMatrix::new(tasks.iter().map(TaskSpec::label).collect(), outcome.raw)?;
            matrix.save(&dir.join("matrix.csv"))?;
            write_curves(&dir.join("curves.csv"), &outcome.curves)?;
        }
    }
    crate::report::write_report(root)
}
