//! Zero-shot evaluation of trained checkpoints on TSPLIB / CVRPLIB files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{tour_length, validate_route, LengthConvention};
use crate::error::{Error, Result};
use crate::policy::{best_of_starts, PolicyParams};
use crate::tasks::{parse_cvrplib, parse_tsplib, ProblemInstance};

/// Largest instance (in nodes) that is decoded.
pub const DECODE_LIMIT: usize = 1001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub name: String,
    pub n: usize,
    /// Length in the file's own convention (TSPLIB nearest integer), when available.
    pub raw_length: Option<f64>,
    /// Length between normalized coordinates.
    pub normalized_length: f64,
    /// Relative gap to the best checkpoint of the suite on this instance.
    pub gap: Option<f64>,
    #[serde(skip)]
    pub route: Vec<usize>,
}

/// A benchmark file that could not be used.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

/// Parses every `.tsp` and `.vrp` file of `dir` (sorted by file name).
/// Files in unsupported formats are reported instead of failing the load.
pub fn load_dir(dir: &Path) -> Result<(Vec<ProblemInstance>, Vec<Skipped>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("tsp" | "vrp")))
        .collect();
    paths.sort();
    let mut instances = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("vrp") => parse_cvrplib(&text),
            _ => parse_tsplib(&text),
        };
        match parsed {
            Ok(inst) => instances.push(inst),
            Err(e @ (Error::UnsupportedFormat { .. } | Error::Parse { .. })) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push(Skipped { path, reason: e.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((instances, skipped))
}

/// Greedy best-of-n decoding on each instance; instances with more than
/// `decode_limit` nodes are skipped. Every returned route has been checked
/// for feasibility.
pub fn evaluate_instances(
    params: &PolicyParams,
    instances: &[ProblemInstance],
    decode_limit: usize,
) -> Result<(Vec<BenchmarkResult>, Vec<String>)> {
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for inst in instances {
        let nodes = inst.num_actions();
        if nodes > decode_limit {
            log::warn!("skipping {}: {nodes} nodes exceed the decode limit {decode_limit}", inst.name());
            skipped.push(inst.name());
            continue;
        }
        let best = best_of_starts(params, inst)?;
        validate_route(inst, &best.route)?;
        let raw_length = if inst.raw_coords.is_some() {
            Some(tour_length(&best.route, inst, LengthConvention::TsplibNint)?)
        } else {
            None
        };
        results.push(BenchmarkResult {
            name: inst.name(),
            n: inst.len(),
            raw_length,
            normalized_length: best.total_length,
            gap: None,
            route: best.route,
        });
    }
    Ok((results, skipped))
}

/// Fills `gap` against the shortest normalized length any suite member found.
pub fn assign_gaps(suite: &mut [Vec<BenchmarkResult>]) {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for r in suite.iter().flatten() {
        let e = best.entry(r.name.clone()).or_insert(f64::INFINITY);
        *e = e.min(r.normalized_length);
    }
    for r in suite.iter_mut().flatten() {
        let b = best[&r.name];
        r.gap = Some(if r.normalized_length == b { 0.0 } else { (r.normalized_length - b) / b });
    }
}

/// Per-checkpoint results on every usable instance of `dir`.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub checkpoints: Vec<String>,
    pub results: Vec<Vec<BenchmarkResult>>,
    pub unreadable: Vec<Skipped>,
    pub over_limit: Vec<String>,
}

pub fn evaluate_benchmark(
    checkpoints: &[(String, PolicyParams)],
    dir: &Path,
    decode_limit: usize,
) -> Result<SuiteReport> {
    if checkpoints.is_empty() {
        return Err(Error::config("no checkpoints to evaluate"));
    }
    let (instances, unreadable) = load_dir(dir)?;
    let mut results = Vec::new();
    let mut over_limit = Vec::new();
    for (_, params) in checkpoints {
        let (r, s) = evaluate_instances(params, &instances, decode_limit)?;
        results.push(r);
        over_limit = s;
    }
    assign_gaps(&mut results);
    Ok(SuiteReport {
        checkpoints: checkpoints.iter().map(|(n, _)| n.clone()).collect(),
        results,
        unreadable,
        over_limit,
    })
}

pub fn results_csv(results: &[BenchmarkResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "n", "raw_length", "normalized_length", "gap"])
        .map_err(|e| Error::DataCorruption(e.to_string()))?;
    for r in results {
        w.write_record([
            r.name.clone(),
            r.n.to_string(),
            r.raw_length.map_or(String::new(), |v| format!("{v}")),
            format!("{:?}", r.normalized_length),
            r.gap.map_or(String::new(), |v| format!("{v:?}")),
        ])
        .map_err(|e| Error::DataCorruption(e.to_string()))?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::DataCorruption(e.to_string()))?)
        .map_err(|e| Error::DataCorruption(e.to_string()))
}
