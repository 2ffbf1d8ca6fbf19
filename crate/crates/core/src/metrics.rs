//! Normalized performance bookkeeping and the lifelong metrics
//! AP, AF, AMF, APl and AG.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// (d − d*) / d*.
pub fn normalize(d: f64, d_star: f64) -> Result<f64> {
    if !(d_star > 0.0) {
        return Err(Error::contract(format!("reference value must be positive, got {d_star}")));
    }
    Ok((d - d_star) / d_star)
}

/// Raw test performance: `raw[i][j]` after training task i, evaluated on task j.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    pub tasks: Vec<String>,
    pub raw: Vec<Vec<f64>>,
}

impl PerformanceMatrix {
    pub fn new(tasks: Vec<String>, raw: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { tasks, raw };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.raw {
            if row.len() != self.tasks.len() {
                return Err(Error::Shape("matrix row length differs from task count".into()));
            }
            if row.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::DataCorruption("matrix entries must be positive and finite".into()));
            }
        }
        Ok(())
    }

    pub fn normalized(&self, d_star: &[f64]) -> Result<Vec<Vec<f64>>> {
        if d_star.len() != self.tasks.len() {
            return Err(Error::Shape("one reference value per task required".into()));
        }
        self.raw
            .iter()
            .map(|row| row.iter().zip(d_star).map(|(&d, &s)| normalize(d, s)).collect())
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.tasks).map_err(csv_err)?;
        for row in &self.raw {
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::DataCorruption(e.to_string()))?)
            .map_err(|e| Error::DataCorruption(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let tasks: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let mut raw = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let row = rec
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::DataCorruption(format!("bad matrix entry `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            raw.push(row);
        }
        Self::new(tasks, raw)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::DataCorruption(format!("csv: {e}"))
}

/// Per-column minimum over every row of every matrix.
pub fn column_best<'a>(matrices: impl IntoIterator<Item = &'a PerformanceMatrix>) -> Result<Vec<f64>> {
    let mut best: Option<Vec<f64>> = None;
    for m in matrices {
        for row in &m.raw {
            match &mut best {
                None => best = Some(row.clone()),
                Some(b) => {
                    if b.len() != row.len() {
                        return Err(Error::Shape("matrices cover different task counts".into()));
                    }
                    for (x, &v) in b.iter_mut().zip(row) {
                        *x = x.min(v);
                    }
                }
            }
        }
    }
    best.ok_or_else(|| Error::contract("no matrix rows to take a reference from"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub k: usize,
    pub ap: f64,
    pub af: Option<f64>,
    pub amf: Option<f64>,
    pub apl: f64,
    pub ag: Option<f64>,
}

/// Metrics after `k` tasks (1-based) from a normalized matrix `dbar`, where
/// `dbar[i][j]` is task j's normalized performance after training task i.
/// AG reads d̄_{i,i+1} from the same matrix, so it needs column k.
pub fn compute_metrics(dbar: &[Vec<f64>], k: usize) -> Result<Metrics> {
    if k == 0 || k > dbar.len() {
        return Err(Error::contract(format!("k = {k} outside 1..={}", dbar.len())));
    }
    if dbar.iter().take(k).any(|r| r.len() < k) {
        return Err(Error::Shape("matrix has fewer columns than k".into()));
    }
    let d = |i: usize, j: usize| dbar[i - 1][j - 1];
    let kf = k as f64;
    let ap = (1..=k).map(|i| d(k, i)).sum::<f64>() / kf;
    let apl = (1..=k).map(|i| d(i, i)).sum::<f64>() / kf;
    let (af, amf, ag) = if k >= 2 {
        let m = (k - 1) as f64;
        let af = (1..k).map(|i| (d(k, i) - d(i, i)).max(0.0)).sum::<f64>() / m;
        let amf = (1..k)
            .map(|i| {
                (i + 1..=k)
                    .map(|j| (d(j, i) - d(i, i)).max(0.0))
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / m;
        let ag = (1..k).map(|i| d(i, i + 1)).sum::<f64>() / m;
        (Some(af), Some(amf), Some(ag))
    } else {
        (None, None, None)
    };
    Ok(Metrics { k, ap, af, amf, apl, ag })
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub order: String,
    pub k: usize,
    pub ap: f64,
    pub af: Option<f64>,
    pub amf: Option<f64>,
    pub apl: f64,
    pub ag: Option<f64>,
}

impl MetricsRow {
    pub fn new(method: &str, order: &str, m: &Metrics) -> Self {
        Self {
            method: method.to_string(),
            order: order.to_string(),
            k: m.k,
            ap: m.ap,
            af: m.af,
            amf: m.amf,
            apl: m.apl,
            ag: m.ag,
        }
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::DataCorruption(e.to_string()))?)
        .map_err(|e| Error::DataCorruption(e.to_string()))
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}
