//! TSPLIB / CVRPLIB reader and writer (EUC_2D only).
//!
//! Coordinates are kept verbatim in `raw_coords` and rescaled into the unit
//! square for the policy with one shared factor for both axes, so normalized
//! tour lengths are proportional to raw ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Point, ProblemInstance, ProblemKind, Source};
use crate::error::{Error, Result};

#[derive(Debug, Default)]
struct Parsed {
    header: BTreeMap<String, (usize, String)>,
    coords: Vec<(usize, usize, Point)>,
    demands: Vec<(usize, usize, u64)>,
    depots: Vec<usize>,
    tour: Vec<i64>,
    sections: Vec<String>,
}

fn unsupported(keyword: &str, detail: impl Into<String>) -> Error {
    Error::UnsupportedFormat {
        keyword: keyword.to_string(),
        detail: detail.into(),
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn split_header(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once(':')?;
    Some((k.trim().to_ascii_uppercase(), v.trim().to_string()))
}

fn scan(text: &str) -> Result<Parsed> {
    #[derive(PartialEq)]
    enum Mode {
        Header,
        Coords,
        Demands,
        Depots,
        Tour,
    }
    let mut out = Parsed::default();
    let mut mode = Mode::Header;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let upper = line.to_ascii_uppercase();
        if upper == "EOF" {
            break;
        }
        if upper.ends_with("_SECTION") {
            mode = match upper.as_str() {
                "NODE_COORD_SECTION" => Mode::Coords,
                "DEMAND_SECTION" => Mode::Demands,
                "DEPOT_SECTION" => Mode::Depots,
                "TOUR_SECTION" => Mode::Tour,
                other => return Err(unsupported(other, "section not supported")),
            };
            out.sections.push(upper);
            continue;
        }
        let first = line.split_whitespace().next().unwrap_or("");
        let numeric = first.parse::<f64>().is_ok();
        if !numeric {
            if let Some((k, v)) = split_header(line) {
                out.header.insert(k, (lineno, v));
                mode = Mode::Header;
                continue;
            }
            return Err(parse_err(lineno, format!("unexpected line `{line}`")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match mode {
            Mode::Header => return Err(parse_err(lineno, "data line outside of a section")),
            Mode::Coords => {
                if fields.len() != 3 {
                    return Err(parse_err(lineno, "expected `id x y`"));
                }
                let id = parse_id(fields[0], lineno)?;
                let x = parse_f64(fields[1], lineno)?;
                let y = parse_f64(fields[2], lineno)?;
                out.coords.push((lineno, id, [x, y]));
            }
            Mode::Demands => {
                if fields.len() != 2 {
                    return Err(parse_err(lineno, "expected `id demand`"));
                }
                let id = parse_id(fields[0], lineno)?;
                let d = fields[1]
                    .parse::<u64>()
                    .map_err(|_| parse_err(lineno, format!("demand `{}` is not an integer", fields[1])))?;
                out.demands.push((lineno, id, d));
            }
            Mode::Depots => {
                for f in fields {
                    let v: i64 = f.parse().map_err(|_| parse_err(lineno, "bad depot id"))?;
                    if v == -1 {
                        mode = Mode::Header;
                        break;
                    }
                    out.depots.push(v as usize);
                }
            }
            Mode::Tour => {
                for f in fields {
                    let v: i64 = f.parse().map_err(|_| parse_err(lineno, "bad tour entry"))?;
                    if v == -1 {
                        mode = Mode::Header;
                        break;
                    }
                    out.tour.push(v);
                }
            }
        }
    }
    Ok(out)
}

fn parse_id(s: &str, line: usize) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(parse_err(line, format!("node id `{s}` is not a positive integer"))),
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("coordinate `{s}` is not a finite number")))
}

impl Parsed {
    fn get(&self, key: &str) -> Option<&(usize, String)> {
        self.header.get(key)
    }

    fn require(&self, key: &str) -> Result<&(usize, String)> {
        self.get(key).ok_or_else(|| unsupported(key, "required keyword missing"))
    }

    fn dimension(&self) -> Result<usize> {
        let (line, v) = self.require("DIMENSION")?;
        v.parse::<usize>()
            .map_err(|_| parse_err(*line, format!("DIMENSION `{v}` is not an integer")))
    }

    fn check_common(&self, expected_type: &str) -> Result<usize> {
        self.require("NAME")?;
        let (_, ewt) = self.require("EDGE_WEIGHT_TYPE")?;
        if !ewt.eq_ignore_ascii_case("EUC_2D") {
            return Err(unsupported("EDGE_WEIGHT_TYPE", format!("{ewt} is not supported, only EUC_2D")));
        }
        if let Some((_, t)) = self.get("TYPE") {
            if !t.eq_ignore_ascii_case(expected_type) {
                return Err(unsupported("TYPE", format!("expected {expected_type}, found {t}")));
            }
        }
        if !self.sections.iter().any(|s| s == "NODE_COORD_SECTION") {
            return Err(unsupported("NODE_COORD_SECTION", "required section missing"));
        }
        let dim = self.dimension()?;
        if self.coords.len() != dim {
            return Err(parse_err(
                self.get("DIMENSION").map_or(0, |(l, _)| *l),
                format!("DIMENSION is {dim} but {} coordinates were given", self.coords.len()),
            ));
        }
        Ok(dim)
    }

    /// Coordinates ordered by node id 1..=dim.
    fn ordered_coords(&self, dim: usize) -> Result<Vec<Point>> {
        let mut slots: Vec<Option<Point>> = vec![None; dim];
        for &(line, id, p) in &self.coords {
            if id > dim {
                return Err(parse_err(line, format!("node id {id} exceeds DIMENSION {dim}")));
            }
            if slots[id - 1].replace(p).is_some() {
                return Err(parse_err(line, format!("duplicate node id {id}")));
            }
        }
        Ok(slots.into_iter().map(|p| p.expect("all ids present")).collect())
    }

    fn name(&self) -> String {
        self.get("NAME").map(|(_, v)| v.clone()).unwrap_or_default()
    }
}

/// Shared-factor min-max normalization into the unit square.
fn normalize(points: &[Point]) -> Vec<Point> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if span > 0.0 { span } else { 1.0 };
    points
        .iter()
        .map(|p| {
            [
                ((p[0] - lo[0]) / scale).clamp(0.0, 1.0),
                ((p[1] - lo[1]) / scale).clamp(0.0, 1.0),
            ]
        })
        .collect()
}

pub fn parse_tsplib(text: &str) -> Result<ProblemInstance> {
    let parsed = scan(text)?;
    let dim = parsed.check_common("TSP")?;
    if dim < 2 {
        return Err(parse_err(0, "a TSP needs at least two cities"));
    }
    let raw = parsed.ordered_coords(dim)?;
    let mut inst = ProblemInstance::tsp(normalize(&raw), Source::Benchmark(parsed.name()));
    inst.raw_coords = Some(raw);
    Ok(inst)
}

pub fn parse_cvrplib(text: &str) -> Result<ProblemInstance> {
    let parsed = scan(text)?;
    let dim = parsed.check_common("CVRP")?;
    let (cap_line, cap) = parsed.require("CAPACITY")?;
    let capacity: u32 = cap
        .parse()
        .map_err(|_| parse_err(*cap_line, format!("CAPACITY `{cap}` is not an integer")))?;
    if !parsed.sections.iter().any(|s| s == "DEMAND_SECTION") {
        return Err(unsupported("DEMAND_SECTION", "required section missing"));
    }
    if !parsed.sections.iter().any(|s| s == "DEPOT_SECTION") {
        return Err(unsupported("DEPOT_SECTION", "required section missing"));
    }
    let depot_id = match parsed.depots.as_slice() {
        [d] => *d,
        [] => return Err(unsupported("DEPOT_SECTION", "no depot listed")),
        _ => return Err(unsupported("DEPOT_SECTION", "multiple depots are not supported")),
    };
    if depot_id == 0 || depot_id > dim {
        return Err(parse_err(0, format!("depot id {depot_id} out of range")));
    }
    let all = parsed.ordered_coords(dim)?;
    let mut demand: Vec<Option<u64>> = vec![None; dim];
    for &(line, id, d) in &parsed.demands {
        if id > dim {
            return Err(parse_err(line, format!("demand for unknown node {id}")));
        }
        if id == depot_id && d != 0 {
            return Err(parse_err(line, format!("depot demand must be 0, found {d}")));
        }
        demand[id - 1] = Some(d);
    }
    let mut customers = Vec::with_capacity(dim - 1);
    let mut demands = Vec::with_capacity(dim - 1);
    for (i, p) in all.iter().enumerate() {
        if i + 1 == depot_id {
            continue;
        }
        let d = demand[i].ok_or_else(|| parse_err(0, format!("node {} has no demand", i + 1)))?;
        let d = u32::try_from(d).map_err(|_| parse_err(0, "demand too large"))?;
        customers.push(*p);
        demands.push(d);
    }
    if customers.is_empty() {
        return Err(parse_err(0, "no customers"));
    }
    if let Some(&d) = demands.iter().find(|&&d| d > capacity) {
        return Err(parse_err(0, format!("demand {d} exceeds CAPACITY {capacity}")));
    }
    let raw_depot = all[depot_id - 1];
    let mut everything = vec![raw_depot];
    everything.extend(customers.iter().copied());
    let normed = normalize(&everything);
    let mut inst = ProblemInstance::cvrp(
        normed[0],
        normed[1..].to_vec(),
        demands,
        capacity,
        Source::Benchmark(parsed.name()),
    );
    inst.raw_coords = Some(customers);
    inst.raw_depot = Some(raw_depot);
    Ok(inst)
}

/// Reads a `.tour` file into 0-based node indices.
pub fn parse_tour(text: &str) -> Result<Vec<usize>> {
    let parsed = scan(text)?;
    if !parsed.sections.iter().any(|s| s == "TOUR_SECTION") {
        return Err(unsupported("TOUR_SECTION", "required section missing"));
    }
    parsed
        .tour
        .iter()
        .map(|&v| {
            if v >= 1 {
                Ok(v as usize - 1)
            } else {
                Err(parse_err(0, format!("tour entry {v} is not a node id")))
            }
        })
        .collect()
}

fn name_of(inst: &ProblemInstance) -> String {
    match &inst.source {
        Source::Benchmark(n) => n.clone(),
        Source::Generated(spec) => spec.label(),
    }
}

pub fn write_tsplib(inst: &ProblemInstance) -> Result<String> {
    if inst.kind != ProblemKind::Tsp {
        return Err(Error::contract("write_tsplib needs a TSP instance"));
    }
    let pts = inst.raw_coords.as_ref().unwrap_or(&inst.coords);
    let mut s = String::new();
    let _ = writeln!(s, "NAME : {}", name_of(inst));
    let _ = writeln!(s, "TYPE : TSP");
    let _ = writeln!(s, "DIMENSION : {}", pts.len());
    let _ = writeln!(s, "EDGE_WEIGHT_TYPE : EUC_2D");
    let _ = writeln!(s, "NODE_COORD_SECTION");
    for (i, p) in pts.iter().enumerate() {
        let _ = writeln!(s, "{} {:?} {:?}", i + 1, p[0], p[1]);
    }
    s.push_str("EOF\n");
    Ok(s)
}

pub fn write_cvrplib(inst: &ProblemInstance) -> Result<String> {
    if inst.kind != ProblemKind::Cvrp {
        return Err(Error::contract("write_cvrplib needs a CVRP instance"));
    }
    let pts = inst.raw_coords.as_ref().unwrap_or(&inst.coords);
    let depot = inst.raw_depot.or(inst.depot).expect("CVRP depot");
    let demands = inst.demands.as_ref().expect("CVRP demands");
    let mut s = String::new();
    let _ = writeln!(s, "NAME : {}", name_of(inst));
    let _ = writeln!(s, "TYPE : CVRP");
    let _ = writeln!(s, "DIMENSION : {}", pts.len() + 1);
    let _ = writeln!(s, "EDGE_WEIGHT_TYPE : EUC_2D");
    let _ = writeln!(s, "CAPACITY : {}", inst.capacity());
    s.push_str("NODE_COORD_SECTION\n");
    let _ = writeln!(s, "1 {:?} {:?}", depot[0], depot[1]);
    for (i, p) in pts.iter().enumerate() {
        let _ = writeln!(s, "{} {:?} {:?}", i + 2, p[0], p[1]);
    }
    s.push_str("DEMAND_SECTION\n1 0\n");
    for (i, d) in demands.iter().enumerate() {
        let _ = writeln!(s, "{} {}", i + 2, d);
    }
    s.push_str("DEPOT_SECTION\n1\n-1\nEOF\n");
    Ok(s)
}
