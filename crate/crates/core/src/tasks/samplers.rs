//! The six node/demand samplers.
//!
//! Each sampler returns coordinates in the unit square. Demands are produced
//! only when a depot is supplied (CVRP); TSP callers pass `None` and receive an
//! empty demand vector. Zero demands are lifted to 1 in every sampler.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp, Normal};

use super::{Point, MAX_DEMAND};

/// Nodes closer than this to the explosion centre are pushed out.
pub const EXPLOSION_RADIUS: f64 = 0.3;
/// Rate of the exponential extra push distance (mean 1/40).
pub const EXPLOSION_RATE: f64 = 40.0;
const COMPRESSION_BAND: f64 = 0.3;
const COMPRESSION_SIGMA: f64 = 0.1;
const GM_CENTERS: usize = 5;
const GM_SPAN: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub coords: Vec<Point>,
    pub demands: Vec<u32>,
}

pub(crate) fn uniform_point(rng: &mut ChaCha8Rng) -> Point {
    [rng.gen::<f64>(), rng.gen::<f64>()]
}

fn clamp_unit(p: Point) -> Point {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn lift_zero(d: u32) -> u32 {
    d.max(1)
}

fn gaussian_demand(mean_offset: bool, rng: &mut ChaCha8Rng) -> u32 {
    let normal = Normal::new(5.0, 1.0).expect("valid normal");
    let x: f64 = normal.sample(rng);
    let v = if mean_offset { 10.0 - x } else { x };
    lift_zero(v.clamp(0.0, MAX_DEMAND as f64).round() as u32)
}

/// Maps noisy depot distances linearly onto [1, 10] and rounds half-up.
fn distance_demands(values: &[f64]) -> Vec<u32> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
            (1.0 + 9.0 * t).round().clamp(1.0, MAX_DEMAND as f64) as u32
        })
        .collect()
}

fn gen_between(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

pub fn sample_uniform(n: usize, depot: Option<Point>, rng: &mut ChaCha8Rng) -> Sampled {
    let coords: Vec<Point> = (0..n).map(|_| uniform_point(rng)).collect();
    let demands = match depot {
        Some(_) => (0..n).map(|_| rng.gen_range(1..=MAX_DEMAND)).collect(),
        None => Vec::new(),
    };
    Sampled { coords, demands }
}

/// Five centres on [0,50]², each followed by unit-variance satellites; the
/// centres are nodes themselves. With `n` nodes each centre gets
/// ⌈(n−5)/5⌉ satellites and surplus satellites are dropped in sampling order.
pub fn sample_gaussian_mixture(n: usize, depot: Option<Point>, rng: &mut ChaCha8Rng) -> Sampled {
    let centers_n = GM_CENTERS.min(n);
    let per_center = (n - centers_n).div_ceil(centers_n);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");

    let centers: Vec<Point> = (0..centers_n)
        .map(|_| [rng.gen::<f64>() * GM_SPAN, rng.gen::<f64>() * GM_SPAN])
        .collect();
    let mut satellites: Vec<(Point, usize)> = Vec::with_capacity(n - centers_n);
    'outer: for (z, c) in centers.iter().enumerate() {
        for _ in 0..per_center {
            if centers_n + satellites.len() == n {
                break 'outer;
            }
            let p = [c[0] + normal.sample(rng), c[1] + normal.sample(rng)];
            satellites.push((p, z));
        }
    }

    let mut raw: Vec<Point> = centers.clone();
    raw.extend(satellites.iter().map(|(p, _)| *p));
    let coords = minmax_per_axis(&raw);

    let demands = match depot {
        Some(_) => {
            let mut d: Vec<u32> = (0..centers_n).map(|_| rng.gen_range(1..=MAX_DEMAND)).collect();
            let dists: Vec<f64> = satellites.iter().map(|(p, z)| dist(*p, centers[*z])).collect();
            let lo = dists.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = dists.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for &x in &dists {
                let t = if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
                d.push(lift_zero((MAX_DEMAND as f64 * t).round() as u32));
            }
            d
        }
        None => Vec::new(),
    };
    Sampled { coords, demands }
}

fn minmax_per_axis(points: &[Point]) -> Vec<Point> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    points
        .iter()
        .map(|p| {
            let mut q = [0.0; 2];
            for a in 0..2 {
                let span = hi[a] - lo[a];
                q[a] = if span > 0.0 { ((p[a] - lo[a]) / span).clamp(0.0, 1.0) } else { 0.5 };
            }
            q
        })
        .collect()
}

/// Moves `point` radially away from `center` so that it ends at distance
/// `EXPLOSION_RADIUS + extra`, if it started inside the radius. A point
/// exactly at the centre is pushed along `fallback_angle`.
pub fn explode_point(point: Point, center: Point, extra: f64, fallback_angle: f64) -> Point {
    let d = dist(point, center);
    if d >= EXPLOSION_RADIUS {
        return point;
    }
    let dir = if d > 0.0 {
        [(point[0] - center[0]) / d, (point[1] - center[1]) / d]
    } else {
        [fallback_angle.cos(), fallback_angle.sin()]
    };
    let r = EXPLOSION_RADIUS + extra;
    [center[0] + dir[0] * r, center[1] + dir[1] * r]
}

pub fn sample_explosion(n: usize, depot: Option<Point>, rng: &mut ChaCha8Rng) -> Sampled {
    let exp = Exp::new(EXPLOSION_RATE).expect("valid rate");
    let mut coords: Vec<Point> = (0..n).map(|_| uniform_point(rng)).collect();
    let center = uniform_point(rng);
    for p in coords.iter_mut() {
        if dist(*p, center) < EXPLOSION_RADIUS {
            let extra: f64 = exp.sample(rng);
            let angle = rng.gen::<f64>() * 2.0 * PI;
            *p = clamp_unit(explode_point(*p, center, extra, angle));
        }
    }
    let demands = match depot {
        Some(_) => (0..n).map(|_| gaussian_demand(false, rng)).collect(),
        None => Vec::new(),
    };
    Sampled { coords, demands }
}

/// Re-places `point` at signed perpendicular distance `new_distance` from the
/// line through `a` and `b`, if it lies within the compression band.
pub fn compress_point(point: Point, a: Point, b: Point, new_distance: f64) -> Point {
    let len = dist(a, b);
    if len == 0.0 {
        return point;
    }
    let normal = [-(b[1] - a[1]) / len, (b[0] - a[0]) / len];
    let signed = (point[0] - a[0]) * normal[0] + (point[1] - a[1]) * normal[1];
    if signed.abs() >= COMPRESSION_BAND {
        return point;
    }
    let shift = new_distance - signed;
    [point[0] + shift * normal[0], point[1] + shift * normal[1]]
}

pub fn sample_compression(n: usize, depot: Option<Point>, rng: &mut ChaCha8Rng) -> Sampled {
    let normal = Normal::new(0.0, COMPRESSION_SIGMA).expect("valid normal");
    let mut coords: Vec<Point> = (0..n).map(|_| uniform_point(rng)).collect();
    let a = uniform_point(rng);
    let b = uniform_point(rng);
    for p in coords.iter_mut() {
        let new_distance: f64 = normal.sample(rng);
        *p = clamp_unit(compress_point(*p, a, b, new_distance));
    }
    let demands = match depot {
        Some(_) => (0..n).map(|_| gaussian_demand(true, rng)).collect(),
        None => Vec::new(),
    };
    Sampled { coords, demands }
}

/// Cell counts `(a, b)` of the grid for `n` nodes in a `w × h` rectangle.
/// `b` is raised to ⌈n/a⌉ whenever ⌈√(n/a)⌉ cells per column are too few.
pub fn grid_dimensions(n: usize, w: f64, h: f64) -> (usize, usize) {
    let a = ((n as f64 * w / h).sqrt().ceil() as usize).max(1);
    let mut b = ((n as f64 / a as f64).sqrt().ceil() as usize).max(1);
    if a * b < n {
        b = n.div_ceil(a);
    }
    (a, b)
}

pub fn sample_grid(n: usize, depot: Option<Point>, rng: &mut ChaCha8Rng) -> Sampled {
    let ratio = rng.gen_range(0.2..0.8);
    let (w, h) = if rng.gen::<f64>() <= 0.5 { (1.0, ratio) } else { (ratio, 1.0) };
    let cx = gen_between(rng, w / 2.0, 1.0 - w / 2.0);
    let cy = gen_between(rng, h / 2.0, 1.0 - h / 2.0);
    let (a, b) = grid_dimensions(n, w, h);
    let (x0, y0) = (cx - w / 2.0, cy - h / 2.0);
    let mut coords = Vec::with_capacity(n);
    'rows: for j in 0..b {
        for i in 0..a {
            if coords.len() == n {
                break 'rows;
            }
            let x = x0 + (i as f64 + 0.5) * w / a as f64;
            let y = y0 + (j as f64 + 0.5) * h / b as f64;
            coords.push(clamp_unit([x, y]));
        }
    }
    let demands = match depot {
        Some(dp) => {
            let noisy: Vec<f64> = coords.iter().map(|&p| dist(p, dp) + rng.gen::<f64>()).collect();
            distance_demands(&noisy)
        }
        None => Vec::new(),
    };
    Sampled { coords, demands }
}

/// Ring radius before squashing: U(0.3, 0.4) + N(0, 0.05²).
pub fn sample_ring_radius(rng: &mut ChaCha8Rng) -> f64 {
    let normal = Normal::new(0.0, 0.05).expect("valid normal");
    rng.gen_range(0.3..0.4) + normal.sample(rng)
}

pub fn sample_ring(n: usize, depot: Option<Point>, rng: &mut ChaCha8Rng) -> Sampled {
    let ratio = rng.gen_range(0.2..0.8);
    let squash_x = rng.gen::<f64>() <= 0.5;
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        let angle = rng.gen::<f64>() * 2.0 * PI;
        let r = sample_ring_radius(rng);
        let mut p = [0.5 + r * angle.cos(), 0.5 + r * angle.sin()];
        if squash_x {
            p[0] *= ratio;
        } else {
            p[1] *= ratio;
        }
        coords.push(clamp_unit(p));
    }
    let demands = match depot {
        Some(dp) => {
            let noisy: Vec<f64> = coords
                .iter()
                .map(|&p| dist(p, dp) + rng.gen_range(0.0..2.0))
                .collect();
            distance_demands(&noisy)
        }
        None => Vec::new(),
    };
    Sampled { coords, demands }
}
