//! Random instance sampling.
//!
//! Coordinates are uniform on the unit square, demands uniform on 1..=9
//! (each customer becomes a pickup with probability 0.2 when backhauls are
//! active), time windows are drawn so the round trip `(0, i, 0)` always fits
//! the horizon, and the route-length limit is drawn above the longest depot
//! round trip. Each attribute family uses its own ChaCha stream of the seed,
//! so e.g. switching time windows on does not change the demands.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::{DistanceMatrix, Instance, TimeWindows, VariantSpec, HORIZON, MAX_ROUTE_LENGTH};

pub const SERVICE_TIME: (f64, f64) = (0.15, 0.18);
pub const WINDOW_LENGTH: (f64, f64) = (0.18, 0.2);
pub const BACKHAUL_PROBABILITY: f64 = 0.2;
pub const MAX_DEMAND: i32 = 9;
/// Customers closer than this to the depot count as coincident with it.
pub const MIN_DEPOT_DISTANCE: f64 = 1e-9;

const STREAM_COORDS: u64 = 0;
const STREAM_DEMANDS: u64 = 1;
const STREAM_WINDOWS: u64 = 2;
const STREAM_LIMIT: u64 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("customer {0} coincides with the depot")]
    CoincidentCustomer(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Overrides [`capacity_for`].
    pub capacity: Option<u32>,
    pub horizon: f64,
    pub max_route_length: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            capacity: None,
            horizon: HORIZON,
            max_route_length: MAX_ROUTE_LENGTH,
        }
    }
}

/// Vehicle capacity by problem size: 40 at 50 customers, 50 at 100, and
/// `30 + ceil(n / 5)` in between and below, held at 50 beyond 100.
pub fn capacity_for(n: usize) -> u32 {
    if n > 100 {
        50
    } else {
        30 + n.div_ceil(5) as u32
    }
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

pub fn generate_instance(n: usize, spec: VariantSpec, seed: u64) -> Instance {
    generate_with(&GeneratorConfig::default(), n, spec, seed)
}

pub fn generate_with(cfg: &GeneratorConfig, n: usize, spec: VariantSpec, seed: u64) -> Instance {
    assert!(n >= 1, "need at least one customer");
    let coords = gen_coords(n, seed);
    let mut demands = Vec::with_capacity(n + 1);
    demands.push(0);
    demands.extend(gen_demands(n, spec.backhaul, seed));
    let time_windows = spec.time_window.then(|| {
        gen_time_windows_with(&coords, cfg.horizon, seed)
            .expect("coordinates are resampled away from the depot")
    });
    let dist_limit = spec
        .duration_limit
        .then(|| gen_distance_limit_with(&DistanceMatrix::from_coords(&coords), cfg.max_route_length, seed));
    Instance {
        coords,
        demands,
        capacity: cfg.capacity.unwrap_or_else(|| capacity_for(n)),
        time_windows,
        dist_limit,
        variant: spec,
    }
}

/// Depot plus `n` customers; customers landing on the depot are redrawn.
pub fn gen_coords(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = stream(seed, STREAM_COORDS);
    let depot = [rng.gen::<f64>(), rng.gen::<f64>()];
    let mut coords = vec![depot];
    while coords.len() <= n {
        let p = [rng.gen::<f64>(), rng.gen::<f64>()];
        let d = ((p[0] - depot[0]).powi(2) + (p[1] - depot[1]).powi(2)).sqrt();
        if d >= MIN_DEPOT_DISTANCE {
            coords.push(p);
        }
    }
    coords
}

/// Signed customer demands (depot excluded).
pub fn gen_demands(n: usize, backhaul_active: bool, seed: u64) -> Vec<i32> {
    let mut rng = stream(seed, STREAM_DEMANDS);
    let linehaul: Vec<i32> = (0..n).map(|_| rng.gen_range(1..=MAX_DEMAND)).collect();
    if !backhaul_active {
        return linehaul;
    }
    let backhaul: Vec<i32> = (0..n).map(|_| rng.gen_range(1..=MAX_DEMAND)).collect();
    (0..n)
        .map(|i| {
            let y: f64 = rng.gen();
            if y >= BACKHAUL_PROBABILITY {
                linehaul[i]
            } else {
                -backhaul[i]
            }
        })
        .collect()
}

/// Latest admissible scaled window start, `(T - s - dt) / d - 1`.
pub fn window_start_upper(d0: f64, service: f64, len: f64, horizon: f64) -> f64 {
    (horizon - service - len) / d0 - 1.0
}

/// `e = (1 + (e_up - 1) y) d` and `l = e + dt`, with `l` nudged down if
/// rounding pushed the round trip past the horizon.
pub fn window_for(d0: f64, service: f64, len: f64, y: f64, horizon: f64) -> (f64, f64) {
    let up = window_start_upper(d0, service, len, horizon);
    let mut e = (1.0 + (up - 1.0) * y) * d0;
    let mut l = e + len;
    if l + service + d0 > horizon {
        l = horizon - service - d0;
        while l + service + d0 > horizon {
            l = l.next_down();
        }
        e = l - len;
    }
    (e, l)
}

pub fn gen_time_windows(coords: &[[f64; 2]], seed: u64) -> Result<TimeWindows, GenerateError> {
    gen_time_windows_with(coords, HORIZON, seed)
}

pub fn gen_time_windows_with(coords: &[[f64; 2]], horizon: f64, seed: u64) -> Result<TimeWindows, GenerateError> {
    let mut rng = stream(seed, STREAM_WINDOWS);
    let dist = DistanceMatrix::from_coords(coords);
    let n1 = coords.len();
    let mut tw = TimeWindows {
        start: vec![0.0; n1],
        end: vec![horizon; n1],
        service: vec![0.0; n1],
    };
    for i in 1..n1 {
        let d0 = dist.get(0, i);
        if d0 < MIN_DEPOT_DISTANCE {
            return Err(GenerateError::CoincidentCustomer(i));
        }
        let s = rng.gen_range(SERVICE_TIME.0..=SERVICE_TIME.1);
        let len = rng.gen_range(WINDOW_LENGTH.0..=WINDOW_LENGTH.1);
        let y: f64 = rng.gen();
        let (e, l) = window_for(d0, s, len, y, horizon);
        tw.start[i] = e;
        tw.end[i] = l;
        tw.service[i] = s;
    }
    Ok(tw)
}

pub fn gen_distance_limit(dist: &DistanceMatrix, seed: u64) -> f64 {
    gen_distance_limit_with(dist, MAX_ROUTE_LENGTH, seed)
}

/// `rho ~ U(2 max_i d(0, i), rho_max)`.
pub fn gen_distance_limit_with(dist: &DistanceMatrix, max_len: f64, seed: u64) -> f64 {
    let mut rng = stream(seed, STREAM_LIMIT);
    let lo = 2.0 * dist.max_from_depot();
    if lo >= max_len {
        return lo;
    }
    rng.gen_range(lo..=max_len)
}
