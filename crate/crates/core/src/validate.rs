//! Checks a finished solution against the true problem constraints.
//!
//! This re-simulates every route from scratch and does not share code with
//! the masking logic in [`crate::env`].

use std::fmt;

use crate::solution::{decompose_routes, sequence_cost};
use crate::{Instance, Solution};

/// Slack for floating-point comparisons.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Structure(String),
    UnknownNode(usize),
    Revisit(usize),
    Missing(usize),
    LinehaulCapacity { route: usize, load: i64 },
    BackhaulCapacity { route: usize, load: i64 },
    BackhaulBeforeLinehaul { route: usize, node: usize },
    TimeWindow { route: usize, node: usize, finish: f64, end: f64 },
    Horizon { route: usize, arrival: f64 },
    RouteLength { route: usize, length: f64 },
    CostMismatch { reported: f64, actual: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Structure(m) => write!(f, "malformed sequence: {m}"),
            Violation::UnknownNode(i) => write!(f, "node {i} does not exist"),
            Violation::Revisit(i) => write!(f, "customer {i} visited more than once"),
            Violation::Missing(i) => write!(f, "customer {i} never visited"),
            Violation::LinehaulCapacity { route, load } => write!(f, "route {route}: delivery load {load} over capacity"),
            Violation::BackhaulCapacity { route, load } => write!(f, "route {route}: pickup load {load} over capacity"),
            Violation::BackhaulBeforeLinehaul { route, node } => {
                write!(f, "route {route}: delivery {node} after a pickup")
            }
            Violation::TimeWindow { route, node, finish, end } => {
                write!(f, "route {route}: node {node} served until {finish}, window ends {end}")
            }
            Violation::Horizon { route, arrival } => write!(f, "route {route}: back at depot at {arrival}"),
            Violation::RouteLength { route, length } => write!(f, "route {route}: length {length} over limit"),
            Violation::CostMismatch { reported, actual } => write!(f, "reported cost {reported}, actual {actual}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    /// Recomputed travel cost.
    pub cost: f64,
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Validates a depot-delimited node sequence.
pub fn validate_sequence(inst: &Instance, seq: &[usize]) -> Validation {
    let n1 = inst.num_nodes();
    let v = inst.variant;
    let mut violations = Vec::new();
    if let Some(&bad) = seq.iter().find(|&&i| i >= n1) {
        return Validation {
            cost: f64::NAN,
            violations: vec![Violation::UnknownNode(bad)],
        };
    }
    let routes = match decompose_routes(seq, v.open_route) {
        Ok(r) => r,
        Err(e) => {
            return Validation {
                cost: f64::NAN,
                violations: vec![Violation::Structure(e.to_string())],
            }
        }
    };

    let mut seen = vec![0usize; n1];
    for &i in seq.iter().filter(|&&i| i != 0) {
        seen[i] += 1;
    }
    for (i, &c) in seen.iter().enumerate().skip(1) {
        match c {
            0 => violations.push(Violation::Missing(i)),
            1 => {}
            _ => violations.push(Violation::Revisit(i)),
        }
    }

    let c = &inst.coords;
    let cap = inst.capacity as i64;
    let tw = inst.time_windows.as_ref().filter(|_| v.time_window);
    let mut cost = 0.0;
    for (r, route) in routes.iter().enumerate() {
        let customers: Vec<usize> = route.iter().copied().filter(|&i| i != 0).collect();
        let delivered: i64 = customers.iter().map(|&i| inst.demands[i] as i64).filter(|&d| d > 0).sum();
        let picked: i64 = customers.iter().map(|&i| inst.demands[i] as i64).filter(|&d| d < 0).map(|d| -d).sum();
        if delivered > cap {
            violations.push(Violation::LinehaulCapacity { route: r, load: delivered });
        }
        if picked > cap {
            violations.push(Violation::BackhaulCapacity { route: r, load: picked });
        }
        if v.backhaul {
            let mut pickup_seen = false;
            for &i in &customers {
                if inst.demands[i] < 0 {
                    pickup_seen = true;
                } else if pickup_seen {
                    violations.push(Violation::BackhaulBeforeLinehaul { route: r, node: i });
                }
            }
        }

        let mut length = 0.0;
        let mut time = 0.0;
        let mut prev = 0;
        for &i in customers.iter() {
            let leg = euclid(c[prev], c[i]);
            length += leg;
            if let Some(tw) = tw {
                let finish = (time + leg).max(tw.start[i]) + tw.service[i];
                if finish > tw.end[i] + TOLERANCE {
                    violations.push(Violation::TimeWindow {
                        route: r,
                        node: i,
                        finish,
                        end: tw.end[i],
                    });
                }
                time = finish;
            }
            prev = i;
        }
        if !v.open_route {
            let back = euclid(c[prev], c[0]);
            length += back;
            if let Some(tw) = tw {
                let arrival = time + back;
                if arrival > tw.end[0] + TOLERANCE {
                    violations.push(Violation::Horizon { route: r, arrival });
                }
            }
        }
        if v.duration_limit {
            let limit = inst.dist_limit.unwrap_or(f64::INFINITY);
            if length > limit + TOLERANCE {
                violations.push(Violation::RouteLength { route: r, length });
            }
        }
        cost += length;
    }
    Validation { cost, violations }
}

/// Validates a solution and checks its reported cost.
pub fn validate_solution(inst: &Instance, sol: &Solution) -> Validation {
    let mut out = validate_sequence(inst, &sol.sequence);
    if out.cost.is_finite() && (out.cost - sol.cost).abs() > 1e-6 * out.cost.max(1.0) {
        out.violations.push(Violation::CostMismatch {
            reported: sol.cost,
            actual: out.cost,
        });
    }
    out
}

/// Cost of a sequence under the instance's route convention, without checks.
pub fn objective(inst: &Instance, seq: &[usize]) -> f64 {
    sequence_cost(seq, &inst.distance_matrix(), inst.variant.open_route)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{TimeWindows, VariantSpec};

    fn inst(variant: &str) -> Instance {
        Instance {
            coords: vec![[0.0, 0.0], [0.3, 0.0], [0.0, 0.4], [0.5, 0.5]],
            demands: vec![0, 4, 3, 6],
            capacity: 10,
            time_windows: None,
            dist_limit: None,
            variant: variant.parse().unwrap(),
        }
    }

    #[test]
    fn feasible_cvrp() {
        let i = inst("CVRP");
        let v = validate_sequence(&i, &[0, 1, 2, 0, 3, 0]);
        assert!(v.is_feasible(), "{:?}", v.violations);
        let want = 0.3 + 0.5 + 0.4 + 2.0 * 0.5f64.hypot(0.5);
        assert!((v.cost - want).abs() < 1e-12);
    }

    #[test]
    fn each_violation_kind() {
        let i = inst("CVRP");
        let v = validate_sequence(&i, &[0, 1, 2, 3, 0]);
        assert_eq!(v.violations, vec![Violation::LinehaulCapacity { route: 0, load: 13 }]);
        let v = validate_sequence(&i, &[0, 1, 1, 0, 2, 0]);
        assert!(v.violations.contains(&Violation::Revisit(1)));
        assert!(v.violations.contains(&Violation::Missing(3)));
        let v = validate_sequence(&i, &[0, 1, 0, 0, 2, 3, 0]);
        assert!(matches!(v.violations[0], Violation::Structure(_)));
        let v = validate_sequence(&i, &[0, 7, 0]);
        assert_eq!(v.violations, vec![Violation::UnknownNode(7)]);
    }

    #[test]
    fn backhaul_order_and_separate_loads() {
        let mut i = inst("VRPB");
        i.demands = vec![0, 8, -9, 2];
        // 10 delivered and 9 picked up fit separately
        let v = validate_sequence(&i, &[0, 1, 3, 2, 0]);
        assert!(v.is_feasible(), "{:?}", v.violations);
        let v = validate_sequence(&i, &[0, 1, 2, 3, 0]);
        assert_eq!(v.violations, vec![Violation::BackhaulBeforeLinehaul { route: 0, node: 3 }]);
    }

    #[test]
    fn windows_and_horizon() {
        let mut i = inst("VRPTW");
        i.time_windows = Some(TimeWindows {
            start: vec![0.0, 1.0, 0.0, 0.0],
            end: vec![1.8, 1.2, 4.0, 0.8],
            service: vec![0.0, 0.2, 0.1, 0.1],
        });
        // node 3 cannot finish before 0.807 > 0.8
        let v = validate_sequence(&i, &[0, 1, 2, 0, 3, 0]);
        assert!(v.violations.iter().any(|x| matches!(x, Violation::TimeWindow { node: 3, .. })));
        i.time_windows.as_mut().unwrap().end[3] = 4.0;
        // route 0: wait to 1.0, finish 1.2, to 2 at 1.7, finish 1.8, back 2.2 > 1.8
        let v = validate_sequence(&i, &[0, 1, 2, 0, 3, 0]);
        assert_eq!(v.violations.len(), 1);
        assert!(matches!(v.violations[0], Violation::Horizon { route: 0, .. }));
    }

    #[test]
    fn route_length_open_and_closed() {
        let mut i = inst("VRPL");
        i.demands = vec![0, 1, 1, 1];
        i.dist_limit = Some(1.0);
        let v = validate_sequence(&i, &[0, 1, 0, 2, 0, 3, 0]);
        assert_eq!(v.violations.len(), 1);
        assert!(matches!(v.violations[0], Violation::RouteLength { route: 2, .. }));
        i.variant = VariantSpec::new(true, false, true, false);
        let v = validate_sequence(&i, &[0, 1, 0, 2, 0, 3, 0]);
        assert!(v.is_feasible());
        assert!((v.cost - (0.3 + 0.4 + 0.5f64.hypot(0.5))).abs() < 1e-12);
    }
}
