//! Reference solvers: exhaustive search for tiny instances, and a
//! nearest-neighbour construction with intra-route 2-opt.

use thiserror::Error;

use crate::solution::sequence_cost;
use crate::validate::{validate_sequence, TOLERANCE};
use crate::{DistanceMatrix, Env, EnvError, Instance, Solution};

/// Largest instance [`exact_solve`] accepts.
pub const EXACT_MAX_CUSTOMERS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("exact search is limited to {EXACT_MAX_CUSTOMERS} customers, got {0}")]
    TooLarge(usize),
    #[error("instance has no feasible solution")]
    Infeasible,
    #[error("customer {0} cannot be reached from the depot")]
    Unreachable(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult {
    pub solution: Solution,
    /// Only the exact solver sets this.
    pub optimal: bool,
    pub nodes_explored: u64,
}

/// Cost of one route `0 -> customers -> (0)`, or `None` if the route
/// breaks a constraint. `prefix_ok` reports whether extending the route
/// could still succeed.
struct RouteCheck {
    cost: Option<f64>,
    prefix_ok: bool,
}

fn check_route(inst: &Instance, dist: &DistanceMatrix, customers: &[usize]) -> RouteCheck {
    let v = inst.variant;
    let cap = inst.capacity as i64;
    let tw = inst.time_windows.as_ref().filter(|_| v.time_window);
    let (mut delivered, mut picked) = (0i64, 0i64);
    let mut pickup_seen = false;
    let (mut len, mut time) = (0.0, 0.0);
    let mut prev = 0;
    for &i in customers {
        let d = inst.demands[i] as i64;
        if d > 0 {
            if pickup_seen {
                return RouteCheck { cost: None, prefix_ok: false };
            }
            delivered += d;
        } else {
            pickup_seen = true;
            picked -= d;
        }
        if delivered > cap || picked > cap {
            return RouteCheck { cost: None, prefix_ok: false };
        }
        let leg = dist.get(prev, i);
        len += leg;
        if let Some(tw) = tw {
            time = (time + leg).max(tw.start[i]) + tw.service[i];
            if time > tw.end[i] + TOLERANCE {
                return RouteCheck { cost: None, prefix_ok: false };
            }
        }
        prev = i;
    }
    if !v.open_route {
        let back = dist.get(prev, 0);
        len += back;
        if let Some(tw) = tw {
            if time + back > tw.end[0] + TOLERANCE {
                return RouteCheck { cost: None, prefix_ok: true };
            }
        }
    }
    if v.duration_limit && len > inst.dist_limit.unwrap_or(f64::INFINITY) + TOLERANCE {
        return RouteCheck { cost: None, prefix_ok: true };
    }
    RouteCheck { cost: Some(len), prefix_ok: true }
}

/// Minimum-cost split of a fixed customer order into consecutive routes.
/// Returns the cost and the route start positions.
fn best_split(
    inst: &Instance,
    dist: &DistanceMatrix,
    perm: &[usize],
    explored: &mut u64,
) -> Option<(f64, Vec<usize>)> {
    let m = perm.len();
    let mut best = vec![f64::INFINITY; m + 1];
    let mut from = vec![usize::MAX; m + 1];
    best[0] = 0.0;
    for i in 0..m {
        if !best[i].is_finite() {
            continue;
        }
        for j in i + 1..=m {
            *explored += 1;
            let rc = check_route(inst, dist, &perm[i..j]);
            if let Some(c) = rc.cost {
                if best[i] + c < best[j] {
                    best[j] = best[i] + c;
                    from[j] = i;
                }
            }
            if !rc.prefix_ok {
                break;
            }
        }
    }
    if !best[m].is_finite() {
        return None;
    }
    let mut starts = Vec::new();
    let mut j = m;
    while j > 0 {
        j = from[j];
        starts.push(j);
    }
    starts.reverse();
    Some((best[m], starts))
}

/// Next lexicographic permutation in place; false once wrapped.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("pivot has a successor");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Provably optimal solution by trying every customer order with the best
/// route split for each.
pub fn exact_solve(inst: &Instance) -> Result<BaselineResult, BaselineError> {
    let n = inst.n();
    if n > EXACT_MAX_CUSTOMERS {
        return Err(BaselineError::TooLarge(n));
    }
    let dist = inst.distance_matrix();
    let mut perm: Vec<usize> = (1..=n).collect();
    let mut explored = 0u64;
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    loop {
        if let Some((c, starts)) = best_split(inst, &dist, &perm, &mut explored) {
            if best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, perm.clone(), starts));
            }
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let (_, perm, starts) = best.ok_or(BaselineError::Infeasible)?;
    let mut seq = vec![0];
    for (k, &s) in starts.iter().enumerate() {
        let e = starts.get(k + 1).copied().unwrap_or(perm.len());
        seq.extend_from_slice(&perm[s..e]);
        seq.push(0);
    }
    let solution = Solution::from_sequence(seq, &dist, inst.variant.open_route).map_err(EnvError::from)?;
    Ok(BaselineResult {
        solution,
        optimal: true,
        nodes_explored: explored,
    })
}

/// Greedy construction: always move to the nearest feasible customer,
/// returning to the depot when none is left.
pub fn nn_construct(inst: &Instance) -> Result<Solution, BaselineError> {
    let env = Env::new(inst);
    let dist = env.dist();
    let mut s = env.initial_state();
    while !s.is_done() {
        let mask = env.feasible_actions(&s);
        let here = s.last_node();
        let next = mask
            .iter_feasible()
            .filter(|&i| i != 0)
            .min_by(|&a, &b| dist.get(here, a).total_cmp(&dist.get(here, b)));
        match next {
            Some(i) => env.step(&mut s, i)?,
            None if mask.feasible[0] => env.step(&mut s, 0)?,
            None => {
                let stuck = (1..inst.num_nodes()).find(|&i| !s.visited(i)).unwrap_or(0);
                return Err(BaselineError::Unreachable(stuck));
            }
        }
    }
    Ok(env.solution(&s)?)
}

/// Intra-route 2-opt: reverse a customer segment whenever that strictly
/// shortens the tour and the whole solution still validates. Stops at a
/// local optimum or after `10 n` accepted moves.
pub fn two_opt(sol: &Solution, inst: &Instance) -> Solution {
    let dist = inst.distance_matrix();
    let open = inst.variant.open_route;
    let mut seq = sol.sequence.clone();
    let mut cost = sequence_cost(&seq, &dist, open);
    let cap = 10 * inst.n();
    let mut moves = 0;
    'outer: while moves < cap {
        // route bounds as [first customer, last customer] positions
        let mut bounds = Vec::new();
        let mut start = None;
        for (p, &node) in seq.iter().enumerate() {
            match (node, start) {
                (0, Some(s)) => {
                    bounds.push((s, p - 1));
                    start = None;
                }
                (0, None) => {}
                (_, None) => start = Some(p),
                _ => {}
            }
        }
        if let Some(s) = start {
            bounds.push((s, seq.len() - 1));
        }
        for &(a, b) in &bounds {
            for i in a..b {
                for j in i + 1..=b {
                    let mut cand = seq.clone();
                    cand[i..=j].reverse();
                    let c = sequence_cost(&cand, &dist, open);
                    if c < cost - 1e-12 && validate_sequence(inst, &cand).is_feasible() {
                        seq = cand;
                        cost = c;
                        moves += 1;
                        continue 'outer;
                    }
                }
            }
        }
        break;
    }
    Solution::from_sequence(seq, &dist, open).expect("reversals keep the sequence well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{generate_instance, validate_solution, VariantSpec};

    fn one_customer(open: bool) -> Instance {
        Instance {
            coords: vec![[0.0, 0.0], [0.3, 0.0]],
            demands: vec![0, 1],
            capacity: 10,
            time_windows: None,
            dist_limit: None,
            variant: VariantSpec::new(open, false, false, false),
        }
    }

    #[test]
    fn single_customer_costs() {
        let r = exact_solve(&one_customer(false)).unwrap();
        assert!((r.solution.cost - 0.6).abs() < 1e-15);
        assert!(r.optimal);
        let r = exact_solve(&one_customer(true)).unwrap();
        assert!((r.solution.cost - 0.3).abs() < 1e-15);
    }

    #[test]
    fn refuses_large_instances() {
        let inst = generate_instance(9, VariantSpec::CVRP, 0);
        assert_eq!(exact_solve(&inst), Err(BaselineError::TooLarge(9)));
    }

    #[test]
    fn permutations_are_all_visited() {
        let mut p = vec![1, 2, 3, 4];
        let mut count = 1;
        while next_permutation(&mut p) {
            count += 1;
        }
        assert_eq!(count, 24);
    }

    #[test]
    fn heuristics_are_valid_and_not_better_than_exact() {
        for v in VariantSpec::all() {
            for seed in 0..3 {
                let inst = generate_instance(6, v, seed);
                let ex = exact_solve(&inst).unwrap();
                assert!(validate_solution(&inst, &ex.solution).is_feasible(), "{v}");
                let nn = nn_construct(&inst).unwrap();
                assert!(validate_solution(&inst, &nn).is_feasible(), "{v}");
                let opt = two_opt(&nn, &inst);
                assert!(validate_solution(&inst, &opt).is_feasible(), "{v}");
                assert!(opt.cost <= nn.cost + 1e-12);
                assert!(ex.solution.cost <= opt.cost + 1e-9, "{v} seed {seed}");
                assert_eq!(nn, nn_construct(&inst).unwrap());
            }
        }
    }

    #[test]
    fn optimal_input_is_unchanged_by_two_opt() {
        let inst = generate_instance(5, VariantSpec::CVRP, 11);
        let ex = exact_solve(&inst).unwrap();
        assert_eq!(two_opt(&ex.solution, &inst).sequence, ex.solution.sequence);
    }
}
