//! Test oracles written without reference to the library's own bookkeeping.
#![allow(dead_code)]

use cada_core::{Env, Instance, State};
use rand::Rng;

fn d(inst: &Instance, a: usize, b: usize) -> f64 {
    let (p, q) = (inst.coords[a], inst.coords[b]);
    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
    (dx * dx + dy * dy).sqrt()
}

/// Feasibility of every node after `actions` (initial depot implicit),
/// rebuilt from the action history alone.
pub fn oracle_mask(inst: &Instance, actions: &[usize]) -> Vec<bool> {
    let v = inst.variant;
    let n1 = inst.coords.len();
    let last = actions.last().copied().unwrap_or(0);
    let route_start = actions.iter().rposition(|&a| a == 0).map_or(0, |p| p + 1);
    let route = &actions[route_start..];

    let mut visited = vec![false; n1];
    for &a in actions {
        visited[a] = true;
    }
    let linehaul_left = (1..n1).any(|i| !visited[i] && inst.demands[i] > 0);

    let delivered: i64 = route.iter().map(|&i| inst.demands[i] as i64).filter(|&x| x > 0).sum();
    let picked: i64 = route.iter().map(|&i| inst.demands[i] as i64).filter(|&x| x < 0).map(|x| -x).sum();

    let tw = inst.time_windows.as_ref().filter(|_| v.time_window);
    let mut clock = 0.0f64;
    let mut left = match (v.duration_limit, inst.dist_limit) {
        (true, Some(r)) => r,
        _ => 3.0,
    };
    let mut prev = 0;
    for &i in route {
        let leg = d(inst, prev, i);
        clock = match tw {
            Some(tw) => (clock + leg).max(tw.start[i]) + tw.service[i],
            None => clock + leg,
        };
        if v.duration_limit {
            left -= leg;
        }
        prev = i;
    }

    let cap = inst.capacity as i64;
    (0..n1)
        .map(|i| {
            if i == 0 {
                return last != 0;
            }
            if visited[i] {
                return false;
            }
            let leg = d(inst, last, i);
            let home = d(inst, i, 0);
            if let Some(tw) = tw {
                if !v.open_route && clock + leg + tw.service[i] + home > tw.end[0] {
                    return false;
                }
                if clock + leg + tw.service[i] > tw.end[i] {
                    return false;
                }
            }
            if v.duration_limit {
                let need = if v.open_route { leg } else { leg + home };
                if left < need {
                    return false;
                }
            }
            let q = inst.demands[i] as i64;
            if q < 0 && v.backhaul && linehaul_left {
                return false;
            }
            if q > 0 { q <= cap - delivered } else { -q <= cap - picked }
        })
        .collect()
}

/// Walks `steps` uniformly random feasible actions (or until done).
pub fn random_walk<R: Rng>(env: &Env, rng: &mut R, steps: usize) -> State {
    let mut s = env.initial_state();
    for _ in 0..steps {
        if s.is_done() {
            break;
        }
        let m: Vec<usize> = env.feasible_actions(&s).iter_feasible().collect();
        assert!(!m.is_empty(), "empty mask in a reachable state");
        env.step(&mut s, m[rng.gen_range(0..m.len())]).unwrap();
    }
    s
}

/// Length of one route if feasible, simulated from its node list.
fn route_cost(inst: &Instance, route: &[usize]) -> Option<f64> {
    let v = inst.variant;
    let mut load_out = 0i64;
    let mut load_in = 0i64;
    let mut t = 0.0;
    let mut len = 0.0;
    let mut at = 0;
    let mut in_pickups = false;
    for &c in route {
        let q = inst.demands[c] as i64;
        if q < 0 {
            in_pickups = true;
            load_in -= q;
        } else if in_pickups {
            return None;
        } else {
            load_out += q;
        }
        len += d(inst, at, c);
        if v.time_window {
            let tw = inst.time_windows.as_ref().unwrap();
            t = f64::max(t + d(inst, at, c), tw.start[c]) + tw.service[c];
            if t > tw.end[c] + 1e-9 {
                return None;
            }
        }
        at = c;
    }
    if load_out > inst.capacity as i64 || load_in > inst.capacity as i64 {
        return None;
    }
    if !v.open_route {
        len += d(inst, at, 0);
        if v.time_window && t + d(inst, at, 0) > inst.time_windows.as_ref().unwrap().end[0] + 1e-9 {
            return None;
        }
    }
    if v.duration_limit && len > inst.dist_limit.unwrap() + 1e-9 {
        return None;
    }
    Some(len)
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(k);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Optimum over every partition of the customers into ordered routes.
pub fn brute_force_optimum(inst: &Instance) -> Option<f64> {
    fn go(inst: &Instance, unassigned: &[usize]) -> Option<f64> {
        let Some((&first, rest)) = unassigned.split_first() else {
            return Some(0.0);
        };
        let mut best: Option<f64> = None;
        // every subset of `rest` joins `first` in its route
        for mask in 0u32..(1 << rest.len()) {
            let mut members = vec![first];
            let mut others = Vec::new();
            for (b, &c) in rest.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    members.push(c);
                } else {
                    others.push(c);
                }
            }
            let Some(tail) = go(inst, &others) else { continue };
            for order in permutations(&members) {
                if let Some(c) = route_cost(inst, &order) {
                    let total = c + tail;
                    if best.is_none_or(|b| total < b) {
                        best = Some(total);
                    }
                }
            }
        }
        best
    }
    let customers: Vec<usize> = (1..inst.coords.len()).collect();
    go(inst, &customers)
}
