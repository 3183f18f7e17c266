//! Step-wise solution construction.
//!
//! A state tracks the partial sequence, the loads of the current vehicle,
//! its clock and its remaining route length. [`Env::feasible_actions`]
//! applies the five masking rules:
//!
//! 1. customers are visited once; the depot cannot follow the depot;
//! 2. closed routes must be able to get back: with time windows,
//!    `z + d(cur, i) + s_i + d(i, 0) <= T`; with a length limit,
//!    `left >= d(cur, i) + d(i, 0)` (open routes only need `left >= d(cur, i)`);
//! 3. with time windows, `z + d(cur, i) + s_i <= l_i`;
//! 4. with backhauls, pickups wait until every delivery is done;
//! 5. demand must fit the remaining linehaul / backhaul capacity.
//!
//! Arriving before a window opens waits for it. Returning to the depot
//! starts a fresh vehicle at time 0 with a full route-length budget.

use thiserror::Error;

use crate::solution::{sequence_cost, Solution, StructureError};
use crate::{DistanceMatrix, Instance, MAX_ROUTE_LENGTH};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} violates masking rule {rule}")]
    Infeasible { action: usize, rule: u8 },
    #[error("action {0} is not a node of this instance")]
    UnknownNode(usize),
    #[error("episode already finished")]
    Terminal,
    #[error("no feasible action in a non-terminal state")]
    NoFeasibleAction,
    #[error("episode is not finished")]
    Unfinished,
    #[error(transparent)]
    Structure(#[from] StructureError),
}

/// One decoding trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    actions: Vec<usize>,
    visited: Vec<bool>,
    linehaul_load: i64,
    backhaul_load: i64,
    clock: f64,
    route_len_left: f64,
    open: bool,
    last_node: usize,
    done: bool,
    unvisited: usize,
    unvisited_linehaul: usize,
}

impl State {
    /// Actions taken so far; the initial depot departure is implicit.
    pub fn partial_solution(&self) -> &[usize] {
        &self.actions
    }

    /// Full sequence including the leading depot.
    pub fn sequence(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.actions.len() + 1);
        s.push(0);
        s.extend_from_slice(&self.actions);
        s
    }

    pub fn visited(&self, i: usize) -> bool {
        self.visited[i]
    }

    pub fn last_node(&self) -> usize {
        self.last_node
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn route_len_left(&self) -> f64 {
        self.route_len_left
    }

    pub fn open_flag(&self) -> bool {
        self.open
    }

    /// Raw delivered quantity on the current route.
    pub fn linehaul_load(&self) -> i64 {
        self.linehaul_load
    }

    /// Raw picked-up quantity on the current route.
    pub fn backhaul_load(&self) -> i64 {
        self.backhaul_load
    }

    pub fn unvisited(&self) -> usize {
        self.unvisited
    }
}

/// Per-node feasibility of the next action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionMask {
    pub feasible: Vec<bool>,
}

impl ActionMask {
    pub fn count(&self) -> usize {
        self.feasible.iter().filter(|f| **f).count()
    }

    pub fn iter_feasible(&self) -> impl Iterator<Item = usize> + '_ {
        self.feasible.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i)
    }
}

/// The construction MDP over one instance.
#[derive(Clone, Debug)]
pub struct Env<'a> {
    inst: &'a Instance,
    dist: DistanceMatrix,
}

impl<'a> Env<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        Self {
            inst,
            dist: inst.distance_matrix(),
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn dist(&self) -> &DistanceMatrix {
        &self.dist
    }

    fn full_route_len(&self) -> f64 {
        match (self.inst.variant.duration_limit, self.inst.dist_limit) {
            (true, Some(r)) => r,
            _ => MAX_ROUTE_LENGTH,
        }
    }

    pub fn initial_state(&self) -> State {
        let n1 = self.inst.num_nodes();
        let linehauls = self.inst.demands.iter().skip(1).filter(|d| **d > 0).count();
        State {
            actions: Vec::with_capacity(2 * n1),
            visited: vec![false; n1],
            linehaul_load: 0,
            backhaul_load: 0,
            clock: 0.0,
            route_len_left: self.full_route_len(),
            open: self.inst.variant.open_route,
            last_node: 0,
            done: n1 <= 1,
            unvisited: n1 - 1,
            unvisited_linehaul: linehauls,
        }
    }

    pub fn reset(&self, n_starts: usize) -> Vec<State> {
        vec![self.initial_state(); n_starts.max(1)]
    }

    /// First masking rule that excludes `i`, if any.
    pub fn violated_rule(&self, s: &State, i: usize) -> Option<u8> {
        let inst = self.inst;
        let v = inst.variant;
        if i == 0 {
            return (s.last_node == 0).then_some(1);
        }
        if s.visited[i] {
            return Some(1);
        }
        let d = self.dist.get(s.last_node, i);
        let back = self.dist.get(i, 0);
        let tw = inst.time_windows.as_ref().filter(|_| v.time_window);
        if !v.open_route {
            if let Some(tw) = tw {
                if s.clock + d + tw.service[i] + back > tw.end[0] {
                    return Some(2);
                }
            }
            if v.duration_limit && s.route_len_left < d + back {
                return Some(2);
            }
        } else if v.duration_limit && s.route_len_left < d {
            return Some(2);
        }
        if let Some(tw) = tw {
            if s.clock + d + tw.service[i] > tw.end[i] {
                return Some(3);
            }
        }
        let demand = inst.demands[i] as i64;
        let cap = inst.capacity as i64;
        if v.backhaul && demand < 0 && s.unvisited_linehaul > 0 {
            return Some(4);
        }
        if (demand > 0 && demand > cap - s.linehaul_load) || (demand < 0 && -demand > cap - s.backhaul_load) {
            return Some(5);
        }
        None
    }

    pub fn feasible_actions(&self, s: &State) -> ActionMask {
        ActionMask {
            feasible: (0..self.inst.num_nodes())
                .map(|i| self.violated_rule(s, i).is_none())
                .collect(),
        }
    }

    pub fn step(&self, s: &mut State, action: usize) -> Result<(), EnvError> {
        if s.done {
            return Err(EnvError::Terminal);
        }
        if action >= self.inst.num_nodes() {
            return Err(EnvError::UnknownNode(action));
        }
        if let Some(rule) = self.violated_rule(s, action) {
            return Err(EnvError::Infeasible { action, rule });
        }
        s.actions.push(action);
        if action == 0 {
            s.linehaul_load = 0;
            s.backhaul_load = 0;
            s.clock = 0.0;
            s.route_len_left = self.full_route_len();
            s.last_node = 0;
            s.done = s.unvisited == 0;
            return Ok(());
        }
        let inst = self.inst;
        let d = self.dist.get(s.last_node, action);
        match inst.time_windows.as_ref().filter(|_| inst.variant.time_window) {
            Some(tw) => s.clock = (s.clock + d).max(tw.start[action]) + tw.service[action],
            None => s.clock += d,
        }
        if inst.variant.duration_limit {
            s.route_len_left -= d;
        }
        let demand = inst.demands[action] as i64;
        if demand >= 0 {
            s.linehaul_load += demand;
            s.unvisited_linehaul -= 1;
        } else {
            s.backhaul_load -= demand;
        }
        s.visited[action] = true;
        s.unvisited -= 1;
        s.last_node = action;
        if s.open && s.unvisited == 0 {
            // trailing depot for a uniform sequence shape; costs nothing
            s.actions.push(0);
            s.last_node = 0;
            s.done = true;
        }
        Ok(())
    }

    /// Context scalars `[c_l, c_b, z, l, o]` for the decoder.
    pub fn context_features(&self, s: &State) -> [f64; 5] {
        let cap = self.inst.capacity as f64;
        [
            1.0 - s.linehaul_load as f64 / cap,
            1.0 - s.backhaul_load as f64 / cap,
            s.clock,
            s.route_len_left,
            if s.open { 1.0 } else { 0.0 },
        ]
    }

    pub fn solution(&self, s: &State) -> Result<Solution, EnvError> {
        if !s.done {
            return Err(EnvError::Unfinished);
        }
        Ok(Solution::from_sequence(s.sequence(), &self.dist, self.inst.variant.open_route)?)
    }

    /// Negative travel length; open routes do not pay for returning.
    pub fn reward(&self, sol: &Solution) -> f64 {
        -sequence_cost(&sol.sequence, &self.dist, self.inst.variant.open_route)
    }
}
