use thiserror::Error;

use crate::DistanceMatrix;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StructureError {
    #[error("empty sequence")]
    Empty,
    #[error("sequence must start at the depot")]
    NoLeadingDepot,
    #[error("consecutive depot visits at position {0}")]
    ConsecutiveDepots(usize),
    #[error("node {node} at position {pos} is out of range")]
    UnknownNode { pos: usize, node: usize },
}

/// A depot-delimited visiting sequence with its travel cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Starts and ends at the depot, e.g. `0 3 1 0 2 0`.
    pub sequence: Vec<usize>,
    pub cost: f64,
    pub routes: Vec<Vec<usize>>,
}

impl Solution {
    /// Builds a solution from a sequence, computing routes and cost.
    /// A missing trailing depot is appended.
    pub fn from_sequence(mut sequence: Vec<usize>, dist: &DistanceMatrix, open: bool) -> Result<Self, StructureError> {
        if sequence.last().is_some_and(|&l| l != 0) {
            sequence.push(0);
        }
        let routes = decompose_routes(&sequence, open)?;
        for (pos, &node) in sequence.iter().enumerate() {
            if node >= dist.len() {
                return Err(StructureError::UnknownNode { pos, node });
            }
        }
        let cost = routes.iter().map(|r| path_length(r, dist)).sum();
        Ok(Self { sequence, cost, routes })
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }
}

/// Sum of edge lengths along `path`.
pub fn path_length(path: &[usize], dist: &DistanceMatrix) -> f64 {
    path.windows(2).map(|w| dist.get(w[0], w[1])).sum()
}

/// Travel cost of a depot-delimited sequence; with `open`, the legs that
/// return to the depot are free.
pub fn sequence_cost(sequence: &[usize], dist: &DistanceMatrix, open: bool) -> f64 {
    sequence
        .windows(2)
        .filter(|w| !(open && w[1] == 0))
        .map(|w| dist.get(w[0], w[1]))
        .sum()
}

/// Splits a sequence at depot visits. Closed routes keep both depot ends,
/// `(0, c1, .., cm, 0)`; open routes drop the return, `(0, c1, .., cm)`.
pub fn decompose_routes(sequence: &[usize], open: bool) -> Result<Vec<Vec<usize>>, StructureError> {
    match sequence.first() {
        None => return Err(StructureError::Empty),
        Some(&f) if f != 0 => return Err(StructureError::NoLeadingDepot),
        _ => {}
    }
    let mut routes = Vec::new();
    let mut cur = vec![0];
    for (pos, &node) in sequence.iter().enumerate().skip(1) {
        if node == 0 {
            if cur.len() == 1 {
                return Err(StructureError::ConsecutiveDepots(pos));
            }
            if !open {
                cur.push(0);
            }
            routes.push(std::mem::replace(&mut cur, vec![0]));
        } else {
            cur.push(node);
        }
    }
    if cur.len() > 1 {
        routes.push(cur);
    }
    Ok(routes)
}
