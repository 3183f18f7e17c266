use thiserror::Error;

use crate::VariantSpec;

/// Per-node time windows and service times; index 0 is the depot.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeWindows {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub service: Vec<f64>,
}

/// A routing problem. Node 0 is the depot; demands are raw integers,
/// positive for linehaul (delivery) and negative for backhaul (pickup).
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub coords: Vec<[f64; 2]>,
    pub demands: Vec<i32>,
    pub capacity: u32,
    /// Present iff the variant has time windows.
    pub time_windows: Option<TimeWindows>,
    /// Present iff the variant has a duration limit.
    pub dist_limit: Option<f64>,
    pub variant: VariantSpec,
}

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("instance has no nodes")]
    Empty,
    #[error("{what} has {got} entries, expected {want}")]
    Length { what: &'static str, got: usize, want: usize },
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("depot demand must be 0, got {0}")]
    DepotDemand(i32),
    #[error("customer {0} has zero demand")]
    ZeroDemand(usize),
    #[error("customer {0} has a backhaul demand but the variant has no backhauls")]
    UnexpectedBackhaul(usize),
    #[error("variant {variant} requires {what}")]
    MissingAttribute { variant: VariantSpec, what: &'static str },
    #[error("node {node}: {msg}")]
    BadTimeWindow { node: usize, msg: String },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
}

impl Instance {
    /// Number of customers (nodes excluding the depot).
    pub fn n(&self) -> usize {
        self.coords.len().saturating_sub(1)
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    /// `T`, the closing time of the depot. `None` without time windows.
    pub fn horizon(&self) -> Option<f64> {
        self.time_windows.as_ref().map(|tw| tw.end[0])
    }

    pub fn distance_matrix(&self) -> DistanceMatrix {
        DistanceMatrix::from_coords(&self.coords)
    }

    /// Demands divided by capacity.
    pub fn normalized_demands(&self) -> Vec<f64> {
        let c = self.capacity as f64;
        self.demands.iter().map(|d| *d as f64 / c).collect()
    }

    /// Structural checks shared by all loaders. Generator-specific sampling
    /// bounds are not enforced here so that external instances load.
    pub fn check(&self) -> Result<(), InstanceError> {
        let n1 = self.coords.len();
        if n1 == 0 {
            return Err(InstanceError::Empty);
        }
        if self.demands.len() != n1 {
            return Err(InstanceError::Length {
                what: "demands",
                got: self.demands.len(),
                want: n1,
            });
        }
        if self.capacity == 0 {
            return Err(InstanceError::ZeroCapacity);
        }
        if self.demands[0] != 0 {
            return Err(InstanceError::DepotDemand(self.demands[0]));
        }
        for (i, c) in self.coords.iter().enumerate() {
            if !c[0].is_finite() || !c[1].is_finite() {
                return Err(InstanceError::NonFinite(i));
            }
        }
        for (i, &d) in self.demands.iter().enumerate().skip(1) {
            if d == 0 {
                return Err(InstanceError::ZeroDemand(i));
            }
            if d < 0 && !self.variant.backhaul {
                return Err(InstanceError::UnexpectedBackhaul(i));
            }
        }
        if self.variant.time_window {
            let tw = self.time_windows.as_ref().ok_or(InstanceError::MissingAttribute {
                variant: self.variant,
                what: "time windows",
            })?;
            for (what, v) in [("tw start", &tw.start), ("tw end", &tw.end), ("service", &tw.service)] {
                if v.len() != n1 {
                    return Err(InstanceError::Length { what, got: v.len(), want: n1 });
                }
            }
            if tw.start[0] != 0.0 || tw.service[0] != 0.0 {
                return Err(InstanceError::BadTimeWindow {
                    node: 0,
                    msg: "depot must open at 0 with no service time".into(),
                });
            }
            for i in 0..n1 {
                if !(tw.start[i] <= tw.end[i]) || tw.service[i] < 0.0 {
                    return Err(InstanceError::BadTimeWindow {
                        node: i,
                        msg: format!("[{}, {}] service {}", tw.start[i], tw.end[i], tw.service[i]),
                    });
                }
            }
        }
        if self.variant.duration_limit {
            match self.dist_limit {
                Some(r) if r.is_finite() && r > 0.0 => {}
                _ => {
                    return Err(InstanceError::MissingAttribute {
                        variant: self.variant,
                        what: "a positive distance limit",
                    })
                }
            }
        }
        Ok(())
    }
}

/// Symmetric Euclidean distances with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_coords(coords: &[[f64; 2]]) -> Self {
        let n = coords.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                let v = (dx * dx + dy * dy).sqrt();
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// `max_i d(0, i)`.
    pub fn max_from_depot(&self) -> f64 {
        self.row(0).iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_distances() {
        let d = DistanceMatrix::from_coords(&[[0.0, 0.0], [0.0, 1.0]]);
        assert_eq!(d.get(0, 1), 1.0);
        let s = 0.5;
        let d = DistanceMatrix::from_coords(&[[0.0, 0.0], [0.6 * s, 0.8 * s]]);
        assert!((d.get(0, 1) - s).abs() < 1e-15);
    }

    #[test]
    fn normalized_demand_examples() {
        let inst = Instance {
            coords: vec![[0.0, 0.0], [0.1, 0.1], [0.2, 0.2]],
            demands: vec![0, 5, -9],
            capacity: 40,
            time_windows: None,
            dist_limit: None,
            variant: "VRPB".parse().unwrap(),
        };
        assert_eq!(inst.normalized_demands(), vec![0.0, 0.125, -0.225]);
        let inst = Instance { capacity: 50, ..inst };
        assert!((inst.normalized_demands()[2] + 0.18).abs() < 1e-15);
    }

    #[test]
    fn check_catches_backhaul_in_plain_variant() {
        let inst = Instance {
            coords: vec![[0.0, 0.0], [0.1, 0.1]],
            demands: vec![0, -3],
            capacity: 10,
            time_windows: None,
            dist_limit: None,
            variant: VariantSpec::CVRP,
        };
        assert_eq!(inst.check(), Err(InstanceError::UnexpectedBackhaul(1)));
    }

    proptest! {
        #[test]
        fn matrix_is_a_metric(pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..12)) {
            let coords: Vec<[f64; 2]> = pts.iter().map(|(x, y)| [*x, *y]).collect();
            let d = DistanceMatrix::from_coords(&coords);
            let n = coords.len();
            for i in 0..n {
                prop_assert_eq!(d.get(i, i), 0.0);
                for j in 0..n {
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                    for k in 0..n {
                        prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-12);
                    }
                }
            }
        }
    }
}
