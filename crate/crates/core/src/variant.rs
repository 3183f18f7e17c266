use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Which constraints are active. Capacity is part of every variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct VariantSpec {
    pub open_route: bool,
    pub backhaul: bool,
    pub duration_limit: bool,
    pub time_window: bool,
}

#[derive(Debug, Error)]
#[error("unknown routing variant `{0}`")]
pub struct ParseVariantError(pub String);

impl VariantSpec {
    pub const CVRP: Self = Self::new(false, false, false, false);

    pub const fn new(open_route: bool, backhaul: bool, duration_limit: bool, time_window: bool) -> Self {
        Self {
            open_route,
            backhaul,
            duration_limit,
            time_window,
        }
    }

    pub const fn capacity(&self) -> bool {
        true
    }

    /// All 16 variants, in the conventional table order (CVRP first,
    /// OVRPBLTW last).
    pub fn all() -> [Self; 16] {
        [
            "CVRP", "OVRP", "VRPB", "VRPL", "VRPTW", "OVRPTW", "OVRPB", "OVRPL", "VRPBL", "VRPBTW",
            "VRPLTW", "OVRPBL", "OVRPBTW", "OVRPLTW", "VRPBLTW", "OVRPBLTW",
        ]
        .map(|n| n.parse().expect("static names parse"))
    }

    /// Multi-hot vector ordered `[C, O, B, L, TW]`.
    pub fn encode(&self) -> [f64; 5] {
        let b = |f: bool| if f { 1.0 } else { 0.0 };
        [
            1.0,
            b(self.open_route),
            b(self.backhaul),
            b(self.duration_limit),
            b(self.time_window),
        ]
    }

    /// 4-bit id over the optional flags, `O | B << 1 | L << 2 | TW << 3`.
    pub fn index(&self) -> usize {
        self.open_route as usize
            | (self.backhaul as usize) << 1
            | (self.duration_limit as usize) << 2
            | (self.time_window as usize) << 3
    }

    /// Five-character bit string, same order as [`encode`](Self::encode).
    pub fn bits(&self) -> String {
        self.encode().iter().map(|v| if *v > 0.0 { '1' } else { '0' }).collect()
    }

    pub fn from_bits(s: &str) -> Option<Self> {
        let b: Vec<bool> = s
            .chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<_>>()?;
        match b.as_slice() {
            [true, o, bk, l, tw] => Some(Self::new(*o, *bk, *l, *tw)),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        let mut s = String::new();
        if self.open_route {
            s.push('O');
        }
        s.push_str("VRP");
        if self.backhaul {
            s.push('B');
        }
        if self.duration_limit {
            s.push('L');
        }
        if self.time_window {
            s.push_str("TW");
        }
        if s == "VRP" {
            "CVRP".into()
        } else {
            s
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for VariantSpec {
    type Err = ParseVariantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseVariantError(s.to_string());
        let upper = s.trim().to_ascii_uppercase();
        if upper == "CVRP" {
            return Ok(Self::CVRP);
        }
        let (open, rest) = match upper.strip_prefix('O') {
            Some(r) => (true, r),
            None => (false, upper.as_str()),
        };
        let mut rest = rest.strip_prefix("VRP").ok_or_else(err)?;
        let mut v = Self {
            open_route: open,
            ..Self::default()
        };
        if let Some(r) = rest.strip_prefix('B') {
            v.backhaul = true;
            rest = r;
        }
        if let Some(r) = rest.strip_prefix('L') {
            v.duration_limit = true;
            rest = r;
        }
        if let Some(r) = rest.strip_prefix("TW") {
            v.time_window = true;
            rest = r;
        }
        if !rest.is_empty() || (!open && v == Self::CVRP) {
            return Err(err());
        }
        Ok(v)
    }
}
