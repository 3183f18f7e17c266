//! TSPLIB-style CVRP files.
//!
//! Only the fields needed for capacitated instances are read. Coordinates
//! are kept as written for the objective, which uses the TSPLIB
//! nearest-integer Euclidean distance; the model sees a copy scaled into
//! the unit square.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::{Instance, VariantSpec};

#[derive(Debug, Error)]
pub enum CvrplibError {
    #[error("missing {section} (reached line {line})")]
    Missing { section: &'static str, line: usize },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("all nodes share one coordinate")]
    DegenerateBoundingBox,
    #[error("unsupported EDGE_WEIGHT_TYPE `{0}`")]
    EdgeWeightType(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvrplibInstance {
    pub name: String,
    pub dimension: usize,
    pub capacity: u32,
    /// As written, in file order (node ids `1..=dimension`).
    pub coords: Vec<[f64; 2]>,
    pub demands: Vec<u32>,
    /// Zero-based index of the depot.
    pub depot: usize,
    pub edge_weight_type: String,
    /// Keywords and sections that were skipped.
    pub ignored: Vec<String>,
}

fn syntax(line: usize, msg: impl Into<String>) -> CvrplibError {
    CvrplibError::Syntax { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T, CvrplibError> {
    tok.parse().map_err(|_| syntax(line, format!("bad number `{tok}`")))
}

pub fn parse_cvrplib(text: &str) -> Result<CvrplibInstance, CvrplibError> {
    let lines: Vec<&str> = text.lines().collect();
    let end = lines.len();
    let mut name = None;
    let mut dimension: Option<usize> = None;
    let mut capacity = None;
    let mut edge_weight_type = "EUC_2D".to_string();
    let mut coords: Option<Vec<[f64; 2]>> = None;
    let mut demands: Option<Vec<u32>> = None;
    let mut depot = None;
    let mut ignored = Vec::new();

    let mut i = 0;
    while i < end {
        let ln = i + 1;
        let line = lines[i].trim();
        i += 1;
        if line.is_empty() || line == "EOF" {
            continue;
        }
        let (key, value) = match line.split_once(':') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (line.split_whitespace().next().unwrap_or(""), None),
        };
        match key {
            "NAME" => name = value.map(str::to_string),
            "DIMENSION" => dimension = Some(parse_num(value.unwrap_or(""), ln)?),
            "CAPACITY" => capacity = Some(parse_num(value.unwrap_or(""), ln)?),
            "EDGE_WEIGHT_TYPE" => edge_weight_type = value.unwrap_or("").to_string(),
            "NODE_COORD_SECTION" | "DEMAND_SECTION" => {
                let dim = dimension.ok_or(CvrplibError::Missing {
                    section: "DIMENSION",
                    line: ln,
                })?;
                let mut rows = Vec::with_capacity(dim);
                for k in 0..dim {
                    let rl = i + 1;
                    let row = lines.get(i).ok_or_else(|| syntax(rl, format!("{key} ends after {k} rows")))?;
                    i += 1;
                    let tok: Vec<&str> = row.split_whitespace().collect();
                    let id: usize = parse_num(tok.first().copied().unwrap_or(""), rl)?;
                    if id != k + 1 {
                        return Err(syntax(rl, format!("expected node {}, found {id}", k + 1)));
                    }
                    rows.push((rl, tok));
                }
                if key == "NODE_COORD_SECTION" {
                    coords = Some(
                        rows.iter()
                            .map(|(rl, t)| {
                                if t.len() < 3 {
                                    return Err(syntax(*rl, "expected `id x y`"));
                                }
                                Ok([parse_num(t[1], *rl)?, parse_num(t[2], *rl)?])
                            })
                            .collect::<Result<_, _>>()?,
                    );
                } else {
                    demands = Some(
                        rows.iter()
                            .map(|(rl, t)| parse_num(t.get(1).copied().unwrap_or(""), *rl))
                            .collect::<Result<_, _>>()?,
                    );
                }
            }
            "DEPOT_SECTION" => {
                while i < end {
                    let rl = i + 1;
                    let tok = lines[i].trim();
                    i += 1;
                    if tok.is_empty() {
                        continue;
                    }
                    let id: i64 = parse_num(tok, rl)?;
                    if id == -1 {
                        break;
                    }
                    if depot.is_some() {
                        return Err(syntax(rl, "only one depot is supported"));
                    }
                    if id < 1 {
                        return Err(syntax(rl, format!("bad depot id {id}")));
                    }
                    depot = Some(id as usize - 1);
                }
            }
            other => ignored.push(other.to_string()),
        }
    }

    let missing = |section| CvrplibError::Missing { section, line: end };
    let dimension = dimension.ok_or_else(|| missing("DIMENSION"))?;
    let depot = depot.ok_or_else(|| missing("DEPOT_SECTION"))?;
    if depot >= dimension {
        return Err(syntax(end, format!("depot {} out of range", depot + 1)));
    }
    let demands = demands.ok_or_else(|| missing("DEMAND_SECTION"))?;
    if demands[depot] != 0 {
        return Err(syntax(end, "depot demand must be 0"));
    }
    Ok(CvrplibInstance {
        name: name.ok_or_else(|| missing("NAME"))?,
        dimension,
        capacity: capacity.ok_or_else(|| missing("CAPACITY"))?,
        coords: coords.ok_or_else(|| missing("NODE_COORD_SECTION"))?,
        demands,
        depot,
        edge_weight_type,
        ignored,
    })
}

pub fn read_cvrplib(path: &Path) -> Result<CvrplibInstance, CvrplibError> {
    parse_cvrplib(&std::fs::read_to_string(path)?)
}

/// Writes the fields that [`parse_cvrplib`] reads.
pub fn to_tsplib_string(c: &CvrplibInstance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "NAME : {}", c.name);
    let _ = writeln!(s, "TYPE : CVRP");
    let _ = writeln!(s, "DIMENSION : {}", c.dimension);
    let _ = writeln!(s, "EDGE_WEIGHT_TYPE : {}", c.edge_weight_type);
    let _ = writeln!(s, "CAPACITY : {}", c.capacity);
    s.push_str("NODE_COORD_SECTION\n");
    for (i, p) in c.coords.iter().enumerate() {
        let _ = writeln!(s, "{} {} {}", i + 1, p[0], p[1]);
    }
    s.push_str("DEMAND_SECTION\n");
    for (i, d) in c.demands.iter().enumerate() {
        let _ = writeln!(s, "{} {}", i + 1, d);
    }
    let _ = writeln!(s, "DEPOT_SECTION\n{}\n-1\nEOF", c.depot + 1);
    s
}

/// Maps model node indices back to the original coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleRecord {
    pub min: [f64; 2],
    pub scale: f64,
    /// Original coordinates, reordered so the depot is node 0.
    pub original: Vec<[f64; 2]>,
}

/// TSPLIB `nint` Euclidean distance.
pub fn rounded_euclidean(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).hypot(a[1] - b[1]) + 0.5).floor()
}

impl ScaleRecord {
    /// Closed-route objective on original coordinates.
    pub fn objective(&self, seq: &[usize]) -> f64 {
        seq.windows(2)
            .map(|w| rounded_euclidean(self.original[w[0]], self.original[w[1]]))
            .sum()
    }

    pub fn unscale(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] * self.scale + self.min[0], p[1] * self.scale + self.min[1]]
    }
}

/// Unit-square CVRP instance with the depot moved to index 0. One scale
/// factor is used for both axes.
pub fn cvrplib_to_instance(c: &CvrplibInstance) -> Result<(Instance, ScaleRecord), CvrplibError> {
    if c.edge_weight_type != "EUC_2D" {
        return Err(CvrplibError::EdgeWeightType(c.edge_weight_type.clone()));
    }
    let mut order = vec![c.depot];
    order.extend((0..c.dimension).filter(|&i| i != c.depot));
    let original: Vec<[f64; 2]> = order.iter().map(|&i| c.coords[i]).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &original {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if !(scale > 0.0) {
        return Err(CvrplibError::DegenerateBoundingBox);
    }
    let coords = original
        .iter()
        .map(|p| [((p[0] - lo[0]) / scale).clamp(0.0, 1.0), ((p[1] - lo[1]) / scale).clamp(0.0, 1.0)])
        .collect();
    let demands = order.iter().map(|&i| c.demands[i] as i32).collect();
    let inst = Instance {
        coords,
        demands,
        capacity: c.capacity,
        time_windows: None,
        dist_limit: None,
        variant: VariantSpec::CVRP,
    };
    Ok((
        inst,
        ScaleRecord {
            min: lo,
            scale,
            original,
        },
    ))
}
