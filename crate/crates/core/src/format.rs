//! Text formats for instances, solutions and reference costs.
//!
//! Instance block:
//!
//! ```text
//! vrp <n> <C> <flags, e.g. 10011>
//! <idx> <x> <y> <demand> [<e> <l> <s>]
//! ...
//! [L <rho>]
//! ```
//!
//! Files may hold several blocks back to back. Floats are written with 17
//! significant digits so they read back bit-exactly.

use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use crate::{Instance, InstanceError, TimeWindows, VariantSpec};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("instance ending at line {line}: {source}")]
    Invalid { line: usize, source: InstanceError },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn syntax(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Syntax { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, FormatError> {
    let tok = tok.ok_or_else(|| syntax(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| syntax(line, format!("bad {what} `{tok}`")))
}

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn instance_to_string(inst: &Instance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "vrp {} {} {}", inst.n(), inst.capacity, inst.variant.bits());
    let tw = inst.time_windows.as_ref();
    for (i, c) in inst.coords.iter().enumerate() {
        let _ = write!(s, "{} {} {} {}", i, f(c[0]), f(c[1]), inst.demands[i]);
        if let Some(tw) = tw {
            let _ = write!(s, " {} {} {}", f(tw.start[i]), f(tw.end[i]), f(tw.service[i]));
        }
        s.push('\n');
    }
    if let Some(rho) = inst.dist_limit {
        let _ = writeln!(s, "L {}", f(rho));
    }
    s
}

pub fn write_instances<W: Write>(mut w: W, insts: &[Instance]) -> io::Result<()> {
    for inst in insts {
        w.write_all(instance_to_string(inst).as_bytes())?;
    }
    Ok(())
}

/// Parses every instance block in `text`.
pub fn parse_instances(text: &str) -> Result<Vec<Instance>, FormatError> {
    let mut out = Vec::new();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    while let Some((ln, header)) = lines.next() {
        let mut tok = header.split_whitespace();
        if tok.next() != Some("vrp") {
            return Err(syntax(ln, "expected `vrp <n> <C> <flags>`"));
        }
        let n: usize = num(tok.next(), ln, "customer count")?;
        let capacity: u32 = num(tok.next(), ln, "capacity")?;
        let flags = tok.next().ok_or_else(|| syntax(ln, "missing flags"))?;
        let variant = VariantSpec::from_bits(flags)
            .ok_or_else(|| syntax(ln, format!("flags `{flags}` must be 5 binary digits starting with 1")))?;

        let mut coords = Vec::with_capacity(n + 1);
        let mut demands = Vec::with_capacity(n + 1);
        let mut tw = variant.time_window.then(|| TimeWindows {
            start: Vec::with_capacity(n + 1),
            end: Vec::with_capacity(n + 1),
            service: Vec::with_capacity(n + 1),
        });
        let mut last = ln;
        for idx in 0..=n {
            let (ln, line) = lines.next().ok_or_else(|| syntax(last + 1, format!("missing node {idx}")))?;
            last = ln;
            let mut tok = line.split_whitespace();
            let i: usize = num(tok.next(), ln, "node index")?;
            if i != idx {
                return Err(syntax(ln, format!("expected node {idx}, found {i}")));
            }
            coords.push([num(tok.next(), ln, "x")?, num(tok.next(), ln, "y")?]);
            demands.push(num(tok.next(), ln, "demand")?);
            if let Some(tw) = tw.as_mut() {
                tw.start.push(num(tok.next(), ln, "window start")?);
                tw.end.push(num(tok.next(), ln, "window end")?);
                tw.service.push(num(tok.next(), ln, "service time")?);
            }
            if let Some(extra) = tok.next() {
                return Err(syntax(ln, format!("unexpected `{extra}`")));
            }
        }
        let mut dist_limit = None;
        if let Some(&(ln, line)) = lines.peek() {
            if let Some(rest) = line.strip_prefix("L ") {
                dist_limit = Some(num(Some(rest.trim()), ln, "distance limit")?);
                last = ln;
                lines.next();
            }
        }
        let inst = Instance {
            coords,
            demands,
            capacity,
            time_windows: tw,
            dist_limit,
            variant,
        };
        inst.check().map_err(|source| FormatError::Invalid { line: last, source })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn read_instances(path: &std::path::Path) -> Result<Vec<Instance>, FormatError> {
    parse_instances(&std::fs::read_to_string(path)?)
}

pub fn solution_to_string(cost: f64, seq: &[usize]) -> String {
    let seq: Vec<String> = seq.iter().map(|i| i.to_string()).collect();
    format!("cost {}\nseq {}\n", f(cost), seq.join(" "))
}

/// Reads `cost <v>` / `seq <indices>`.
pub fn parse_solution(text: &str) -> Result<(f64, Vec<usize>), FormatError> {
    let mut cost = None;
    let mut seq = None;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("cost") {
            cost = Some(num(Some(rest.trim()), ln, "cost")?);
        } else if let Some(rest) = line.strip_prefix("seq") {
            seq = Some(
                rest.split_whitespace()
                    .map(|t| num(Some(t), ln, "node index"))
                    .collect::<Result<Vec<usize>, _>>()?,
            );
        } else if !line.is_empty() {
            return Err(syntax(ln, format!("unexpected `{line}`")));
        }
    }
    let n = text.lines().count();
    Ok((
        cost.ok_or_else(|| syntax(n, "missing `cost` line"))?,
        seq.ok_or_else(|| syntax(n, "missing `seq` line"))?,
    ))
}

/// One row of a reference-cost file.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceCost {
    pub instance_id: String,
    pub cost: f64,
    pub optimal: bool,
}

pub const REFERENCE_HEADER: &str = "instance_id,cost,optimal_flag";

pub fn references_to_string(rows: &[ReferenceCost]) -> String {
    let mut s = format!("{REFERENCE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.instance_id, f(r.cost), u8::from(r.optimal));
    }
    s
}

pub fn parse_references(text: &str) -> Result<Vec<ReferenceCost>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || (ln == 1 && line.starts_with("instance_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(syntax(ln, "expected instance_id,cost,optimal_flag"));
        }
        let optimal = match cols[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(syntax(ln, format!("bad optimal flag `{other}`"))),
        };
        out.push(ReferenceCost {
            instance_id: cols[0].to_string(),
            cost: num(Some(cols[1]), ln, "cost")?,
            optimal,
        });
    }
    Ok(out)
}
