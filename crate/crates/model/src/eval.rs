//! Greedy evaluation with geometric and prompt augmentation, gaps, and
//! attention diagnostics.

use std::io::{self, Write};
use std::time::Instant;

use cada_core::validate::objective;
use cada_core::{Instance, VariantSpec};
use cada_tensor::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::par::{map_indexed, ExecMode};
use crate::{Model, ModelError, RolloutOptions};

pub const REPORT_HEADER: &str = "variant,n,mean_obj,gap,time_s";

/// Maps a point through dihedral transform `t` of the unit square,
/// in the order identity, (1-x,y), (x,1-y), (1-x,1-y), (y,x), (1-y,x),
/// (y,1-x), (1-y,1-x).
pub fn transform_point(t: usize, [x, y]: [f64; 2]) -> [f64; 2] {
    match t {
        0 => [x, y],
        1 => [1.0 - x, y],
        2 => [x, 1.0 - y],
        3 => [1.0 - x, 1.0 - y],
        4 => [y, x],
        5 => [1.0 - y, x],
        6 => [y, 1.0 - x],
        7 => [1.0 - y, 1.0 - x],
        _ => panic!("transform index {t} out of range"),
    }
}

pub fn augment8(inst: &Instance) -> Vec<Instance> {
    (0..8)
        .map(|t| Instance {
            coords: inst.coords.iter().map(|&p| transform_point(t, p)).collect(),
            ..inst.clone()
        })
        .collect()
}

/// All 32 binary prompt vectors.
pub fn all_prompts() -> Vec<[f64; 5]> {
    (0..32u32)
        .map(|m| std::array::from_fn(|b| f64::from((m >> (4 - b)) & 1)))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub augment8: bool,
    pub prompt32: bool,
    /// Replaces the sparse top-k at inference.
    pub k: Option<usize>,
    /// Trajectories per instance; `None` means one per customer.
    pub n_starts: Option<usize>,
}

/// Best greedy solution of one instance under the enabled augmentations,
/// scored on the original instance. Returns `(sequence, cost)`.
pub fn solve_instance<T: Real>(model: &Model<T>, inst: &Instance, opts: &EvalOptions) -> Result<(Vec<usize>, f64), ModelError> {
    let views = if opts.augment8 { augment8(inst) } else { vec![inst.clone()] };
    let prompts: Vec<Option<[f64; 5]>> = if opts.prompt32 {
        all_prompts().into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for view in &views {
        for prompt in &prompts {
            let ro = RolloutOptions {
                n_starts: opts.n_starts,
                prompt: *prompt,
                k: opts.k,
                ..RolloutOptions::greedy()
            };
            let r = model.rollout(view, &ro, &mut rng)?;
            for sol in &r.solutions {
                let c = objective(inst, &sol.sequence);
                if best.as_ref().map_or(true, |(_, b)| c < *b) {
                    best = Some((sol.sequence.clone(), c));
                }
            }
        }
    }
    best.ok_or(ModelError::Empty)
}

/// Best solution over the 32 prompts, plus the best solution of each
/// prompt, in [`all_prompts`] order.
pub fn prompt_augment<T: Real>(
    model: &Model<T>,
    inst: &Instance,
) -> Result<((Vec<usize>, f64), Vec<(Vec<usize>, f64)>), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let per: Vec<(Vec<usize>, f64)> = all_prompts()
        .into_iter()
        .map(|p| {
            let ro = RolloutOptions {
                prompt: Some(p),
                ..RolloutOptions::greedy()
            };
            let best = model.rollout(inst, &ro, &mut rng)?.best().clone();
            let c = objective(inst, &best.sequence);
            Ok((best.sequence, c))
        })
        .collect::<Result<_, ModelError>>()?;
    let best = per
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("32 prompts");
    Ok((best, per))
}

/// Mean best-of-starts greedy cost, no augmentation.
pub fn mean_greedy_cost<T: Real>(model: &Model<T>, insts: &[Instance], mode: ExecMode) -> Result<f64, ModelError> {
    let opts = EvalOptions::default();
    let costs = map_indexed(mode, insts.len(), |i| solve_instance(model, &insts[i], &opts).map(|r| r.1));
    let mut sum = 0.0;
    for c in costs {
        sum += c?;
    }
    Ok(sum / insts.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub variant: VariantSpec,
    pub n: usize,
    pub mean_obj: f64,
    /// Mean of `(obj - ref) / ref`; `None` without references.
    pub gap: Option<f64>,
    /// Wall-clock seconds for the whole dataset.
    pub time_s: f64,
    pub costs: Vec<f64>,
    pub sequences: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let gap = self.gap.map(|g| g.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.variant, self.n, self.mean_obj, gap, self.time_s)
    }
}

/// Mean relative gap; `None` when lengths differ or a reference is not
/// positive.
pub fn mean_gap(costs: &[f64], refs: &[f64]) -> Option<f64> {
    if costs.len() != refs.len() || costs.is_empty() || refs.iter().any(|r| !(*r > 0.0)) {
        return None;
    }
    Some(costs.iter().zip(refs).map(|(c, r)| (c - r) / r).sum::<f64>() / costs.len() as f64)
}

/// Evaluates a single-variant dataset.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    insts: &[Instance],
    refs: Option<&[f64]>,
    opts: &EvalOptions,
    mode: ExecMode,
) -> Result<EvalReport, ModelError> {
    let first = insts.first().ok_or(ModelError::Empty)?;
    let start = Instant::now();
    let results = map_indexed(mode, insts.len(), |i| solve_instance(model, &insts[i], opts));
    let (mut costs, mut sequences) = (Vec::new(), Vec::new());
    for r in results {
        let (s, c) = r?;
        costs.push(c);
        sequences.push(s);
    }
    let time_s = start.elapsed().as_secs_f64();
    Ok(EvalReport {
        variant: first.variant,
        n: first.n(),
        mean_obj: costs.iter().sum::<f64>() / costs.len() as f64,
        gap: refs.and_then(|r| mean_gap(&costs, r)),
        time_s,
        costs,
        sequences,
    })
}

/// `(l_j - e_i) - d_ij - (s_i + s_j)`.
pub fn surplus_time(e_i: f64, s_i: f64, l_j: f64, s_j: f64, d_ij: f64) -> f64 {
    (l_j - e_i) - d_ij - (s_i + s_j)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepotAttention {
    pub layer: usize,
    pub head: usize,
    pub instance: usize,
    pub customer: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionStats {
    pub depot: Vec<DepotAttention>,
    /// `(P_ij, A_ij)` over ordered customer pairs, time-window instances only.
    pub tw: Vec<(f64, f64)>,
}

/// Global-branch attention: customer-to-depot weights and, on time-window
/// instances, weights against surplus time.
pub fn attention_stats<T: Real>(model: &Model<T>, insts: &[Instance], mode: ExecMode) -> Result<AttentionStats, ModelError> {
    let per = map_indexed(mode, insts.len(), |idx| -> Result<AttentionStats, ModelError> {
        let inst = &insts[idx];
        let n1 = inst.num_nodes();
        let (global, _) = model.attention(inst, None)?;
        let dist = inst.distance_matrix();
        let mut out = AttentionStats::default();
        for (layer, heads) in global.iter().enumerate() {
            for (head, a) in heads.iter().enumerate() {
                // square; a trailing prompt row and column may be present
                let width = (a.len() as f64).sqrt().round() as usize;
                for i in 1..n1 {
                    out.depot.push(DepotAttention {
                        layer,
                        head,
                        instance: idx,
                        customer: i,
                        weight: a[i * width].as_f64(),
                    });
                }
                if let (true, Some(tw)) = (inst.variant.time_window, &inst.time_windows) {
                    for i in 1..n1 {
                        for j in (1..n1).filter(|&j| j != i) {
                            let p = surplus_time(tw.start[i], tw.service[i], tw.end[j], tw.service[j], dist.get(i, j));
                            out.tw.push((p, a[i * width + j].as_f64()));
                        }
                    }
                }
            }
        }
        Ok(out)
    });
    let mut all = AttentionStats::default();
    for r in per {
        let r = r?;
        all.depot.extend(r.depot);
        all.tw.extend(r.tw);
    }
    Ok(all)
}

pub fn write_depot_csv<W: Write>(mut w: W, rows: &[DepotAttention]) -> io::Result<()> {
    writeln!(w, "layer,head,instance,customer,weight")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.layer, r.head, r.instance, r.customer, r.weight)?;
    }
    Ok(())
}

pub fn write_tw_csv<W: Write>(mut w: W, rows: &[(f64, f64)]) -> io::Result<()> {
    writeln!(w, "p_value,weight")?;
    for (p, a) in rows {
        writeln!(w, "{p},{a}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_are_distinct_isometries() {
        let p = [0.2, 0.7];
        let q = [0.9, 0.1];
        let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let images: Vec<[f64; 2]> = (0..8).map(|t| transform_point(t, p)).collect();
        for t in 0..8 {
            assert!((d(transform_point(t, p), transform_point(t, q)) - d(p, q)).abs() < 1e-12);
            for u in 0..t {
                assert_ne!(images[t], images[u]);
            }
        }
        assert_eq!(images[0], p);
    }

    #[test]
    fn prompts_cover_all_masks() {
        let ps = all_prompts();
        assert_eq!(ps.len(), 32);
        let mut seen: Vec<String> = ps.iter().map(|p| format!("{p:?}")).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 32);
        assert!(ps.contains(&VariantSpec::CVRP.encode()));
    }

    #[test]
    fn surplus_example() {
        assert!((surplus_time(0.5, 0.16, 3.94, 0.16, 0.5) - 2.62).abs() < 1e-12);
    }

    #[test]
    fn gap_against_itself_is_zero() {
        let c = [3.0, 4.5, 7.25];
        assert_eq!(mean_gap(&c, &c), Some(0.0));
        assert_eq!(mean_gap(&c, &c[..2]), None);
        assert!((mean_gap(&[1.1], &[1.0]).unwrap() - 0.1).abs() < 1e-12);
    }
}
