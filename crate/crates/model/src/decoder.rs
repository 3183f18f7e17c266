//! Autoregressive decoder and POMO rollouts.
//!
//! The query for a trajectory is `[h_last, c_l, c_b, z, l, o] W_c W_q`,
//! split as a gather from a precomputed node table plus a small state term.
//! The glimpse attends over all nodes with infeasible keys at `-inf`; its
//! output projection is folded into the final keys, so the logits are
//! `xi tanh(g (H W_f W_o^T)^T / sqrt(d))`.

use cada_core::{Env, Instance, Solution, State};
use cada_tensor::{Real, Tape, Var};
use rand::Rng;

use crate::encoder::{encode, AttentionTrace};
use crate::params::{TapeWeights, CONTEXT_FEATURES};
use crate::{ModelConfig, ModelError};

/// Per-instance tensors reused by every decoding step.
#[derive(Clone, Debug)]
pub struct DecoderCache {
    n1: usize,
    query_nodes: Var,
    keys: Vec<Var>,
    values: Vec<Var>,
    final_keys: Var,
}

pub fn prepare<T: Real>(
    tape: &mut Tape<'_, T>,
    w: &TapeWeights,
    cfg: &ModelConfig,
    nodes: Var,
) -> Result<DecoderCache, ModelError> {
    let (n1, d) = tape.dims(nodes)?;
    let dk = d / cfg.heads;
    let query_nodes = tape.matmul(nodes, w.dec_query_node)?;
    let k = tape.matmul(nodes, w.dec_w_k)?;
    let v = tape.matmul(nodes, w.dec_w_v)?;
    let (mut keys, mut values) = (Vec::new(), Vec::new());
    for h in 0..cfg.heads {
        if cfg.heads == 1 {
            keys.push(k);
            values.push(v);
        } else {
            keys.push(tape.slice_cols(k, h * dk, dk)?);
            values.push(tape.slice_cols(v, h * dk, dk)?);
        }
    }
    let kf = tape.matmul(nodes, w.dec_w_f)?;
    let final_keys = tape.matmul_bt(kf, w.dec_w_o, T::one())?;
    Ok(DecoderCache {
        n1,
        query_nodes,
        keys,
        values,
        final_keys,
    })
}

/// Log-probabilities for a batch of trajectories, `rows x (n + 1)`;
/// entries with `keep == false` are `-inf`.
pub fn step_log_probs<T: Real>(
    tape: &mut Tape<'_, T>,
    w: &TapeWeights,
    cfg: &ModelConfig,
    cache: &DecoderCache,
    last: &[usize],
    state: &[f64],
    keep: Vec<bool>,
) -> Result<Var, ModelError> {
    let rows = last.len();
    let (_, d) = tape.dims(cache.query_nodes)?;
    let dk = d / cfg.heads;
    let gathered = tape.gather_rows(cache.query_nodes, last)?;
    let s = tape.leaf_slice(rows, CONTEXT_FEATURES, state.iter().map(|v| T::cast(*v)).collect())?;
    let s = tape.matmul(s, w.dec_query_state)?;
    let q = tape.add(gathered, s)?;
    let scale = T::cast(1.0 / (dk as f64).sqrt());
    let mut outs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = if cfg.heads == 1 { q } else { tape.slice_cols(q, h * dk, dk)? };
        let sc = tape.matmul_bt(qh, cache.keys[h], scale)?;
        let sc = tape.mask_fill(sc, keep.clone())?;
        let a = tape.softmax(sc)?;
        outs.push(tape.matmul(a, cache.values[h])?);
    }
    let g = if cfg.heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let u = tape.matmul_bt(g, cache.final_keys, T::cast(1.0 / (d as f64).sqrt()))?;
    let u = tape.tanh(u)?;
    let u = tape.scale(u, T::cast(cfg.xi))?;
    let u = tape.mask_fill(u, keep)?;
    debug_assert_eq!(tape.dims(u)?, (rows, cache.n1));
    Ok(tape.log_softmax(u)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

#[derive(Clone, Debug)]
pub struct RolloutOptions {
    pub mode: DecodeMode,
    /// Trajectories per instance; `None` means one per customer.
    pub n_starts: Option<usize>,
    /// Replaces the variant's flags as encoder input; masking always
    /// follows the instance's real variant.
    pub prompt: Option<[f64; 5]>,
    /// Replaces the sparse top-k.
    pub k: Option<usize>,
    /// Follow these action sequences (initial depot excluded) instead of
    /// choosing; used to re-score trajectories.
    pub forced: Option<Vec<Vec<usize>>>,
}

impl RolloutOptions {
    pub fn greedy() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            n_starts: None,
            prompt: None,
            k: None,
            forced: None,
        }
    }

    pub fn sample() -> Self {
        Self {
            mode: DecodeMode::Sample,
            ..Self::greedy()
        }
    }
}

/// Trajectories of one instance.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub solutions: Vec<Solution>,
    pub rewards: Vec<f64>,
    /// Summed log-probability of each trajectory's chosen actions.
    pub log_probs: Vec<f64>,
    /// Chosen-action log-probabilities on the tape, with the trajectory
    /// each row belongs to.
    pub picks: Vec<(Var, Vec<usize>)>,
}

impl Rollout {
    pub fn best(&self) -> &Solution {
        let i = (0..self.rewards.len())
            .max_by(|&a, &b| self.rewards[a].total_cmp(&self.rewards[b]).then(b.cmp(&a)))
            .expect("at least one trajectory");
        &self.solutions[i]
    }
}

fn choose<R: Rng + ?Sized>(lp: &[f32], mode: DecodeMode, rng: &mut R) -> usize {
    match mode {
        DecodeMode::Greedy => {
            let mut best = 0;
            for (i, v) in lp.iter().enumerate() {
                if *v > lp[best] {
                    best = i;
                }
            }
            best
        }
        DecodeMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, v) in lp.iter().enumerate() {
                if v.is_finite() {
                    acc += (*v as f64).exp();
                    last = i;
                    if u < acc {
                        return i;
                    }
                }
            }
            last
        }
    }
}

/// Encodes `inst` and decodes trajectories to completion on `tape`. The
/// second node of trajectory `j` is forced to the `j`-th customer that is
/// feasible from the depot (cycling when there are fewer of them).
#[allow(clippy::too_many_arguments)]
pub fn rollout_on_tape<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    w: &TapeWeights,
    cfg: &ModelConfig,
    inst: &Instance,
    opts: &RolloutOptions,
    rng: &mut R,
    trace: Option<&mut AttentionTrace>,
) -> Result<Rollout, ModelError> {
    let n = inst.n();
    if n == 0 {
        return Err(ModelError::Empty);
    }
    let env = Env::new(inst);
    let prompt = opts.prompt.unwrap_or_else(|| inst.variant.encode());
    let k = opts.k.unwrap_or_else(|| cfg.k_for(n));
    let enc = encode(tape, w, cfg, inst, prompt, k, trace)?;
    let cache = prepare(tape, w, cfg, enc.nodes)?;

    let p = match &opts.forced {
        Some(f) => f.len(),
        None => opts.n_starts.unwrap_or(n),
    };
    if p == 0 {
        return Err(ModelError::Config("need at least one trajectory".into()));
    }
    let mut states: Vec<State> = env.reset(p);
    let starts: Vec<usize> = env.feasible_actions(&states[0]).iter_feasible().collect();
    if starts.is_empty() {
        return Err(cada_core::EnvError::NoFeasibleAction.into());
    }
    for (j, s) in states.iter_mut().enumerate() {
        let a = match &opts.forced {
            Some(f) => *f[j].first().ok_or(ModelError::Replay(j))?,
            None => starts[j % starts.len()],
        };
        env.step(s, a)?;
    }

    let n1 = inst.num_nodes();
    let mut log_probs = vec![0.0f64; p];
    let mut picks = Vec::new();
    loop {
        let mut rows = Vec::new();
        let mut keep = Vec::new();
        for j in 0..p {
            if states[j].is_done() {
                continue;
            }
            let mask = env.feasible_actions(&states[j]);
            match mask.count() {
                0 => return Err(cada_core::EnvError::NoFeasibleAction.into()),
                1 => {
                    let a = mask.iter_feasible().next().expect("one feasible");
                    env.step(&mut states[j], a)?;
                }
                _ => {
                    rows.push(j);
                    keep.extend_from_slice(&mask.feasible);
                }
            }
        }
        if rows.is_empty() {
            if states.iter().all(State::is_done) {
                break;
            }
            continue;
        }
        let last: Vec<usize> = rows.iter().map(|&j| states[j].last_node()).collect();
        let mut feats = Vec::with_capacity(rows.len() * CONTEXT_FEATURES);
        for &j in &rows {
            feats.extend_from_slice(&env.context_features(&states[j]));
        }
        let lp = step_log_probs(tape, w, cfg, &cache, &last, &feats, keep)?;
        let values: Vec<f32> = tape.value(lp)?.iter().map(|v| v.as_f64() as f32).collect();
        let mut actions = Vec::with_capacity(rows.len());
        for (r, &j) in rows.iter().enumerate() {
            let row = &values[r * n1..(r + 1) * n1];
            let a = match &opts.forced {
                Some(f) => {
                    let pos = states[j].partial_solution().len();
                    *f[j].get(pos).ok_or(ModelError::Replay(j))?
                }
                None => choose(row, opts.mode, rng),
            };
            env.step(&mut states[j], a)?;
            actions.push(a);
        }
        let picked = tape.pick(lp, &actions)?;
        for (r, &j) in rows.iter().enumerate() {
            log_probs[j] += tape.value(picked)?[r].as_f64();
        }
        picks.push((picked, rows));
    }

    let mut solutions = Vec::with_capacity(p);
    let mut rewards = Vec::with_capacity(p);
    for s in &states {
        let sol = env.solution(s)?;
        rewards.push(env.reward(&sol));
        solutions.push(sol);
    }
    Ok(Rollout {
        solutions,
        rewards,
        log_probs,
        picks,
    })
}
