//! Constraint prompt, node embedding and the dual-branch encoder.
//!
//! Each layer runs a dense block over the nodes (plus the prompt token) and
//! a sparse block whose attention keeps only the strongest keys per query.
//! After both blocks the branches exchange information through linear
//! projections of each other's output.

use cada_core::Instance;
use cada_tensor::nn::{linear, swiglu};
use cada_tensor::{Real, Tape, Var};

use crate::params::{BlockVars, LayerVars, TapeWeights, NODE_FEATURES, PROMPT_FEATURES};
use crate::{ModelConfig, ModelError, PromptPosition, SparseFunction};

/// How attention scores become weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttentionKind {
    Dense,
    Sparse(SparseFunction, usize),
}

/// Attention weight matrices recorded during encoding, `[layer][head]`.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace {
    pub global: Vec<Vec<Var>>,
    pub sparse: Vec<Vec<Var>>,
}

#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `(n + 1) x d_h` global-branch node embeddings.
    pub nodes: Var,
    /// `1 x d_h`.
    pub prompt: Var,
}

/// Rows of `[x, y, linehaul, |backhaul|, e, l, s]`, depot first. Demands
/// are divided by capacity; attributes of inactive constraints are zero.
pub fn node_features(inst: &Instance) -> Vec<f64> {
    let n1 = inst.num_nodes();
    let c = inst.capacity as f64;
    let tw = inst.time_windows.as_ref().filter(|_| inst.variant.time_window);
    let mut f = Vec::with_capacity(n1 * NODE_FEATURES);
    for i in 0..n1 {
        let q = inst.demands[i] as f64 / c;
        let back = inst.variant.backhaul && q < 0.0;
        f.extend_from_slice(&[
            inst.coords[i][0],
            inst.coords[i][1],
            if q > 0.0 { q } else { 0.0 },
            if back { -q } else { 0.0 },
        ]);
        match tw {
            Some(tw) => f.extend_from_slice(&[tw.start[i], tw.end[i], tw.service[i]]),
            None => f.extend_from_slice(&[0.0; 3]),
        }
    }
    f
}

fn cast_vec<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|x| T::cast(*x)).collect()
}

/// `LayerNorm(V W_a + b_a) W_b + b_b`.
pub fn embed_prompt<T: Real>(tape: &mut Tape<'_, T>, w: &TapeWeights, v: [f64; 5]) -> Result<Var, ModelError> {
    let x = tape.leaf_slice(1, PROMPT_FEATURES, cast_vec(&v))?;
    let a = linear(tape, x, w.prompt_w_a, Some(w.prompt_b_a))?;
    let a = tape.layer_norm(a, w.prompt_ln_gain, w.prompt_ln_bias)?;
    Ok(linear(tape, a, w.prompt_w_b, Some(w.prompt_b_b))?)
}

/// Linear projection of node features; the depot has its own weights.
pub fn init_node_embed<T: Real>(tape: &mut Tape<'_, T>, w: &TapeWeights, inst: &Instance) -> Result<Var, ModelError> {
    let f = node_features(inst);
    let n = inst.n();
    let depot = tape.leaf_slice(1, NODE_FEATURES, cast_vec(&f[..NODE_FEATURES]))?;
    let depot = linear(tape, depot, w.depot_w, Some(w.depot_b))?;
    if n == 0 {
        return Ok(depot);
    }
    let cust = tape.leaf_slice(n, NODE_FEATURES, cast_vec(&f[NODE_FEATURES..]))?;
    let cust = linear(tape, cust, w.node_w, Some(w.node_b))?;
    Ok(tape.concat_rows(&[depot, cust])?)
}

fn attention_weights<T: Real>(tape: &mut Tape<'_, T>, scores: Var, kind: AttentionKind) -> Result<Var, ModelError> {
    Ok(match kind {
        AttentionKind::Dense | AttentionKind::Sparse(SparseFunction::Softmax, _) => tape.softmax(scores)?,
        AttentionKind::Sparse(SparseFunction::TopK, k) => {
            let m = tape.topk_mask(scores, k)?;
            tape.softmax(m)?
        }
        AttentionKind::Sparse(SparseFunction::TopKLiteral, k) => {
            let a = tape.softmax(scores)?;
            let z = tape.topk_zero(a, k)?;
            tape.softmax(z)?
        }
        AttentionKind::Sparse(SparseFunction::Sparsemax, _) => tape.sparsemax(scores)?,
        AttentionKind::Sparse(SparseFunction::Entmax15, _) => tape.entmax15(scores)?,
    })
}

/// Multi-head self-attention over the rows of `x`.
pub fn self_attention<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    b: &BlockVars,
    heads: usize,
    kind: AttentionKind,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var, ModelError> {
    let (_, d) = tape.dims(x)?;
    let dk = d / heads;
    let q = tape.matmul(x, b.w_q)?;
    let k = tape.matmul(x, b.w_k)?;
    let v = tape.matmul(x, b.w_v)?;
    let scale = T::cast(1.0 / (dk as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dk, dk)?,
                tape.slice_cols(k, h * dk, dk)?,
                tape.slice_cols(v, h * dk, dk)?,
            )
        };
        let s = tape.matmul_bt(qh, kh, scale)?;
        let a = attention_weights(tape, s, kind)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(a);
        }
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok(tape.matmul(cat, b.w_o)?)
}

/// Attention and feed-forward sublayers, each with a residual connection
/// followed by RMSNorm.
pub fn block<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    b: &BlockVars,
    heads: usize,
    kind: AttentionKind,
    trace: Option<&mut Vec<Var>>,
) -> Result<Var, ModelError> {
    let a = self_attention(tape, x, b, heads, kind, trace)?;
    let r = tape.add(x, a)?;
    let x1 = tape.rms_norm(r, b.norm_attn)?;
    let f = swiglu(tape, x1, &b.ffn)?;
    let r = tape.add(x1, f)?;
    Ok(tape.rms_norm(r, b.norm_ffn)?)
}

/// Dense block over `[H; P]`; returns the updated node rows and prompt row.
pub fn global_layer<T: Real>(
    tape: &mut Tape<'_, T>,
    h: Var,
    p: Var,
    b: &BlockVars,
    heads: usize,
    trace: Option<&mut Vec<Var>>,
) -> Result<(Var, Var), ModelError> {
    with_prompt(tape, h, p, b, heads, AttentionKind::Dense, trace)
}

fn with_prompt<T: Real>(
    tape: &mut Tape<'_, T>,
    h: Var,
    p: Var,
    b: &BlockVars,
    heads: usize,
    kind: AttentionKind,
    trace: Option<&mut Vec<Var>>,
) -> Result<(Var, Var), ModelError> {
    let (n1, _) = tape.dims(h)?;
    let x = tape.concat_rows(&[h, p])?;
    let y = block(tape, x, b, heads, kind, trace)?;
    Ok((tape.slice_rows(y, 0, n1)?, tape.slice_rows(y, n1, 1)?))
}

/// Node-only block with sparse attention.
pub fn sparse_layer<T: Real>(
    tape: &mut Tape<'_, T>,
    h: Var,
    b: &BlockVars,
    heads: usize,
    f: SparseFunction,
    k: usize,
    trace: Option<&mut Vec<Var>>,
) -> Result<Var, ModelError> {
    block(tape, h, b, heads, AttentionKind::Sparse(f, k), trace)
}

/// `H_g = H~_g + H~_s W_s + b_s`, `H_s = H~_s + H~_g W_g + b_g`.
pub fn fuse<T: Real>(tape: &mut Tape<'_, T>, hg: Var, hs: Var, l: &LayerVars) -> Result<(Var, Var), ModelError> {
    let from_s = linear(tape, hs, l.w_s, Some(l.b_s))?;
    let from_g = linear(tape, hg, l.w_g, Some(l.b_g))?;
    Ok((tape.add(hg, from_s)?, tape.add(hs, from_g)?))
}

pub fn encode<T: Real>(
    tape: &mut Tape<'_, T>,
    w: &TapeWeights,
    cfg: &ModelConfig,
    inst: &Instance,
    prompt: [f64; 5],
    k: usize,
    mut trace: Option<&mut AttentionTrace>,
) -> Result<Encoded, ModelError> {
    let v = if cfg.use_prompt { prompt } else { [0.0; 5] };
    let mut p = embed_prompt(tape, w, v)?;
    let h0 = init_node_embed(tape, w, inst)?;
    let (mut hg, mut hs) = (h0, h0);
    let sparse = AttentionKind::Sparse(cfg.sparse_function, k);
    for l in &w.layers {
        let (mut tg, mut ts) = (None, None);
        if let Some(t) = trace.as_deref_mut() {
            t.global.push(Vec::new());
            t.sparse.push(Vec::new());
            tg = t.global.last_mut();
            ts = t.sparse.last_mut();
        }
        let (g, s) = match cfg.prompt_position {
            PromptPosition::Global => {
                let (g, np) = global_layer(tape, hg, p, &l.global, cfg.heads, tg)?;
                p = np;
                let s = block(tape, hs, &l.sparse, cfg.heads, sparse, ts)?;
                (g, s)
            }
            PromptPosition::Sparse => {
                let g = block(tape, hg, &l.global, cfg.heads, AttentionKind::Dense, tg)?;
                let (s, np) = with_prompt(tape, hs, p, &l.sparse, cfg.heads, sparse, ts)?;
                p = np;
                (g, s)
            }
        };
        (hg, hs) = fuse(tape, g, s, l)?;
    }
    Ok(Encoded { nodes: hg, prompt: p })
}
