//! Parameter layout and initialization.

use cada_tensor::nn::SwiGluWeights;
use cada_tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::{ModelConfig, ModelError};

/// Per-node input features: `[x, y, linehaul, |backhaul|, e, l, s]`.
pub const NODE_FEATURES: usize = 7;
/// Variant flags `[C, O, B, L, TW]`.
pub const PROMPT_FEATURES: usize = 5;
/// Decoder state scalars `[c_l, c_b, z, l, o]`.
pub const CONTEXT_FEATURES: usize = 5;

#[derive(Clone, Debug)]
pub struct BlockIds {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub norm_attn: ParamId,
    pub w_gate: ParamId,
    pub b_gate: ParamId,
    pub w_val: ParamId,
    pub b_val: ParamId,
    pub w_out: ParamId,
    pub norm_ffn: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerIds {
    pub global: BlockIds,
    pub sparse: BlockIds,
    /// sparse -> global fusion
    pub w_s: ParamId,
    pub b_s: ParamId,
    /// global -> sparse fusion
    pub w_g: ParamId,
    pub b_g: ParamId,
}

#[derive(Clone, Debug)]
pub struct ParamIds {
    pub prompt_w_a: ParamId,
    pub prompt_b_a: ParamId,
    pub prompt_ln_gain: ParamId,
    pub prompt_ln_bias: ParamId,
    pub prompt_w_b: ParamId,
    pub prompt_b_b: ParamId,
    pub depot_w: ParamId,
    pub depot_b: ParamId,
    pub node_w: ParamId,
    pub node_b: ParamId,
    pub layers: Vec<LayerIds>,
    /// `(d_h + 5) x d_h` context projection.
    pub dec_w_c: ParamId,
    pub dec_w_q: ParamId,
    pub dec_w_k: ParamId,
    pub dec_w_v: ParamId,
    pub dec_w_o: ParamId,
    /// Key projection of the final compatibility layer.
    pub dec_w_f: ParamId,
}

struct Builder<'r, T: Real, R: Rng> {
    store: ParamStore<T>,
    rng: &'r mut R,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    fn uniform(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let b = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::from_fn(vec![rows, cols], |_| T::cast(self.rng.gen_range(-b..=b)));
        self.store.add(name, t)
    }

    fn fill(&mut self, name: String, cols: usize, v: f64) -> ParamId {
        self.store.add(name, Tensor::from_fn(vec![1, cols], |_| T::cast(v)))
    }

    fn block(&mut self, p: &str, d: usize, ff: usize) -> BlockIds {
        BlockIds {
            w_q: self.uniform(format!("{p}.attn.w_q"), d, d, d),
            w_k: self.uniform(format!("{p}.attn.w_k"), d, d, d),
            w_v: self.uniform(format!("{p}.attn.w_v"), d, d, d),
            w_o: self.uniform(format!("{p}.attn.w_o"), d, d, d),
            norm_attn: self.fill(format!("{p}.norm_attn"), d, 1.0),
            w_gate: self.uniform(format!("{p}.ffn.w_gate"), d, ff, d),
            b_gate: self.uniform(format!("{p}.ffn.b_gate"), 1, ff, d),
            w_val: self.uniform(format!("{p}.ffn.w_val"), d, ff, d),
            b_val: self.uniform(format!("{p}.ffn.b_val"), 1, ff, d),
            w_out: self.uniform(format!("{p}.ffn.w_out"), ff, d, ff),
            norm_ffn: self.fill(format!("{p}.norm_ffn"), d, 1.0),
        }
    }
}

pub fn init_params<T: Real, R: Rng>(cfg: &ModelConfig, rng: &mut R) -> (ParamStore<T>, ParamIds) {
    let d = cfg.d_h;
    let mut b = Builder {
        store: ParamStore::new(),
        rng,
    };
    let pf = PROMPT_FEATURES;
    let nf = NODE_FEATURES;
    let ids = ParamIds {
        prompt_w_a: b.uniform("prompt.w_a".into(), pf, d, pf),
        prompt_b_a: b.uniform("prompt.b_a".into(), 1, d, pf),
        prompt_ln_gain: b.fill("prompt.ln_gain".into(), d, 1.0),
        prompt_ln_bias: b.fill("prompt.ln_bias".into(), d, 0.0),
        prompt_w_b: b.uniform("prompt.w_b".into(), d, d, d),
        prompt_b_b: b.uniform("prompt.b_b".into(), 1, d, d),
        depot_w: b.uniform("embed.depot_w".into(), nf, d, nf),
        depot_b: b.uniform("embed.depot_b".into(), 1, d, nf),
        node_w: b.uniform("embed.node_w".into(), nf, d, nf),
        node_b: b.uniform("embed.node_b".into(), 1, d, nf),
        layers: (0..cfg.layers)
            .map(|i| LayerIds {
                global: b.block(&format!("layers.{i}.global"), d, cfg.d_ff),
                sparse: b.block(&format!("layers.{i}.sparse"), d, cfg.d_ff),
                w_s: b.uniform(format!("layers.{i}.fuse.w_s"), d, d, d),
                b_s: b.uniform(format!("layers.{i}.fuse.b_s"), 1, d, d),
                w_g: b.uniform(format!("layers.{i}.fuse.w_g"), d, d, d),
                b_g: b.uniform(format!("layers.{i}.fuse.b_g"), 1, d, d),
            })
            .collect(),
        dec_w_c: b.uniform("decoder.w_c".into(), d + CONTEXT_FEATURES, d, d + CONTEXT_FEATURES),
        dec_w_q: b.uniform("decoder.w_q".into(), d, d, d),
        dec_w_k: b.uniform("decoder.w_k".into(), d, d, d),
        dec_w_v: b.uniform("decoder.w_v".into(), d, d, d),
        dec_w_o: b.uniform("decoder.w_o".into(), d, d, d),
        dec_w_f: b.uniform("decoder.w_f".into(), d, d, d),
    };
    (b.store, ids)
}

/// Recovers the id layout of a store built by [`init_params`].
pub fn ids_from_store<T: Real>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<ParamIds, ModelError> {
    let get = |name: String| store.find(&name).ok_or(ModelError::MissingParam(name));
    let block = |p: String| -> Result<BlockIds, ModelError> {
        Ok(BlockIds {
            w_q: get(format!("{p}.attn.w_q"))?,
            w_k: get(format!("{p}.attn.w_k"))?,
            w_v: get(format!("{p}.attn.w_v"))?,
            w_o: get(format!("{p}.attn.w_o"))?,
            norm_attn: get(format!("{p}.norm_attn"))?,
            w_gate: get(format!("{p}.ffn.w_gate"))?,
            b_gate: get(format!("{p}.ffn.b_gate"))?,
            w_val: get(format!("{p}.ffn.w_val"))?,
            b_val: get(format!("{p}.ffn.b_val"))?,
            w_out: get(format!("{p}.ffn.w_out"))?,
            norm_ffn: get(format!("{p}.norm_ffn"))?,
        })
    };
    Ok(ParamIds {
        prompt_w_a: get("prompt.w_a".into())?,
        prompt_b_a: get("prompt.b_a".into())?,
        prompt_ln_gain: get("prompt.ln_gain".into())?,
        prompt_ln_bias: get("prompt.ln_bias".into())?,
        prompt_w_b: get("prompt.w_b".into())?,
        prompt_b_b: get("prompt.b_b".into())?,
        depot_w: get("embed.depot_w".into())?,
        depot_b: get("embed.depot_b".into())?,
        node_w: get("embed.node_w".into())?,
        node_b: get("embed.node_b".into())?,
        layers: (0..cfg.layers)
            .map(|i| {
                Ok(LayerIds {
                    global: block(format!("layers.{i}.global"))?,
                    sparse: block(format!("layers.{i}.sparse"))?,
                    w_s: get(format!("layers.{i}.fuse.w_s"))?,
                    b_s: get(format!("layers.{i}.fuse.b_s"))?,
                    w_g: get(format!("layers.{i}.fuse.w_g"))?,
                    b_g: get(format!("layers.{i}.fuse.b_g"))?,
                })
            })
            .collect::<Result<_, ModelError>>()?,
        dec_w_c: get("decoder.w_c".into())?,
        dec_w_q: get("decoder.w_q".into())?,
        dec_w_k: get("decoder.w_k".into())?,
        dec_w_v: get("decoder.w_v".into())?,
        dec_w_o: get("decoder.w_o".into())?,
        dec_w_f: get("decoder.w_f".into())?,
    })
}

/// Block weights placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub norm_attn: Var,
    pub ffn: SwiGluWeights,
    pub norm_ffn: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub global: BlockVars,
    pub sparse: BlockVars,
    pub w_s: Var,
    pub b_s: Var,
    pub w_g: Var,
    pub b_g: Var,
}

/// Every parameter as a tape variable, plus decoder products that only
/// depend on parameters.
#[derive(Clone, Debug)]
pub struct TapeWeights {
    pub prompt_w_a: Var,
    pub prompt_b_a: Var,
    pub prompt_ln_gain: Var,
    pub prompt_ln_bias: Var,
    pub prompt_w_b: Var,
    pub prompt_b_b: Var,
    pub depot_w: Var,
    pub depot_b: Var,
    pub node_w: Var,
    pub node_b: Var,
    pub layers: Vec<LayerVars>,
    pub dec_w_k: Var,
    pub dec_w_v: Var,
    pub dec_w_o: Var,
    pub dec_w_f: Var,
    /// `W_c[..d] . W_q`: node part of the glimpse query.
    pub dec_query_node: Var,
    /// `W_c[d..] . W_q`: state part of the glimpse query.
    pub dec_query_state: Var,
}

impl TapeWeights {
    pub fn load<'a, T: Real>(
        tape: &mut Tape<'a, T>,
        store: &'a ParamStore<T>,
        ids: &ParamIds,
        d: usize,
    ) -> Result<Self, ModelError> {
        let mut p = |id: ParamId| tape.param(store, id);
        let mut block = |b: &BlockIds| -> Result<BlockVars, ModelError> {
            Ok(BlockVars {
                w_q: p(b.w_q)?,
                w_k: p(b.w_k)?,
                w_v: p(b.w_v)?,
                w_o: p(b.w_o)?,
                norm_attn: p(b.norm_attn)?,
                ffn: SwiGluWeights {
                    w_gate: p(b.w_gate)?,
                    b_gate: p(b.b_gate)?,
                    w_val: p(b.w_val)?,
                    b_val: p(b.b_val)?,
                    w_out: p(b.w_out)?,
                },
                norm_ffn: p(b.norm_ffn)?,
            })
        };
        let mut layers = Vec::with_capacity(ids.layers.len());
        for l in &ids.layers {
            let global = block(&l.global)?;
            let sparse = block(&l.sparse)?;
            layers.push((global, sparse));
        }
        let mut p = |id: ParamId| tape.param(store, id);
        let prompt = [
            p(ids.prompt_w_a)?,
            p(ids.prompt_b_a)?,
            p(ids.prompt_ln_gain)?,
            p(ids.prompt_ln_bias)?,
            p(ids.prompt_w_b)?,
            p(ids.prompt_b_b)?,
        ];
        let embed = [p(ids.depot_w)?, p(ids.depot_b)?, p(ids.node_w)?, p(ids.node_b)?];
        let fuse: Vec<[Var; 4]> = ids
            .layers
            .iter()
            .map(|l| Ok([p(l.w_s)?, p(l.b_s)?, p(l.w_g)?, p(l.b_g)?]))
            .collect::<Result<_, ModelError>>()?;
        let dec = [
            p(ids.dec_w_c)?,
            p(ids.dec_w_q)?,
            p(ids.dec_w_k)?,
            p(ids.dec_w_v)?,
            p(ids.dec_w_o)?,
            p(ids.dec_w_f)?,
        ];
        let w_c_node = tape.slice_rows(dec[0], 0, d)?;
        let w_c_state = tape.slice_rows(dec[0], d, CONTEXT_FEATURES)?;
        let dec_query_node = tape.matmul(w_c_node, dec[1])?;
        let dec_query_state = tape.matmul(w_c_state, dec[1])?;
        Ok(Self {
            prompt_w_a: prompt[0],
            prompt_b_a: prompt[1],
            prompt_ln_gain: prompt[2],
            prompt_ln_bias: prompt[3],
            prompt_w_b: prompt[4],
            prompt_b_b: prompt[5],
            depot_w: embed[0],
            depot_b: embed[1],
            node_w: embed[2],
            node_b: embed[3],
            layers: layers
                .into_iter()
                .zip(fuse)
                .map(|((global, sparse), f)| LayerVars {
                    global,
                    sparse,
                    w_s: f[0],
                    b_s: f[1],
                    w_g: f[2],
                    b_g: f[3],
                })
                .collect(),
            dec_w_k: dec[2],
            dec_w_v: dec[3],
            dec_w_o: dec[4],
            dec_w_f: dec[5],
            dec_query_node,
            dec_query_state,
        })
    }
}
