use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cada_core::{Env, Instance, State};
use cada_tensor::{read_checkpoint, write_checkpoint, ParamStore, Real, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{prepare, rollout_on_tape, step_log_probs, Rollout, RolloutOptions};
use crate::encoder::{encode, AttentionTrace};
use crate::params::{ids_from_store, init_params, ParamIds, TapeWeights};
use crate::{ModelConfig, ModelError};

/// Configuration plus parameters. `T` is `f32` for training and inference;
/// `f64` copies exist for gradient checking.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub ids: ParamIds,
}

/// Path of the text file holding a checkpoint's model configuration.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, ids) = init_params(&config, &mut rng);
        Ok(Self { config, params, ids })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    pub fn weights<'a>(&'a self, tape: &mut Tape<'a, T>) -> Result<TapeWeights, ModelError> {
        TapeWeights::load(tape, &self.params, &self.ids, self.config.d_h)
    }

    /// Runs the policy on one instance with a private tape.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        inst: &Instance,
        opts: &RolloutOptions,
        rng: &mut R,
    ) -> Result<Rollout, ModelError> {
        let mut tape = Tape::new();
        let w = self.weights(&mut tape)?;
        rollout_on_tape(&mut tape, &w, &self.config, inst, opts, rng, None)
    }

    /// Best greedy solution over all POMO starts.
    pub fn solve(&self, inst: &Instance) -> Result<cada_core::Solution, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.rollout(inst, &RolloutOptions::greedy(), &mut rng)?.best().clone())
    }

    /// Global-branch node embeddings, `(n + 1) x d_h` row-major.
    pub fn node_embeddings(&self, inst: &Instance, prompt: Option<[f64; 5]>) -> Result<Vec<T>, ModelError> {
        let mut tape = Tape::new();
        let w = self.weights(&mut tape)?;
        let k = self.config.k_for(inst.n());
        let p = prompt.unwrap_or_else(|| inst.variant.encode());
        let enc = encode(&mut tape, &w, &self.config, inst, p, k, None)?;
        Ok(tape.value(enc.nodes)?.to_vec())
    }

    /// Encodes and returns every attention matrix as row-major values,
    /// `[layer][head]` for the global and sparse branches.
    pub fn attention(&self, inst: &Instance, k: Option<usize>) -> Result<(Vec<Vec<Vec<T>>>, Vec<Vec<Vec<T>>>), ModelError> {
        let mut tape = Tape::new();
        let w = self.weights(&mut tape)?;
        let k = k.unwrap_or_else(|| self.config.k_for(inst.n()));
        let mut trace = AttentionTrace::default();
        encode(&mut tape, &w, &self.config, inst, inst.variant.encode(), k, Some(&mut trace))?;
        let read = |vars: &Vec<Vec<cada_tensor::Var>>| -> Result<Vec<Vec<Vec<T>>>, ModelError> {
            vars.iter()
                .map(|l| l.iter().map(|v| Ok(tape.value(*v)?.to_vec())).collect())
                .collect()
        };
        Ok((read(&trace.global)?, read(&trace.sparse)?))
    }

    /// Next-node probabilities for one state.
    pub fn decode_step(&self, inst: &Instance, state: &State) -> Result<Vec<f64>, ModelError> {
        let env = Env::new(inst);
        let mask = env.feasible_actions(state);
        if mask.count() == 0 {
            return Err(cada_core::EnvError::NoFeasibleAction.into());
        }
        let mut tape = Tape::new();
        let w = self.weights(&mut tape)?;
        let k = self.config.k_for(inst.n());
        let enc = encode(&mut tape, &w, &self.config, inst, inst.variant.encode(), k, None)?;
        let cache = prepare(&mut tape, &w, &self.config, enc.nodes)?;
        let feats = env.context_features(state);
        let lp = step_log_probs(&mut tape, &w, &self.config, &cache, &[state.last_node()], &feats, mask.feasible)?;
        Ok(tape.value(lp)?.iter().map(|v| v.as_f64().exp()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let entries: Vec<(&str, &cada_tensor::Tensor<T>)> = self.params.named().collect();
        atomic_write(path, |w| Ok(write_checkpoint(w, &entries)?))?;
        atomic_write(&sidecar_path(path), |w| Ok(w.write_all(self.config.to_sidecar().as_bytes())?))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let config = ModelConfig::from_sidecar(&fs::read_to_string(sidecar_path(path))?)?;
        let entries = read_checkpoint(BufReader::new(fs::File::open(path)?))?;
        Self::from_entries(config, &entries)
    }

    pub fn from_entries(config: ModelConfig, entries: &[(String, cada_tensor::Tensor<f32>)]) -> Result<Self, ModelError> {
        let mut m = Self::new(config, 0)?;
        m.params.load_named(entries)?;
        m.ids = ids_from_store(&m.config, &m.params)?;
        Ok(m)
    }
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn atomic_write(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<(), ModelError>,
) -> Result<(), ModelError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
