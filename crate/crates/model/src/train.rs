//! REINFORCE with a shared multi-start baseline, over a mix of variants.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use cada_core::{generate_instance, Instance, VariantSpec};
use cada_tensor::{read_checkpoint, write_checkpoint, Real, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{rollout_on_tape, RolloutOptions};
use crate::eval::mean_greedy_cost;
use crate::model::atomic_write;
use crate::optim::{clip_grad_norm, AdamW, MultiStepLr};
use crate::par::{map_indexed, ExecMode};
use crate::{parse_key_values, Model, ModelConfig, ModelError};

pub const METRICS_HEADER: &str = "epoch,variant,mean_cost,loss,lr";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub batch_size: usize,
    pub instances_per_epoch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub grad_clip: f64,
    pub tasks: Vec<VariantSpec>,
    /// Trajectories per instance; `None` means one per customer.
    pub n_starts: Option<usize>,
    pub val_size: usize,
    pub seed: u64,
    pub val_seed: u64,
}

impl TrainConfig {
    /// Full-scale settings: 16 tasks, 300 epochs of 100k instances.
    pub fn paper(n: usize) -> Self {
        Self {
            n,
            batch_size: 256,
            instances_per_epoch: 100_000,
            epochs: 300,
            lr: 3e-4,
            weight_decay: 1e-6,
            milestones: vec![270, 295],
            gamma: 0.1,
            grad_clip: 1.0,
            tasks: VariantSpec::all().to_vec(),
            n_starts: None,
            val_size: 256,
            seed: 1234,
            val_seed: 0x5eed_0f_da7a,
        }
    }

    /// CPU-sized run: CVRP with 20 customers, 20 epochs of 10k instances.
    pub fn desk() -> Self {
        Self {
            n: 20,
            batch_size: 64,
            instances_per_epoch: 10_000,
            epochs: 20,
            milestones: vec![18, 19],
            tasks: vec![VariantSpec::CVRP],
            ..Self::paper(20)
        }
    }

    pub fn schedule(&self) -> MultiStepLr {
        MultiStepLr {
            base: self.lr,
            milestones: self.milestones.clone(),
            gamma: self.gamma,
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.instances_per_epoch.div_ceil(self.batch_size)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.n == 0 || self.batch_size == 0 || self.instances_per_epoch == 0 || self.epochs == 0 {
            return bad("n, batch_size, instances_per_epoch and epochs must be positive");
        }
        if self.tasks.is_empty() {
            return bad("task list is empty");
        }
        if self.milestones.iter().any(|&m| m >= self.epochs) {
            return bad("milestones must be below the epoch count");
        }
        if !(self.lr > 0.0 && self.grad_clip > 0.0 && self.gamma > 0.0 && self.weight_decay >= 0.0) {
            return bad("lr, grad_clip and gamma must be positive");
        }
        Ok(())
    }

    /// Applies one `key = value` setting; returns false for keys that are
    /// not training settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ModelError> {
        let err = || ModelError::Config(format!("bad value `{value}` for {key}"));
        let int = || value.parse::<usize>().map_err(|_| err());
        let float = || value.parse::<f64>().map_err(|_| err());
        match key {
            "n" => self.n = int()?,
            "batch_size" => self.batch_size = int()?,
            "instances_per_epoch" => self.instances_per_epoch = int()?,
            "epochs" => self.epochs = int()?,
            "lr" => self.lr = float()?,
            "weight_decay" => self.weight_decay = float()?,
            "gamma" => self.gamma = float()?,
            "grad_clip" => self.grad_clip = float()?,
            "val_size" => self.val_size = int()?,
            "seed" => self.seed = value.parse().map_err(|_| err())?,
            "val_seed" => self.val_seed = value.parse().map_err(|_| err())?,
            "n_starts" => self.n_starts = if value == "auto" { None } else { Some(int()?) },
            "milestones" => {
                self.milestones = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| err()))
                    .collect::<Result<_, _>>()?
            }
            "tasks" => {
                self.tasks = if value == "all" {
                    VariantSpec::all().to_vec()
                } else {
                    value
                        .split(',')
                        .map(|s| s.trim().parse().map_err(|_| err()))
                        .collect::<Result<_, _>>()?
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Training and model settings from one flat `key = value` file.
pub fn parse_config(text: &str, mut train: TrainConfig, mut model: ModelConfig) -> Result<(TrainConfig, ModelConfig), ModelError> {
    for (k, v) in parse_key_values(text)? {
        if !train.set(&k, &v)? {
            model.set(&k, &v)?;
        }
    }
    train.validate()?;
    model.validate()?;
    Ok((train, model))
}

/// `r_i - mean(r)`.
pub fn pomo_advantages(rewards: &[f64]) -> Vec<f64> {
    let b = rewards.iter().sum::<f64>() / rewards.len() as f64;
    rewards.iter().map(|r| r - b).collect()
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for item `idx` of batch `batch` in `epoch`.
pub fn derive_seed(seed: u64, epoch: usize, batch: usize, idx: usize) -> u64 {
    mix(mix(mix(seed ^ epoch as u64) ^ batch as u64) ^ idx as u64)
}

/// Surrogate loss of one instance and its parameter gradient.
#[derive(Clone, Debug)]
pub struct Surrogate<T> {
    pub loss: f64,
    pub grads: Vec<Vec<T>>,
    pub rewards: Vec<f64>,
    pub sequences: Vec<Vec<usize>>,
}

/// Runs the trajectories of `opts` and differentiates
/// `scale * sum_j -a_j log p_j`, where `a` is `advantages` if given and
/// the multi-start advantages of the rollout otherwise.
pub fn surrogate<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    inst: &Instance,
    opts: &RolloutOptions,
    advantages: Option<&[f64]>,
    scale: f64,
    rng: &mut R,
) -> Result<Surrogate<T>, ModelError> {
    let mut tape = Tape::new();
    let w = model.weights(&mut tape)?;
    let r = rollout_on_tape(&mut tape, &w, &model.config, inst, opts, rng, None)?;
    let adv = match advantages {
        Some(a) => a.to_vec(),
        None => pomo_advantages(&r.rewards),
    };
    let mut terms = Vec::with_capacity(r.picks.len());
    for (pick, rows) in &r.picks {
        let wts: Vec<T> = rows.iter().map(|&j| T::cast(-adv[j] * scale)).collect();
        terms.push(tape.weighted_sum(*pick, wts)?);
    }
    let mut grads = model.params.zero_grads();
    let mut loss = 0.0;
    if !terms.is_empty() {
        let all = tape.concat_rows(&terms)?;
        let total = tape.sum(all)?;
        loss = tape.value(total)?[0].as_f64();
        tape.backward(total)?.accumulate_params(&mut grads, T::one());
    }
    let sequences = r.solutions.iter().map(|s| s.sequence[1..].to_vec()).collect();
    Ok(Surrogate {
        loss,
        grads,
        rewards: r.rewards,
        sequences,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub variant: VariantSpec,
    pub mean_cost: f64,
    pub loss: f64,
    pub lr: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.variant, self.mean_cost, self.loss, self.lr)
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub opt: AdamW,
    /// Completed epochs.
    pub epoch: usize,
    pub mode: ExecMode,
    pub out_dir: Option<PathBuf>,
    validation: Vec<(VariantSpec, Vec<Instance>)>,
}

/// Fixed validation instances per task.
pub fn validation_set(cfg: &TrainConfig) -> Vec<(VariantSpec, Vec<Instance>)> {
    cfg.tasks
        .iter()
        .map(|&v| {
            let insts = (0..cfg.val_size)
                .map(|i| generate_instance(cfg.n, v, derive_seed(cfg.val_seed, v.index(), 0, i)))
                .collect();
            (v, insts)
        })
        .collect()
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

/// Highest-numbered checkpoint in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Option<(usize, PathBuf)> {
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let num = name.strip_prefix("epoch-")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((num, e.path()))
        })
        .max_by_key(|(n, _)| *n)
}

impl Trainer {
    pub fn new(config: TrainConfig, model: Model<f32>, out_dir: Option<PathBuf>) -> Result<Self, ModelError> {
        config.validate()?;
        let opt = AdamW::new(&model.params, config.weight_decay);
        let validation = validation_set(&config);
        Ok(Self {
            config,
            model,
            opt,
            epoch: 0,
            mode: ExecMode::default(),
            out_dir,
            validation,
        })
    }

    /// Continues from the newest checkpoint in `out_dir`, if any.
    pub fn resume(&mut self) -> Result<bool, ModelError> {
        let Some(dir) = &self.out_dir else { return Ok(false) };
        let Some((_, path)) = latest_checkpoint(dir) else { return Ok(false) };
        let entries = read_checkpoint(BufReader::new(fs::File::open(&path)?))?;
        self.model.params.load_named(&entries)?;
        let meta = entries
            .iter()
            .find(|(n, _)| n == "train.progress")
            .map(|(_, t)| t.data().to_vec())
            .ok_or_else(|| ModelError::MissingParam("train.progress".into()))?;
        // epoch and optimizer step, stored as f32 pairs of 24-bit halves
        let join = |hi: f32, lo: f32| ((hi as u64) << 24) | lo as u64;
        self.epoch = join(meta[0], meta[1]) as usize;
        let step = join(meta[2], meta[3]);
        self.opt.load_state(&self.model.params, &entries, step);
        Ok(true)
    }

    pub fn validation(&self) -> &[(VariantSpec, Vec<Instance>)] {
        &self.validation
    }

    /// Mean greedy validation cost per task.
    pub fn validate(&self) -> Result<Vec<(VariantSpec, f64)>, ModelError> {
        self.validation
            .iter()
            .map(|(v, insts)| Ok((*v, mean_greedy_cost(&self.model, insts, self.mode)?)))
            .collect()
    }

    /// One optimizer step on a fresh batch; returns the mean surrogate loss
    /// and the gradient norm before clipping.
    pub fn train_batch(&mut self, epoch: usize, batch: usize, size: usize, lr: f64) -> Result<(f64, f64), ModelError> {
        if self.model.params.named().any(|(_, t)| t.data().iter().any(|x| !x.is_finite())) {
            return Err(self.non_finite(epoch, batch));
        }
        let cfg = &self.config;
        let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch, batch, usize::MAX));
        let variant = cfg.tasks[pick.gen_range(0..cfg.tasks.len())];
        let starts = cfg.n_starts.unwrap_or(cfg.n);
        let scale = 1.0 / (size * starts) as f64;
        let opts = RolloutOptions {
            n_starts: Some(starts),
            ..RolloutOptions::sample()
        };
        let model = &self.model;
        let (seed, n) = (cfg.seed, cfg.n);
        let results = map_indexed(self.mode, size, |i| {
            let s = derive_seed(seed, epoch, batch, i);
            let inst = generate_instance(n, variant, s);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            rng.set_stream(1);
            surrogate(model, &inst, &opts, None, scale, &mut rng)
        });
        let mut grads = self.model.params.zero_grads();
        let mut loss = 0.0;
        for r in results {
            let r = r?;
            loss += r.loss;
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += *b;
                }
            }
        }
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(self.non_finite(epoch, batch));
        }
        let norm = clip_grad_norm(&mut grads, self.config.grad_clip);
        self.opt.update(&mut self.model.params, &grads, lr);
        Ok((loss, norm))
    }

    /// Saves the current parameters as `nonfinite.ckpt` for inspection.
    fn non_finite(&self, epoch: usize, batch: usize) -> ModelError {
        if let Some(dir) = &self.out_dir {
            let _ = fs::create_dir_all(dir);
            let _ = self.model.save(&dir.join("nonfinite.ckpt"));
        }
        ModelError::NonFinite { epoch, batch }
    }

    fn write_checkpoint(&self, dir: &Path) -> Result<(), ModelError> {
        let split = |x: u64| [(x >> 24) as f32, (x & 0xff_ffff) as f32];
        let [e0, e1] = split(self.epoch as u64);
        let [s0, s1] = split(self.opt.step);
        let progress = Tensor::row(vec![e0, e1, s0, s1]);
        let adam = self.opt.state_entries(&self.model.params);
        let mut entries: Vec<(&str, &Tensor<f32>)> = self.model.params.named().collect();
        entries.extend(adam.iter().map(|(n, t)| (n.as_str(), t)));
        entries.push(("train.progress", &progress));
        let path = dir.join(checkpoint_name(self.epoch));
        atomic_write(&path, |w| Ok(write_checkpoint(w, &entries)?))?;
        atomic_write(&crate::model::sidecar_path(&path), |w| {
            Ok(w.write_all(self.model.config.to_sidecar().as_bytes())?)
        })
    }

    fn log(&self, rows: &[EpochMetrics]) -> Result<(), ModelError> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        let path = dir.join("metrics.csv");
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
        if fresh {
            writeln!(f, "{METRICS_HEADER}")?;
        }
        for r in rows {
            writeln!(f, "{}", r.csv_row())?;
        }
        Ok(())
    }

    /// Trains the remaining epochs. Epoch 0 (the untrained model) is
    /// validated and logged first when starting from scratch. `on_epoch`
    /// sees every logged row.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<Vec<EpochMetrics>, ModelError> {
        if let Some(dir) = &self.out_dir {
            fs::create_dir_all(dir)?;
        }
        let schedule = self.config.schedule();
        let mut all = Vec::new();
        if self.epoch == 0 {
            let rows: Vec<EpochMetrics> = self
                .validate()?
                .into_iter()
                .map(|(variant, mean_cost)| EpochMetrics {
                    epoch: 0,
                    variant,
                    mean_cost,
                    loss: f64::NAN,
                    lr: schedule.lr(1),
                })
                .collect();
            self.log(&rows)?;
            rows.iter().for_each(&mut on_epoch);
            all.extend(rows);
        }
        while self.epoch < self.config.epochs {
            let epoch = self.epoch + 1;
            let lr = schedule.lr(epoch);
            let batches = self.config.batches_per_epoch();
            let mut loss_sum = 0.0;
            for b in 0..batches {
                let size = self
                    .config
                    .batch_size
                    .min(self.config.instances_per_epoch - b * self.config.batch_size);
                loss_sum += self.train_batch(epoch, b, size, lr)?.0;
            }
            self.epoch = epoch;
            let loss = loss_sum / batches as f64;
            let rows: Vec<EpochMetrics> = self
                .validate()?
                .into_iter()
                .map(|(variant, mean_cost)| EpochMetrics {
                    epoch,
                    variant,
                    mean_cost,
                    loss,
                    lr,
                })
                .collect();
            if let Some(dir) = &self.out_dir {
                self.write_checkpoint(dir)?;
            }
            self.log(&rows)?;
            rows.iter().for_each(&mut on_epoch);
            all.extend(rows);
        }
        Ok(all)
    }
}
