//! Helpers shared by the model crate's integration and acceptance tests.
#![allow(dead_code)]

use cada_core::{generate_instance, Instance, VariantSpec};
use cada_model::train::{pomo_advantages, surrogate};
use cada_model::{Model, ModelConfig, RolloutOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Largest gradient magnitudes below this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
    /// Largest analytic gradient entry.
    pub max_abs_grad: f64,
}

/// First instance from `seeds` whose sampled trajectories have distinct
/// costs, so the surrogate gradient is not identically zero.
pub fn informative_instance(cfg: &ModelConfig, n: usize, v: VariantSpec, seeds: std::ops::Range<u64>) -> (Instance, u64) {
    let model = Model::<f64>::new(cfg.clone(), 1).unwrap();
    for s in seeds {
        let inst = generate_instance(n, v, s);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let r = model.rollout(&inst, &RolloutOptions::sample(), &mut rng).unwrap();
        let adv = pomo_advantages(&r.rewards);
        if adv.iter().any(|a| a.abs() > 1e-3) && r.log_probs.iter().any(|l| *l < -1e-3) {
            return (inst, s);
        }
    }
    panic!("no informative {v} instance in range");
}

/// Compares the surrogate gradient on one sampled rollout against central
/// differences, with the sampled trajectories and their advantages held
/// fixed. The model uses seed 1 and sampling uses `seed`.
pub fn grad_check(cfg: &ModelConfig, inst: &Instance, seed: u64) -> GradCheck {
    let mut model = Model::<f64>::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled = surrogate(&model, inst, &RolloutOptions::sample(), None, 1.0, &mut rng).unwrap();
    let adv = pomo_advantages(&sampled.rewards);
    let scale = 1.0 / adv.len() as f64;
    let replay = RolloutOptions {
        forced: Some(sampled.sequences.clone()),
        ..RolloutOptions::sample()
    };
    let loss = |m: &Model<f64>| {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        surrogate(m, inst, &replay, Some(&adv), scale, &mut r).unwrap()
    };
    let analytic = loss(&model);
    assert_eq!(analytic.sequences, sampled.sequences, "replay must reproduce the rollout");

    let ids: Vec<_> = model.params.ids().collect();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
        max_abs_grad: analytic.grads.iter().flatten().fold(0.0, |m, g| m.max(g.abs())),
    };
    for id in ids {
        for e in 0..model.params.get(id).numel() {
            let orig = model.params.get(id).data()[e];
            model.params.get_mut(id).data_mut()[e] = orig + FD_STEP;
            let up = loss(&model).loss;
            model.params.get_mut(id).data_mut()[e] = orig - FD_STEP;
            let down = loss(&model).loss;
            model.params.get_mut(id).data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let a = analytic.grads[id.index()][e];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(GRAD_FLOOR);
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = format!("{}[{e}]: analytic {a:e}, numeric {fd:e}", model.params.name(id));
            }
            out.checked += 1;
        }
    }
    out
}

/// Micro configuration used for gradient checks.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        d_h: 8,
        heads: 2,
        layers: 2,
        d_ff: 16,
        ..ModelConfig::default()
    }
}
