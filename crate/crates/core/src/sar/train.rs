//! Flow-matching objective and the joint training loop.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SarContext, SarModel};
use crate::meshgraph::Dataset;
use crate::numcore::{rng, Adam, ParamGrads, PlateauSchedule, Tape, Var};
use crate::vae::{EpochLog, TrainLog};
use crate::{Error, Result};

/// Independent denoising times drawn per training sample.
pub const FM_DRAWS: usize = 4;
/// Noise added to coarser-scale inputs during training.
pub const INPUT_NOISE_STD: f64 = 0.01;
pub const SAR_LEARNING_RATE: f64 = 1e-3;

/// Flow-matching loss for scale `k` of one field (`target` is `n x F` in
/// sampler space). The path is `s_r = (1 - r) eps + r s_1` with target
/// velocity `s_1 - eps`; the loss averages `FM_DRAWS` draws of `(r, eps)`
/// that share one encoder and AR evaluation.
pub fn fm_loss(
    model: &SarModel,
    t: &Tape,
    ctx: &SarContext,
    target: &Array2<f64>,
    k: usize,
    seed: u64,
    input_noise: f64,
) -> Var {
    let h = &ctx.hierarchy;
    let mut r = rng::stream(seed, "fm_loss", k as u64);
    let y = model.encode_conditions_on(t, ctx);
    let coarse = (k > 1).then(|| {
        let prefix = h.prefix(k - 1);
        let mut v = target.select(Axis(0), &prefix);
        if input_noise > 0.0 {
            v += &rng::normal_matrix(&mut r, v.nrows(), v.ncols(), input_noise);
        }
        t.constant(v)
    });
    let z = model.ar_step_on(t, k, ctx, y, coarse);
    let s1 = target.select(Axis(0), h.partition(k));
    let terms: Vec<Var> = (0..FM_DRAWS)
        .map(|_| {
            let time: f64 = r.gen();
            let eps = rng::normal_matrix(&mut r, s1.nrows(), s1.ncols(), 1.0);
            let s_r = &eps * (1.0 - time) + &s1 * time;
            let w = &s1 - &eps;
            let u = model.sampler_velocity_on(t, t.constant(s_r), time, ctx, k, y, z);
            t.mse(u, t.constant(w))
        })
        .collect();
    let total = terms[1..].iter().fold(terms[0], |acc, &v| t.add(acc, v));
    t.scale(total, 1.0 / FM_DRAWS as f64)
}

/// Draws `(system, snapshot, k)` uniformly; `k` is 1-based.
pub fn draw_training_sample(r: &mut ChaCha8Rng, dataset: &Dataset, num_scales: usize) -> (usize, usize, usize) {
    let si = r.gen_range(0..dataset.systems.len());
    let snap = r.gen_range(0..dataset.systems[si].snapshots.len());
    let k = r.gen_range(1..=num_scales);
    (si, snap, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SarTrainConfig {
    pub learning_rate: f64,
    /// Samples per Adam step.
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub patience_epochs: usize,
    /// Hard cap on optimisation steps.
    pub max_steps: usize,
    pub floor_lr: f64,
    pub input_noise: f64,
    pub seed: u64,
}

impl Default for SarTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: SAR_LEARNING_RATE,
            batch_size: 8,
            steps_per_epoch: 100,
            patience_epochs: 5,
            max_steps: 5000,
            floor_lr: 1e-6,
            input_noise: INPUT_NOISE_STD,
            seed: 0,
        }
    }
}

/// Trains all SAR components jointly on a sampler-space dataset
/// (standardised latents in latent mode, normalized fields otherwise).
pub fn train_sar(model: &mut SarModel, dataset: &Dataset, cfg: &SarTrainConfig) -> Result<TrainLog> {
    if dataset.channels() != model.config.channels {
        return Err(Error::Config(format!(
            "dataset has {} channels, model generates {}",
            dataset.channels(),
            model.config.channels
        )));
    }
    if cfg.batch_size == 0 || cfg.steps_per_epoch == 0 {
        return Err(Error::Config("batch_size and steps_per_epoch must be positive".into()));
    }
    let schedule = PlateauSchedule {
        initial_lr: cfg.learning_rate,
        reduction_factor: 10.0,
        patience_epochs: cfg.patience_epochs,
        floor_lr: cfg.floor_lr,
    };
    schedule.validate().map_err(Error::Config)?;
    let contexts = dataset
        .systems
        .iter()
        .map(|s| SarContext::new(&s.graph, model.num_scales()))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(&model.params);
    let mut tracker = schedule.tracker();
    let mut log = TrainLog::default();
    let (mut epoch_total, mut epoch) = (0.0, 0usize);
    for step in 0..cfg.max_steps {
        let mut draw = rng::stream(cfg.seed, "sar_step", step as u64);
        let jobs: Vec<(usize, usize, usize, u64)> = (0..cfg.batch_size)
            .map(|_| {
                let (si, snap, k) = draw_training_sample(&mut draw, dataset, model.num_scales());
                (si, snap, k, draw.gen())
            })
            .collect();
        let m = &*model;
        let results: Vec<(f64, ParamGrads)> = jobs
            .par_iter()
            .map(|&(si, snap, k, seed)| {
                let t = Tape::with_params(&m.params);
                let target = &dataset.systems[si].snapshots[snap].values;
                let loss = fm_loss(m, &t, &contexts[si], target, k, seed, cfg.input_noise);
                let value = t.scalar_value(loss);
                let grads = t.backward(loss)?.param_grads(&m.params);
                Ok((value, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grads = ParamGrads::zeros_like(&model.params);
        let mut loss = 0.0;
        for (v, g) in &results {
            loss += v;
            grads.accumulate(g);
        }
        let scale = 1.0 / cfg.batch_size as f64;
        loss *= scale;
        grads.scale(scale);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Numerical(format!("SAR loss became {loss} at step {step}")));
        }
        grads.fill_missing(&model.params);
        adam.step(&mut model.params, &grads, tracker.lr())?;
        epoch_total += loss;
        if (step + 1) % cfg.steps_per_epoch == 0 {
            let epoch_loss = epoch_total / cfg.steps_per_epoch as f64;
            log.epochs.push(EpochLog {
                epoch,
                loss: epoch_loss,
                lr: tracker.lr(),
            });
            log::debug!("sar epoch {epoch}: loss {epoch_loss:.5e} lr {:.1e}", tracker.lr());
            epoch += 1;
            epoch_total = 0.0;
            if tracker.observe(epoch_loss).stop {
                log.converged = true;
                break;
            }
        }
    }
    Ok(log)
}
