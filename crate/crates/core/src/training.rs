//! Deterministic training loop: decoupled-weight-decay adaptive-moment
//! updates on the density-weighted batch loss, seeded epoch shuffles,
//! append-only metrics, and checkpoints that resume to the exact same loss
//! trajectory.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EncodedSample;
use crate::density::DensityModel;
use crate::loss::{batch_loss_and_grads, batch_loss_weighted, LossConfig, LossError};
use crate::net::checkpoint::{
    read_container, save_checkpoint, write_container, CheckpointError, TRAINER_MAGIC,
};
use crate::net::{EITConfig, EITParams, ParamSet};

// Canonical moment hyperparameters; recorded in every trainer checkpoint.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training data is empty")]
    EmptyData,
    #[error("non-finite loss at step {step} (batch sample indices {batch_ids:?})")]
    NonFiniteLoss { step: u64, batch_ids: Vec<usize> },
    #[error("metrics sink failure: {0}")]
    SinkFailure(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] crate::net::ConfigError),
    #[error("bad trainer state: {0}")]
    BadState(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Global-norm clip threshold; off by default.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub loss: LossConfig,
}

impl TrainConfig {
    /// Published training recipe: lr 1e-3, weight decay 1e-5, 200 epochs,
    /// batch 768.
    pub fn full_defaults() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            epochs: 200,
            batch_size: 768,
            seed: 0,
            checkpoint_every: 10,
            grad_clip: None,
            loss: LossConfig::default(),
        }
    }

    pub fn desk_defaults() -> Self {
        Self {
            batch_size: 16,
            epochs: 50,
            ..Self::full_defaults()
        }
    }
}

/// One metrics line; appended after each epoch (and final step).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub mean_density_weight: f64,
    pub wall_time_s: f64,
}

pub trait MetricsSink {
    fn record(&mut self, rec: &MetricsRecord) -> Result<(), String>;
}

/// Appends line-delimited JSON records to a writer.
pub struct JsonlSink<W: Write>(pub W);

impl<W: Write> MetricsSink for JsonlSink<W> {
    fn record(&mut self, rec: &MetricsRecord) -> Result<(), String> {
        let line = serde_json::to_string(rec).map_err(|e| e.to_string())?;
        writeln!(self.0, "{line}").map_err(|e| e.to_string())
    }
}

/// Collects records in memory; used by tests.
#[derive(Default)]
pub struct VecSink(pub Vec<MetricsRecord>);

impl MetricsSink for VecSink {
    fn record(&mut self, rec: &MetricsRecord) -> Result<(), String> {
        self.0.push(rec.clone());
        Ok(())
    }
}

pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &MetricsRecord) -> Result<(), String> {
        Ok(())
    }
}

/// Complete mutable training state; checkpointing it and resuming
/// reproduces the exact subsequent trajectory.
pub struct TrainState {
    pub params: EITParams,
    pub moment1: ParamSet,
    pub moment2: ParamSet,
    pub adam_t: u64,
    pub epoch: usize,
    pub step: u64,
    pub best_val: f64,
    rng: ChaCha8Rng,
    /// Shuffled sample order of the current epoch plus a cursor into it.
    epoch_order: Vec<usize>,
    cursor: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainerMeta {
    train_config: TrainConfig,
    eit_config: EITConfig,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    adam_t: u64,
    epoch: usize,
    step: u64,
    /// None while no validation pass has run (JSON cannot carry infinity).
    best_val: Option<f64>,
    rng_seed: [u8; 32],
    rng_word_pos: u128,
    epoch_order: Vec<usize>,
    cursor: usize,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(config: TrainConfig, eit_config: &EITConfig) -> Result<Self, TrainError> {
        let params = EITParams::init(eit_config, config.seed)?;
        let moment1 = params.set.zeros_like();
        let moment2 = params.set.zeros_like();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            state: TrainState {
                params,
                moment1,
                moment2,
                adam_t: 0,
                epoch: 0,
                step: 0,
                best_val: f64::INFINITY,
                rng,
                epoch_order: Vec::new(),
                cursor: 0,
            },
        })
    }

    /// Runs `steps` optimizer steps over seeded-shuffled batches. The last
    /// partial batch of each epoch is kept.
    pub fn run_steps(
        &mut self,
        data: &[EncodedSample],
        weights: &[f64],
        steps: usize,
    ) -> Result<f64, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyData);
        }
        let mut last_loss = f64::NAN;
        for _ in 0..steps {
            let batch_ids = self.next_batch_ids(data.len());
            let batch: Vec<EncodedSample> =
                batch_ids.iter().map(|&i| data[i].clone()).collect();
            let batch_weights: Vec<f64> = batch_ids.iter().map(|&i| weights[i]).collect();
            last_loss = self.step_on(&batch, &batch_weights, &batch_ids)?;
        }
        Ok(last_loss)
    }

    fn next_batch_ids(&mut self, n: usize) -> Vec<usize> {
        if self.state.cursor >= self.state.epoch_order.len() {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut self.state.rng);
            self.state.epoch_order = order;
            self.state.cursor = 0;
            if self.state.step > 0 {
                self.state.epoch += 1;
            }
        }
        let end = (self.state.cursor + self.config.batch_size).min(self.state.epoch_order.len());
        let ids = self.state.epoch_order[self.state.cursor..end].to_vec();
        self.state.cursor = end;
        ids
    }

    /// One optimizer step on an explicit batch.
    fn step_on(
        &mut self,
        batch: &[EncodedSample],
        weights: &[f64],
        batch_ids: &[usize],
    ) -> Result<f64, TrainError> {
        let (loss, mut grads) = batch_loss_and_grads(
            &self.state.params,
            batch,
            weights,
            self.config.loss.alpha,
        )?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.state.step,
                batch_ids: batch_ids.to_vec(),
            });
        }
        if let Some(clip) = self.config.grad_clip {
            clip_global_norm(&mut grads, clip);
        }
        self.apply_adamw(&grads);
        self.state.step += 1;
        if !self.state.params.set.all_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.state.step,
                batch_ids: batch_ids.to_vec(),
            });
        }
        Ok(loss)
    }

    fn apply_adamw(&mut self, grads: &ParamSet) {
        self.state.adam_t += 1;
        let t = self.state.adam_t as i32;
        let lr = self.config.learning_rate;
        let wd = self.config.weight_decay;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for ((((_, p), (_, g)), (_, m)), (_, v)) in self
            .state
            .params
            .set
            .iter_mut()
            .zip(grads.iter())
            .zip(self.state.moment1.iter_mut())
            .zip(self.state.moment2.iter_mut())
        {
            for ((pv, gv), (mv, vv)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                // Decoupled weight decay: shrink the parameter directly.
                *pv -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * *pv);
            }
        }
    }

    /// Writes the full trainer state (params, moments, counters, RNG) to a
    /// versioned container.
    pub fn save_state(&self, path: &Path) -> Result<(), TrainError> {
        let meta = TrainerMeta {
            train_config: self.config.clone(),
            eit_config: self.state.params.config.clone(),
            adam_beta1: ADAM_BETA1,
            adam_beta2: ADAM_BETA2,
            adam_eps: ADAM_EPS,
            adam_t: self.state.adam_t,
            epoch: self.state.epoch,
            step: self.state.step,
            best_val: if self.state.best_val.is_finite() {
                Some(self.state.best_val)
            } else {
                None
            },
            rng_seed: self.state.rng.get_seed(),
            rng_word_pos: self.state.rng.get_word_pos(),
            epoch_order: self.state.epoch_order.clone(),
            cursor: self.state.cursor,
        };
        let meta_json = serde_json::to_string(&meta).expect("meta serializes");
        let mut tensors: Vec<(String, Array2<f64>)> = Vec::new();
        for (n, t) in self.state.params.set.iter() {
            tensors.push((format!("param.{n}"), t.clone()));
        }
        for (n, t) in self.state.moment1.iter() {
            tensors.push((format!("adam.m.{n}"), t.clone()));
        }
        for (n, t) in self.state.moment2.iter() {
            tensors.push((format!("adam.v.{n}"), t.clone()));
        }
        write_container(path, TRAINER_MAGIC, &meta_json, tensors.into_iter())?;
        Ok(())
    }

    pub fn load_state(path: &Path) -> Result<Self, TrainError> {
        let container = read_container(path, TRAINER_MAGIC)?;
        let meta: TrainerMeta = serde_json::from_str(&container.meta_json)
            .map_err(|e| TrainError::BadState(format!("bad meta block: {e}")))?;
        let mut params_set = ParamSet::default();
        let mut m1 = ParamSet::default();
        let mut m2 = ParamSet::default();
        for (name, tensor) in container.tensors {
            if let Some(n) = name.strip_prefix("param.") {
                params_set.insert(n, tensor);
            } else if let Some(n) = name.strip_prefix("adam.m.") {
                m1.insert(n, tensor);
            } else if let Some(n) = name.strip_prefix("adam.v.") {
                m2.insert(n, tensor);
            } else {
                return Err(TrainError::BadState(format!("unexpected tensor {name}")));
            }
        }
        let mut rng = ChaCha8Rng::from_seed(meta.rng_seed);
        rng.set_word_pos(meta.rng_word_pos);
        Ok(Self {
            config: meta.train_config,
            state: TrainState {
                params: EITParams {
                    config: meta.eit_config,
                    set: params_set,
                },
                moment1: m1,
                moment2: m2,
                adam_t: meta.adam_t,
                epoch: meta.epoch,
                step: meta.step,
                best_val: meta.best_val.unwrap_or(f64::INFINITY),
                rng,
                epoch_order: meta.epoch_order,
                cursor: meta.cursor,
            },
        })
    }
}

fn clip_global_norm(grads: &mut ParamSet, clip: f64) {
    let norm: f64 = grads
        .iter()
        .map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        let scale = clip / norm;
        for (_, g) in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// Full training run: epochs x ceil(|data|/batch) steps, per-epoch metrics,
/// periodic/best/final checkpoints under `ckpt_dir` when given.
pub fn train(
    config: &TrainConfig,
    eit_config: &EITConfig,
    data: &[EncodedSample],
    val_data: &[EncodedSample],
    density: &DensityModel,
    sink: &mut dyn MetricsSink,
    ckpt_dir: Option<&Path>,
) -> Result<Trainer, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let weights = crate::loss::sample_weights(data, density);
    let mean_weight = weights.iter().sum::<f64>() / weights.len() as f64;
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let mut trainer = Trainer::new(config.clone(), eit_config)?;
    let started = Instant::now();
    for epoch in 0..config.epochs {
        let train_loss = trainer.run_steps(data, &weights, steps_per_epoch)?;
        let val_loss = if val_data.is_empty() {
            None
        } else {
            Some(validate(
                &trainer.state.params,
                val_data,
                density,
                &config.loss,
            )?)
        };
        if let Some(v) = val_loss {
            if v < trainer.state.best_val {
                trainer.state.best_val = v;
                if let Some(dir) = ckpt_dir {
                    save_checkpoint(&trainer.state.params, &dir.join("checkpoint_best.ckpt"))?;
                }
            }
        }
        sink.record(&MetricsRecord {
            step: trainer.state.step,
            epoch,
            train_loss,
            val_loss,
            mean_density_weight: mean_weight,
            wall_time_s: started.elapsed().as_secs_f64(),
        })
        .map_err(TrainError::SinkFailure)?;
        if let Some(dir) = ckpt_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                trainer.save_state(&dir.join("trainer_state.ckpt"))?;
            }
        }
    }
    if let Some(dir) = ckpt_dir {
        save_checkpoint(&trainer.state.params, &dir.join("checkpoint_final.ckpt"))?;
        trainer.save_state(&dir.join("trainer_state.ckpt"))?;
    }
    Ok(trainer)
}

/// Batch loss over a validation set; no parameter mutation.
pub fn validate(
    params: &EITParams,
    val_data: &[EncodedSample],
    density: &DensityModel,
    loss_cfg: &LossConfig,
) -> Result<f64, TrainError> {
    let weights = crate::loss::sample_weights(val_data, density);
    Ok(batch_loss_weighted(params, val_data, &weights, loss_cfg.alpha)?)
}

/// Stable hash of all parameter bits; used by determinism checks.
pub fn param_hash(params: &EITParams) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for (name, tensor) in params.set.iter() {
        hasher.update(name.as_bytes());
        for v in tensor.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
