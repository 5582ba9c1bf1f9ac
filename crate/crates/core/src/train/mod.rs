//! Loss, optimizer, schedule, synthetic data, and the training loop.

pub mod data;
pub mod loss;
pub mod optim;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rstt_tensor::{Float, Graph, Var};

use crate::checkpoint::Checkpoint;
use crate::error::{config_err, Result, RsttError};
use crate::network::Rstt;
pub use data::{degrade, synth_clip, DataSource, FixedSample, MovingRect, Scene, SyntheticStream, TrainSample};
pub use loss::{charbonnier, charbonnier_value, CharbonnierMode};
pub use optim::{AdamState, AdamW};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub restart_period: u64,
    /// Linear ramp from `lr0 / warmup_iters` over the first iterations; 0 disables it.
    pub warmup_iters: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub charbonnier_eps: f64,
    pub charbonnier_mode: CharbonnierMode,
    pub batch_size: usize,
    pub max_iters: u64,
    /// Save a checkpoint every this many iterations; 0 saves only at the end.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            lr_min: 1e-7,
            restart_period: 30_000,
            warmup_iters: 0,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            charbonnier_eps: 1e-3,
            charbonnier_mode: CharbonnierMode::Elementwise,
            batch_size: 2,
            max_iters: 1000,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr0) {
            return Err(config_err(format!("need 0 <= lr_min < lr0, got {} and {}", self.lr_min, self.lr0)));
        }
        if self.restart_period == 0 {
            return Err(config_err("restart_period must be at least 1"));
        }
        if self.charbonnier_eps <= 0.0 || self.adam_eps <= 0.0 {
            return Err(config_err("epsilons must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err("betas must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate for `iteration`: the cosine schedule scaled by the warmup ramp.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let lr = cosine_restart_lr(iteration, self);
        if iteration < self.warmup_iters {
            lr * (iteration + 1) as f64 / self.warmup_iters as f64
        } else {
            lr
        }
    }

    pub fn adamw(&self) -> AdamW {
        AdamW { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps, weight_decay: self.weight_decay }
    }
}

/// Cosine annealing from `lr0` to `lr_min` over each period, restarting at
/// every multiple of the period.
pub fn cosine_restart_lr(iteration: u64, cfg: &TrainConfig) -> f64 {
    let phase = (iteration % cfg.restart_period) as f64 / cfg.restart_period as f64;
    cfg.lr_min + (cfg.lr0 - cfg.lr_min) * (1.0 + (std::f64::consts::PI * phase).cos()) / 2.0
}

/// One optimizer step: `iteration` counts from 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
}

pub struct Trainer<T> {
    pub model: Rstt<T>,
    pub config: TrainConfig,
    pub adam: AdamState<T>,
    /// Iterations completed.
    pub iteration: u64,
}

impl<T: Float> Trainer<T> {
    pub fn new(model: Rstt<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params().tensors());
        Ok(Trainer { model, config, adam, iteration: 0 })
    }

    /// Continue from saved weights and optimizer state.
    pub fn resume(ckpt: Checkpoint<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Rstt::from_params(ckpt.config, ckpt.params)?;
        let adam = ckpt.optimizer.ok_or_else(|| RsttError::Checkpoint("no optimizer state to resume from".into()))?;
        Ok(Trainer { model, config, adam, iteration: ckpt.iteration })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.model.config().clone(),
            iteration: self.iteration,
            params: self.model.params().clone(),
            optimizer: Some(self.adam.clone()),
        }
    }

    /// Mean loss over one batch, without updating anything.
    pub fn eval_loss(&self, data: &mut dyn DataSource<T>) -> Result<f64> {
        let g = Graph::inference();
        let vars = self.model.params().bind(&g);
        self.batch_loss(&g, &vars, data).map(|l| l.value().item().as_f64())
    }

    fn batch_loss(&self, g: &Graph<T>, vars: &[Var<T>], data: &mut dyn DataSource<T>) -> Result<Var<T>> {
        let mut total = None;
        for b in 0..self.config.batch_size {
            let s = data.sample(self.iteration, b)?;
            let out = self.model.forward_var(g, vars, s.input.tensor())?;
            let gt = g.constant(s.target.into_tensor());
            let l = charbonnier(g, &out, &gt, self.config.charbonnier_eps, self.config.charbonnier_mode)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(&t, &l)?,
            });
        }
        let total = total.expect("batch_size >= 1");
        Ok(g.scale(&total, 1.0 / self.config.batch_size as f64)?)
    }

    /// Forward, loss, backward, and one AdamW update. Weights are left
    /// untouched when the loss or any gradient is not finite.
    pub fn step(&mut self, data: &mut dyn DataSource<T>) -> Result<LossRecord> {
        let lr = self.config.lr_at(self.iteration);
        let g = Graph::new();
        let vars = self.model.params().bind(&g);
        let loss = self.batch_loss(&g, &vars, data)?;
        let value = loss.value().item().as_f64();
        if !value.is_finite() {
            return Err(RsttError::NonFinite { what: format!("loss at iteration {}", self.iteration) });
        }
        let mut grads = g.backward(&loss)?;
        let grads: Vec<_> = vars.iter().map(|v| grads.take(v)).collect();
        self.config.adamw().step(self.model.params_mut(), &grads, &mut self.adam, lr)?;
        let record = LossRecord { iteration: self.iteration, lr, loss: value };
        self.iteration += 1;
        Ok(record)
    }
}

/// Where `train_loop` writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct LoopOutput {
    pub dir: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.rstt";
pub const LOSS_FILE: &str = "loss.csv";

impl LoopOutput {
    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(CHECKPOINT_FILE))
    }
}

fn save<T: Float>(trainer: &Trainer<T>, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => trainer.checkpoint().save(p),
        None => Ok(()),
    }
}

/// Run until `trainer.config.max_iters` iterations are complete. Loss
/// records go to `on_record` and, with an output directory, to `loss.csv`;
/// checkpoints to `checkpoint.rstt`. On a non-finite loss the weights from
/// the last good iteration are saved before the error is returned.
pub fn train_loop<T: Float>(
    trainer: &mut Trainer<T>,
    data: &mut dyn DataSource<T>,
    out: &LoopOutput,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    let ckpt = out.checkpoint_path();
    let mut csv = match &out.dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(LOSS_FILE);
            let fresh = trainer.iteration == 0 || !path.exists();
            let file = fs::OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(path)?;
            let mut w = BufWriter::new(file);
            if fresh {
                writeln!(w, "iteration,lr,loss")?;
            }
            Some(w)
        }
        None => None,
    };
    let mut records = Vec::new();
    while trainer.iteration < trainer.config.max_iters {
        let rec = match trainer.step(data) {
            Ok(r) => r,
            Err(e) => {
                if matches!(e, RsttError::NonFinite { .. }) {
                    save(trainer, ckpt.as_deref())?;
                }
                return Err(e);
            }
        };
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{},{:e},{:e}", rec.iteration, rec.lr, rec.loss)?;
        }
        on_record(&rec);
        records.push(rec);
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.iteration.is_multiple_of(every) {
            save(trainer, ckpt.as_deref())?;
        }
    }
    if let Some(mut w) = csv {
        w.flush()?;
    }
    save(trainer, ckpt.as_deref())?;
    Ok(records)
}
