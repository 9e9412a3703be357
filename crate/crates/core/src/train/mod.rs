//! Optimization: initialization, Adam with a decaying learning rate, L2
//! regularization, shuffled mini-batches of freshly sampled BCS graphs, and
//! checkpoints.

mod adam;
mod checkpoint;

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MODEL_STEM, OPTIMIZER_STEM};

use crate::error::{Error, Result};
use crate::fgnn::{batch_loss, GraphBatchView, ModelConfig, ModelParams};
use crate::graphs::{sample_bcs, GlobalGraph, DEFAULT_SAMPLE_CAP};
use crate::ingest::Example;
use crate::rng;
use crate::tensor::Tape;

const TAG_SHUFFLE: u64 = 0x5348;
const TAG_TRAIN_BCS: u64 = 0x7462;
const TAG_EVAL_BCS: u64 = 0x6562;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Multiply by `decay_factor` every `decay_every` epochs.
    Step,
    /// Ramp linearly from `lr` down to `lr · decay_factor` over the first
    /// `decay_every` epochs, then hold.
    Linear,
}

impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(Schedule::Step),
            "linear" => Ok(Schedule::Linear),
            _ => Err(Error::Config(format!("unknown schedule {s:?}"))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Step => "step",
            Schedule::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_std: f64,
    pub n_hops: usize,
    pub sample_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            decay_factor: 0.1,
            decay_every: 3,
            schedule: Schedule::Step,
            batch_size: 100,
            l2: 1e-5,
            epochs: 10,
            seed: 0,
            init_std: 0.1,
            n_hops: 1,
            sample_cap: DEFAULT_SAMPLE_CAP,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("decay_factor", self.decay_factor),
            ("init_std", self.init_std),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config(format!(
                "l2 must be non-negative, got {}",
                self.l2
            )));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.sample_cap == 0 {
            return Err(Error::Config(
                "decay_every, batch_size and sample_cap must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            l2: self.l2,
            ..AdamConfig::default()
        }
    }
}

/// Learning rate for a 0-based epoch.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    match cfg.schedule {
        Schedule::Step => cfg.lr * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32),
        Schedule::Linear => {
            let progress = (epoch as f64 / cfg.decay_every as f64).min(1.0);
            cfg.lr * (1.0 - (1.0 - cfg.decay_factor) * progress)
        }
    }
}

pub fn init_params(
    model: &ModelConfig,
    num_items: usize,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    ModelParams::init(model, num_items, cfg.init_std, cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
    pub batches: usize,
}

/// Seed of the BCS graph drawn for training example `index` in `epoch`.
pub fn train_bcs_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    rng::derive_seed(seed, &[TAG_TRAIN_BCS, epoch as u64, index as u64])
}

/// Evaluation-time BCS seed. Depends on the example content only, so results
/// do not depend on where the example sits in the test set.
pub fn eval_bcs_seed(seed: u64, input: &[usize]) -> u64 {
    rng::content_seed(rng::derive_seed(seed, &[TAG_EVAL_BCS]), input)
}

/// Message-passing view of the BCS graph of `input`.
pub fn example_view(
    global: &GlobalGraph,
    input: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GraphBatchView> {
    GraphBatchView::from_bcs(&sample_bcs(
        global,
        input,
        cfg.n_hops,
        cfg.sample_cap,
        seed,
    )?)
}

/// Summed loss of `batch` and its gradient folded into the parameters'
/// gradient buffers.
pub fn accumulate_batch(
    params: &mut ModelParams,
    views: &[GraphBatchView],
    labels: &[usize],
) -> Result<f64> {
    let (loss, grads) = {
        let tape = Tape::new();
        let vars = params.bind(&tape);
        let loss = batch_loss(&tape, views, labels, &vars, params.config())?;
        let value = tape.item(loss);
        if !value.is_finite() {
            return Ok(value);
        }
        let g = tape.backward(loss)?;
        let grads: Vec<Option<Vec<f64>>> = vars
            .all
            .iter()
            .map(|&v| g.wrt(v).map(<[f64]>::to_vec))
            .collect();
        (value, grads)
    };
    for ((_, t), g) in params.tensors_mut().iter_mut().zip(grads) {
        if let Some(g) = g {
            t.accumulate_grad(&g)?;
        }
    }
    Ok(loss)
}

/// One pass over `examples` in a seeded shuffled order.
pub fn train_epoch(
    examples: &[Example],
    global: &GlobalGraph,
    params: &mut ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let lr = lr_schedule(cfg, epoch);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));

    let adam = cfg.adam();
    let mut total = 0.0;
    let mut batches = 0;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let views = chunk
            .iter()
            .map(|&i| {
                example_view(
                    global,
                    &examples[i].input,
                    cfg,
                    train_bcs_seed(cfg.seed, epoch, i),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = chunk.iter().map(|&i| examples[i].label).collect();
        params.zero_grad();
        let loss = accumulate_batch(params, &views, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss {loss} in epoch {epoch} batch {b}"
            )));
        }
        adam_step(params, state, lr, &adam)?;
        total += loss;
        batches += 1;
    }
    Ok(EpochMetrics {
        epoch,
        mean_loss: total / examples.len() as f64,
        lr,
        wall_seconds: start.elapsed().as_secs_f64(),
        batches,
    })
}

/// Trains from `ckpt.epochs_done` up to `cfg.epochs`, handing the state to
/// `on_epoch` after every epoch.
pub fn fit(
    examples: &[Example],
    global: &GlobalGraph,
    ckpt: &mut Checkpoint,
    mut on_epoch: impl FnMut(&EpochMetrics, &Checkpoint) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let cfg = ckpt.train.clone();
    cfg.validate()?;
    let mut history = Vec::new();
    for epoch in ckpt.epochs_done..cfg.epochs {
        let m = train_epoch(
            examples,
            global,
            &mut ckpt.params,
            &mut ckpt.adam,
            &cfg,
            epoch,
        )?;
        ckpt.epochs_done = epoch + 1;
        on_epoch(&m, ckpt)?;
        history.push(m);
    }
    Ok(history)
}

pub const METRICS_HEADER: &str = "epoch,mean_loss,lr,wall_seconds";

/// Appends one CSV row, writing the header first when the file is new.
pub fn append_metrics(path: &Path, m: &EpochMetrics) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    writeln!(
        f,
        "{},{},{},{:.3}",
        m.epoch, m.mean_loss, m.lr, m.wall_seconds
    )?;
    Ok(())
}
