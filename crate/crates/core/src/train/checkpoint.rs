use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::fgnn::{ModelConfig, ModelParams};
use crate::tensor::{load_archive, save_archive, Tensor};

pub const MODEL_STEM: &str = "model";
pub const OPTIMIZER_STEM: &str = "optimizer";

/// Model weights, optimizer moments and the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub train: TrainConfig,
    pub epochs_done: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    model: ModelConfig,
    num_items: usize,
    train: TrainConfig,
    epochs_done: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    step: u64,
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    let meta = ModelMeta {
        model: ckpt.params.config().clone(),
        num_items: ckpt.params.num_items(),
        train: ckpt.train.clone(),
        epochs_done: ckpt.epochs_done,
    };
    save_archive(
        dir,
        MODEL_STEM,
        ckpt.params.tensors().iter().map(|(n, t)| (n.clone(), t)),
        serde_json::to_value(meta)?,
    )?;
    let mut moments = Vec::new();
    for (k, (name, t)) in ckpt.params.tensors().iter().enumerate() {
        moments.push((
            format!("m/{name}"),
            Tensor::new(t.shape(), ckpt.adam.m[k].clone())?,
        ));
        moments.push((
            format!("v/{name}"),
            Tensor::new(t.shape(), ckpt.adam.v[k].clone())?,
        ));
    }
    save_archive(
        dir,
        OPTIMIZER_STEM,
        moments.iter().map(|(n, t)| (n.clone(), t)),
        serde_json::to_value(OptimizerMeta {
            step: ckpt.adam.step,
        })?,
    )
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let (manifest, tensors) = load_archive(dir, MODEL_STEM)?;
    let meta: ModelMeta = serde_json::from_value(manifest.meta)?;
    let params = ModelParams::from_tensors(&meta.model, meta.num_items, tensors)?;
    meta.train.validate()?;

    let (manifest, moments) = load_archive(dir, OPTIMIZER_STEM)?;
    let opt: OptimizerMeta = serde_json::from_value(manifest.meta)?;
    if moments.len() != 2 * params.tensors().len() {
        return Err(Error::Format(
            "optimizer state does not match the model".into(),
        ));
    }
    let mut adam = AdamState {
        step: opt.step,
        m: Vec::new(),
        v: Vec::new(),
    };
    for (pair, (name, t)) in moments.chunks(2).zip(params.tensors()) {
        let (mn, m) = &pair[0];
        let (vn, v) = &pair[1];
        if *mn != format!("m/{name}")
            || *vn != format!("v/{name}")
            || m.shape() != t.shape()
            || v.shape() != t.shape()
        {
            return Err(Error::Format(format!(
                "optimizer entry for {name} is malformed"
            )));
        }
        adam.m.push(m.data().to_vec());
        adam.v.push(v.data().to_vec());
    }
    Ok(Checkpoint {
        params,
        adam,
        train: meta.train,
        epochs_done: meta.epochs_done,
    })
}
