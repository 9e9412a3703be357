//! The session encoder: item embeddings, stacked weighted graph attention
//! layers, recurrent attention readout, and scoring against the item table.

mod layers;
mod params;
mod view;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use layers::{
    batch_loss, embed, forward, forward_logits, loss, readout, score, wgat_layer, HeadVars,
    NodeEncoder, Wgat, WgatOutput,
};
pub use params::{param_layout, ModelParams, ParamVars};
pub use view::GraphBatchView;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutMode {
    /// Attend over every node of the graph.
    Plain,
    /// Attend over the core (session) nodes only.
    Mask,
}

/// How the attention heads of a layer are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadCombine {
    /// Concatenate heads of width `d/K` on all but the last layer, average
    /// heads of width `d` on the last.
    ConcatThenMean,
    /// Average heads of width `d` on every layer.
    MeanAll,
}

/// Transform applied to the integer edge weight before it enters the
/// attention logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeWeight {
    Raw,
    Log1p,
}

impl EdgeWeight {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            EdgeWeight::Raw => w,
            EdgeWeight::Log1p => w.ln_1p(),
        }
    }
}

macro_rules! text_enum {
    ($ty:ty, $($name:literal => $variant:expr),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::Config(format!(
                        "unknown {} {s:?}",
                        stringify!($ty)
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant {
                    return f.write_str($name);
                })+
                unreachable!()
            }
        }
    };
}

text_enum!(ReadoutMode, "plain" => ReadoutMode::Plain, "mask" => ReadoutMode::Mask);
text_enum!(HeadCombine, "concat-then-mean" => HeadCombine::ConcatThenMean, "mean-all" => HeadCombine::MeanAll);
text_enum!(EdgeWeight, "raw" => EdgeWeight::Raw, "log1p" => EdgeWeight::Log1p);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width `d`.
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub readout_steps: usize,
    pub leaky_slope: f64,
    pub readout_mode: ReadoutMode,
    pub head_combine: HeadCombine,
    pub edge_weight: EdgeWeight,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 100,
            layers: 3,
            heads: 8,
            readout_steps: 3,
            leaky_slope: 0.2,
            readout_mode: ReadoutMode::Mask,
            head_combine: HeadCombine::ConcatThenMean,
            edge_weight: EdgeWeight::Raw,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 || self.heads == 0 {
            return bad(format!(
                "dim {} and heads {} must be positive",
                self.dim, self.heads
            ));
        }
        if self.layers == 0 || self.readout_steps == 0 {
            return bad("layers and readout_steps must be at least 1".into());
        }
        if self.concat_layers() > 0 && self.dim < self.heads {
            return bad(format!(
                "dim {} smaller than heads {}",
                self.dim, self.heads
            ));
        }
        if !self.leaky_slope.is_finite() {
            return bad(format!("leaky_slope {}", self.leaky_slope));
        }
        Ok(())
    }

    fn concat_layers(&self) -> usize {
        match self.head_combine {
            HeadCombine::ConcatThenMean => self.layers - 1,
            HeadCombine::MeanAll => 0,
        }
    }

    /// Whether layer `l` (0-based) averages its heads.
    pub fn is_mean_layer(&self, l: usize) -> bool {
        l >= self.concat_layers()
    }

    /// Output width of head `k` of layer `l`. Concatenated heads split `d`
    /// as evenly as possible, the first `d mod K` heads taking one extra unit.
    pub fn head_dim(&self, l: usize, k: usize) -> usize {
        if self.is_mean_layer(l) {
            self.dim
        } else {
            self.dim / self.heads + usize::from(k < self.dim % self.heads)
        }
    }
}
